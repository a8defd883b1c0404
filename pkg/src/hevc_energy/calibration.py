"""Recover energy constants from (features, measured energy) datasets."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .model import PARAM_NAMES, EnergyConstants, builtin_constants, estimate_accurate
from .trace import FeatureCounts, read_trace

N_PARAMS = len(PARAM_NAMES)
# Relative singular-value cutoff (after column equilibration) below which a
# direction counts as unidentifiable.
RANK_RTOL = 1e-10
CONDITION_WARN = 1e8
VALUE_FIT_LIMIT = 256


class CalibrationError(ValueError):
    """Dataset cannot determine the requested constants."""


class DatasetError(ValueError):
    """Malformed dataset file or invalid dataset rows."""


class UnidentifiableError(CalibrationError):
    def __init__(self, names, detail=""):
        self.names = list(names)
        msg = "unidentifiable constants: " + ", ".join(self.names)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class MeasurementPair:
    features: FeatureCounts
    energy: float

    def __post_init__(self):
        if not math.isfinite(self.energy):
            raise ValueError(f"energy must be finite, got {self.energy!r}")


@dataclass
class FitResult:
    constants: EnergyConstants
    residual_rms: float
    negative_flags: list = field(default_factory=list)
    condition_warning: str | None = None
    condition_number: float = float("nan")


@dataclass(frozen=True)
class SimulatorConfig:
    truth: EnergyConstants
    noise_rel: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.noise_rel >= 0:
            raise ValueError(f"noise_rel must be nonnegative, got {self.noise_rel!r}")


def design_vector(f: FeatureCounts) -> np.ndarray:
    """Regressor row whose dot product with the parameter vector is the accurate estimate.

    The transform-skip column carries ``-n_tsf`` so that the fitted TSF saving
    stays positive.
    """
    return np.concatenate([
        [1.0, f.n_slice],
        f.n_mode_depth.ravel().astype(float),
        [f.n_cbf, f.n_coeff, f.sum_log2_abs, f.n_nompm, -f.n_tsf],
    ])


def design_matrix(features: Sequence[FeatureCounts]) -> np.ndarray:
    return np.array([design_vector(f) for f in features]).reshape(len(features), N_PARAMS)


def _null_space_names(Xs, rtol):
    _, s, vt = np.linalg.svd(Xs, full_matrices=True)
    cutoff = rtol * s[0] if s.size and s[0] > 0 else 0.0
    rank = int(np.sum(s > cutoff))
    null = vt[rank:]
    if null.size == 0:
        return []
    weight = np.sqrt(np.sum(null**2, axis=0))
    return [PARAM_NAMES[j] for j in np.flatnonzero(weight > 1e-6)]


def fit_constants(dataset: Sequence[MeasurementPair], e_depth_avg=None) -> FitResult:
    """Ordinary least-squares estimate of all model constants.

    Columns are equilibrated to unit norm and solved through an SVD; the
    normal equations are never formed.  ``e_depth_avg`` fills the per-depth
    average row of the returned profile (default: mean of the fitted classes).
    """
    if not dataset:
        raise CalibrationError("empty dataset")
    for k, row in enumerate(dataset):
        problems = row.features.violations()
        if problems:
            raise DatasetError(f"row {k}: " + "; ".join(problems))
    X = design_matrix([row.features for row in dataset])
    y = np.array([row.energy for row in dataset], dtype=float)

    scale = np.linalg.norm(X, axis=0)
    empty = [PARAM_NAMES[j] for j in np.flatnonzero(scale == 0)]
    if empty:
        raise UnidentifiableError(empty, "feature never occurs in the dataset")
    Xs = X / scale
    if len(dataset) < N_PARAMS:
        names = _null_space_names(Xs, RANK_RTOL)
        raise UnidentifiableError(names, f"{len(dataset)} rows for {N_PARAMS} constants")
    s = np.linalg.svd(Xs, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise UnidentifiableError(_null_space_names(Xs, RANK_RTOL), "features are linearly dependent")
    cond = float(s[0] / s[-1])

    coef_scaled, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    coef = coef_scaled / scale
    resid = y - X @ coef
    constants = EnergyConstants.from_vector(coef, e_depth_avg=e_depth_avg)
    warning = None
    if cond > CONDITION_WARN:
        warning = f"design matrix poorly conditioned (condition number {cond:.3e})"
    return FitResult(
        constants=constants,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        negative_flags=[n for n, v in zip(PARAM_NAMES, coef) if v < 0],
        condition_warning=warning,
        condition_number=cond,
    )


class LineFit(NamedTuple):
    slope: float
    intercept: float


def _line(x, y, what):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise CalibrationError(f"{what}: need at least two distinct abscissa values")
    # Sorting makes the result independent of input order.
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    dx = x - x.mean()
    slope = float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))
    return LineFit(slope, float(y.mean() - slope * x.mean()))


def fit_coeff_energy(points) -> LineFit:
    """Straight line through (coefficient count, energy); the slope is the per-coefficient energy."""
    points = list(points)
    return _line([n for n, _ in points], [e for _, e in points], "coefficient fit")


def fit_value_energy(points, below=VALUE_FIT_LIMIT) -> LineFit:
    """Line of energy against log2|value|.

    Signed values are folded onto their magnitude.  Only magnitudes below
    ``below`` take part in the fit; pass ``below=None`` to use every point.
    """
    xs, ys = [], []
    for value, energy in points:
        mag = abs(int(value))
        if mag < 1:
            raise CalibrationError("coefficient value 0 has no logarithm")
        if below is None or mag < below:
            xs.append(math.log2(mag))
            ys.append(energy)
    return _line(xs, ys, "value fit")


def simulate(config: SimulatorConfig, features: Sequence[FeatureCounts]) -> list[MeasurementPair]:
    """Synthetic measurements: model energy times (1 + N(0, noise_rel)).

    Row ``k`` draws from a generator seeded by ``(seed, k)``, so any subset or
    parallel split of the rows reproduces the same energies.
    """
    out = []
    for k, f in enumerate(features):
        energy = estimate_accurate(f, config.truth).total
        if config.noise_rel > 0:
            eps = np.random.default_rng([config.seed, k]).normal(0.0, config.noise_rel)
            energy = energy * (1.0 + eps)
        out.append(MeasurementPair(f, float(energy)))
    return out


# Unit-count ranges for depths 1-3, sized so unit energy dominates the offset.
_UNIT_RANGE = ((20, 400), (80, 1600), (250, 5000))
# Share of rows per block after the mandatory spanning rows.
_BLOCK_SHARE = (("factorial", 0.62), ("cbf", 0.08), ("residual", 0.12), ("units", 0.18))


def _block_kinds(n_rows):
    kinds = [("units", j) for j in range(12)] + [("factorial", j) for j in range(5)]
    kinds += [("cbf", 1), ("cbf", 2), ("residual", 0), ("residual", 1)]
    kinds += [("units", 12 + j) for j in range(2)]
    quota = {name: int(round(share * n_rows)) for name, share in _BLOCK_SHARE}
    used = {name: sum(1 for k, _ in kinds if k == name) for name, _ in _BLOCK_SHARE}
    for name, _ in _BLOCK_SHARE:
        kinds += [(name, used[name] + j) for j in range(max(0, quota[name] - used[name]))]
    kinds += [("units", 10_000 + j) for j in range(max(0, n_rows - len(kinds)))]
    return kinds[:n_rows]


def spanning_corpus(n_rows: int, seed: int = 0, qp: int = 32) -> list[FeatureCounts]:
    """Feature sets that excite every model direction.

    The rows form four blocks, mirroring dedicated measurement series:

    * units: one class/depth cell at depths 1-3 with a random slice count;
    * factorial: one slice of depth-4 units, each block corner switching
      transform skip and non-MPM coding on for every unit or none;
    * cbf: depth-4 units with set CBFs and one-valued coefficients;
    * residual: depth-1 units carrying many coefficients of varying size.

    Counts respect the structural limits of real streams (at most three CBFs
    per unit, TSF only at depth 4, every set CBF backed by a coefficient).
    """
    if n_rows < N_PARAMS:
        raise ValueError(f"need at least {N_PARAMS} rows to span the model")
    rng = np.random.default_rng(seed)
    rows = []
    for kind, j in _block_kinds(n_rows):
        table = np.zeros((4, 4), dtype=np.int64)
        n_slice = 1
        n_cbf = n_coeff = n_nompm = n_tsf = 0
        sum_log2 = 0.0
        if kind == "units":
            cls, depth = j % 4, (j // 4) % 3
            lo, hi = _UNIT_RANGE[depth]
            if j % 5 == 4:
                lo, hi = 1, 8
            table[cls, depth] = rng.integers(lo, hi)
            if j % 3 == 0:
                n_slice = int(rng.integers(2, 64))
        elif kind == "factorial":
            units = int(rng.integers(20_000, 50_000))
            table[j % 4, 3] = units
            corner = (j + j // 4) % 4
            n_tsf = units * (corner // 2)
            n_nompm = units * (corner % 2)
        elif kind == "cbf":
            units = int(rng.integers(2_000, 20_000))
            table[j % 4, 3] = units
            n_cbf = int(rng.integers(0, 3 * units + 1)) if j % 2 else 3 * units
            n_coeff = n_cbf + int(rng.integers(0, units))
            if j >= 4:
                corner = (j + j // 4) % 4
                n_tsf = units * (corner // 2)
                n_nompm = units * (corner % 2)
        else:
            units = int(rng.integers(20, 200))
            table[j % 4, 0] = units
            n_cbf = 3 * units
            n_coeff = int(rng.integers(n_cbf, 1500 * units))
            if j % 2:
                sum_log2 = n_coeff * float(rng.uniform(0.5, 7.0))
        rows.append(FeatureCounts(n_slice, table, n_cbf, n_coeff, sum_log2, n_nompm, n_tsf, qp).validate())
    return rows


def features_from_row(obj, base_dir, strict):
    if "features" in obj:
        return FeatureCounts.from_json(obj["features"])
    if "trace" in obj:
        path = obj["trace"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return read_trace(path, strict=strict).counts()
    raise DatasetError("dataset row needs 'features' or 'trace'")


DATASET_HEADER = {"format": "hevc-energy-dataset", "version": 1}
ROW_FIELDS = {"features", "trace", "energy", "abs_value"}


@dataclass
class Dataset:
    pairs: list
    abs_values: list = field(default_factory=list)
    header: dict = field(default_factory=dict)


def parse_dataset(lines, base_dir=None, strict=True) -> Dataset:
    """Header object followed by one row per line.

    A row pairs either inline ``features`` or a ``trace`` file path with an
    ``energy`` in joules; value-sweep rows may add ``abs_value``.
    """
    header = None
    pairs, abs_values = [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: not JSON ({exc.msg})") from None
        if header is None:
            if obj.get("format") != DATASET_HEADER["format"]:
                raise DatasetError(f"line {lineno}: missing dataset header")
            header = obj
            continue
        unknown = set(obj) - ROW_FIELDS
        if unknown and strict:
            raise DatasetError(f"line {lineno}: unknown row fields {sorted(unknown)}")
        if "energy" not in obj:
            raise DatasetError(f"line {lineno}: row has no energy")
        try:
            f = features_from_row(obj, base_dir, strict)
            pairs.append(MeasurementPair(f, float(obj["energy"])))
        except OSError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        abs_values.append(obj.get("abs_value"))
    if header is None:
        raise DatasetError("dataset is empty")
    return Dataset(pairs, abs_values, header)


def read_dataset(path, strict=True) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh, base_dir=os.path.dirname(os.path.abspath(path)), strict=strict)


def format_dataset(pairs: Sequence[MeasurementPair], header_extra=None) -> str:
    header = dict(DATASET_HEADER)
    header.update(header_extra or {})
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps({"features": p.features.to_json(), "energy": p.energy}) for p in pairs)
    return "\n".join(lines) + "\n"


def single_sweep(pairs: Sequence[MeasurementPair]):
    """Name of the one design column that varies across rows, else None."""
    X = design_matrix([p.features for p in pairs])
    varying = [j for j in range(1, N_PARAMS) if np.ptp(X[:, j]) > 0]
    return PARAM_NAMES[varying[0]] if len(varying) == 1 else None


def fit_per_feature(data: Dataset, base: EnergyConstants | None = None, below=VALUE_FIT_LIMIT):
    """Fit one constant from a dedicated single-feature sweep.

    Coefficient-count sweeps go through :func:`fit_coeff_energy`; value sweeps
    with ``abs_value`` rows go through :func:`fit_value_energy` and divide the
    slope by the fixed coefficient count.  Other single-column sweeps use the
    same straight-line fit against that column.  Returns the base profile with
    the fitted constant replaced, the constant's name and the line fit.
    """
    base = base or builtin_constants()
    pairs = data.pairs
    if len(pairs) < 2:
        raise CalibrationError("a sweep needs at least two rows")
    values = data.abs_values
    if values and all(v is not None for v in values):
        counts = {p.features.n_coeff for p in pairs}
        if len(counts) != 1 or 0 in counts:
            raise CalibrationError("value sweep needs the same nonzero coefficient count in every row")
        line = fit_value_energy(zip(values, (p.energy for p in pairs)), below=below)
        name, estimate = "e_val", line.slope / counts.pop()
    else:
        name = single_sweep(pairs)
        if name is None:
            raise CalibrationError("per-feature calibration needs exactly one varying feature")
        X = design_matrix([p.features for p in pairs])
        column = X[:, PARAM_NAMES.index(name)]
        energies = [p.energy for p in pairs]
        if name == "e_coeff":
            line = fit_coeff_energy(zip(column, energies))
        else:
            line = _line(column, energies, f"{name} sweep")
        estimate = line.slope
    vec = base.to_vector()
    vec[PARAM_NAMES.index(name)] = estimate
    avg = base.e_depth_avg if not name.startswith("e_mode_depth") else None
    return EnergyConstants.from_vector(vec, e_depth_avg=avg), name, line
