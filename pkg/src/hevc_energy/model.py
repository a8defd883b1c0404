"""Linear decoding-energy model for HEVC intra streams.

All energies are in joules.  Model totals are evaluated with exact rational
accumulation and one final rounding, so a total never depends on the order in
which its terms are added.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .trace import DEPTHS, MODE_CLASSES, FeatureCounts

PROFILE_ENV = "HEVC_ENERGY_PROFILE"

TERM_NAMES = ("offset", "slice", "mode_depth", "cbf", "coeff", "val", "nompm", "tsf")

# Order of the fitted parameter vector; matches calibration.design_vector.
PARAM_NAMES = (
    ("e0", "e_slice")
    + tuple(f"e_mode_depth.{c}.{d}" for c in MODE_CLASSES for d in DEPTHS)
    + ("e_cbf", "e_coeff", "e_val", "e_nompm", "e_tsf")
)

ACCURATE_BOUND = 0.032
SIMPLIFIED_BOUND = 0.041
SIMPLIFIED_MIN_QP = 30
MODE_SPREAD_LIMIT = 0.04

# Measured constants as printed, in joules.
BUILTIN_PROFILE = """\
e0 = 1.579e-2
e_slice = 6.250e-4
e_mode_depth.pla.1 = 2.505e-4
e_mode_depth.pla.2 = 6.262e-5
e_mode_depth.pla.3 = 2.150e-5
e_mode_depth.pla.4 = 7.214e-6
e_mode_depth.dc.1 = 2.452e-4
e_mode_depth.dc.2 = 6.209e-5
e_mode_depth.dc.3 = 2.161e-5
e_mode_depth.dc.4 = 7.332e-6
e_mode_depth.hvd.1 = 2.512e-4
e_mode_depth.hvd.2 = 6.336e-5
e_mode_depth.hvd.3 = 2.199e-5
e_mode_depth.hvd.4 = 7.429e-6
e_mode_depth.ang.1 = 2.556e-4
e_mode_depth.ang.2 = 6.442e-5
e_mode_depth.ang.3 = 2.215e-5
e_mode_depth.ang.4 = 7.443e-6
e_depth_avg.1 = 2.550e-4
e_depth_avg.2 = 6.262e-5
e_depth_avg.3 = 2.150e-5
e_depth_avg.4 = 7.431e-6
e_cbf = 9.863e-7
e_coeff = 2.064e-7
e_val = 1.729e-7
e_nompm = 7.413e-7
e_tsf = 5.0916e-7
"""


class ProfileError(ValueError):
    """Malformed constants profile."""


class EnergyConstants:
    """Model coefficients in joules.

    ``e_mode_depth`` is indexed ``[class, depth - 1]`` and ``e_depth_avg`` by
    ``depth - 1``.
    """

    __slots__ = ("e0", "e_slice", "e_mode_depth", "e_depth_avg", "e_cbf", "e_coeff", "e_val", "e_nompm", "e_tsf")

    def __init__(self, e0, e_slice, e_mode_depth, e_depth_avg, e_cbf, e_coeff, e_val, e_nompm, e_tsf):
        e_mode_depth = np.array(e_mode_depth, dtype=float)
        e_depth_avg = np.array(e_depth_avg, dtype=float)
        if e_mode_depth.shape != (4, 4) or e_depth_avg.shape != (4,):
            raise ValueError("e_mode_depth must be 4x4 and e_depth_avg length 4")
        e_mode_depth.setflags(write=False)
        e_depth_avg.setflags(write=False)
        self.e0 = float(e0)
        self.e_slice = float(e_slice)
        self.e_mode_depth = e_mode_depth
        self.e_depth_avg = e_depth_avg
        self.e_cbf = float(e_cbf)
        self.e_coeff = float(e_coeff)
        self.e_val = float(e_val)
        self.e_nompm = float(e_nompm)
        self.e_tsf = float(e_tsf)

    def mode_depth(self, mode_class, depth):
        return float(self.e_mode_depth[MODE_CLASSES.index(mode_class), depth - 1])

    def to_vector(self) -> np.ndarray:
        """Fitted-parameter vector in :data:`PARAM_NAMES` order."""
        return np.concatenate([
            [self.e0, self.e_slice],
            self.e_mode_depth.ravel(),
            [self.e_cbf, self.e_coeff, self.e_val, self.e_nompm, self.e_tsf],
        ])

    @classmethod
    def from_vector(cls, vec, e_depth_avg=None):
        """Inverse of :meth:`to_vector`.

        Without an explicit ``e_depth_avg`` the per-depth average is the plain
        mean over the four mode classes.
        """
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(PARAM_NAMES),):
            raise ValueError(f"expected {len(PARAM_NAMES)} parameters, got shape {vec.shape}")
        table = vec[2:18].reshape(4, 4)
        if e_depth_avg is None:
            e_depth_avg = table.mean(axis=0)
        return cls(vec[0], vec[1], table, e_depth_avg, *vec[18:])

    def items(self):
        """(key, value) pairs in canonical profile order."""
        yield "e0", self.e0
        yield "e_slice", self.e_slice
        for i, c in enumerate(MODE_CLASSES):
            for d in DEPTHS:
                yield f"e_mode_depth.{c}.{d}", float(self.e_mode_depth[i, d - 1])
        for d in DEPTHS:
            yield f"e_depth_avg.{d}", float(self.e_depth_avg[d - 1])
        for key in ("e_cbf", "e_coeff", "e_val", "e_nompm", "e_tsf"):
            yield key, getattr(self, key)

    def negative_names(self):
        return [k for k, v in self.items() if v < 0]

    def __eq__(self, other):
        if not isinstance(other, EnergyConstants):
            return NotImplemented
        return dict(self.items()) == dict(other.items())

    def __repr__(self):
        return "EnergyConstants(" + ", ".join(f"{k}={v!r}" for k, v in self.items()) + ")"


def format_joules(value: float) -> str:
    """Shortest round-trip scientific representation of a float."""
    return np.format_float_scientific(value, unique=True, trim="-", exp_digits=2)


def parse_profile(text: str) -> EnergyConstants:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProfileError(f"line {lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if key in values:
            raise ProfileError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = float(value)
        except ValueError:
            raise ProfileError(f"line {lineno}: {value!r} is not a number") from None
        if not math.isfinite(values[key]):
            raise ProfileError(f"line {lineno}: {key} is not finite")
    return _from_mapping(values)


def _from_mapping(values):
    keys = _KEYS
    unknown = sorted(set(values) - set(keys))
    if unknown:
        raise ProfileError(f"unknown profile keys: {unknown}")
    missing = [k for k in keys if k not in values]
    if missing:
        raise ProfileError(f"missing profile keys: {missing}")
    table = [[values[f"e_mode_depth.{c}.{d}"] for d in DEPTHS] for c in MODE_CLASSES]
    avg = [values[f"e_depth_avg.{d}"] for d in DEPTHS]
    return EnergyConstants(
        values["e0"], values["e_slice"], table, avg,
        values["e_cbf"], values["e_coeff"], values["e_val"], values["e_nompm"], values["e_tsf"],
    )


def format_profile(constants: EnergyConstants, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.extend(f"{k} = {format_joules(v)}" for k, v in constants.items())
    return "\n".join(lines) + "\n"


def load_profile(path) -> EnergyConstants:
    with open(path, encoding="utf-8") as fh:
        return parse_profile(fh.read())


def save_profile(path, constants: EnergyConstants, comments=()):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_profile(constants, comments))


def builtin_constants() -> EnergyConstants:
    return _BUILTIN


def export_builtin_profile() -> str:
    """The embedded profile text, digits exactly as measured and printed."""
    return BUILTIN_PROFILE


def default_constants(path=None) -> EnergyConstants:
    """Profile at ``path``, else ``$HEVC_ENERGY_PROFILE``, else the builtin one."""
    path = path or os.environ.get(PROFILE_ENV)
    return load_profile(path) if path else builtin_constants()


_KEYS = [line.split("=")[0].strip() for line in BUILTIN_PROFILE.splitlines()]
_BUILTIN = parse_profile(BUILTIN_PROFILE)


@dataclass
class EstimateReport:
    total: float
    terms: dict
    model_kind: str
    warnings: list = field(default_factory=list)

    def to_json(self):
        return {"model": self.model_kind, "total": self.total, "terms": dict(self.terms), "warnings": list(self.warnings)}

    @classmethod
    def from_json(cls, obj):
        return cls(total=obj["total"], terms=dict(obj["terms"]), model_kind=obj["model"], warnings=list(obj["warnings"]))


def _exact(x):
    return Fraction(float(x)) if not isinstance(x, (int, np.integer)) else Fraction(int(x))


def _report(kind, exact_terms, warnings):
    total = sum(exact_terms.values(), Fraction(0))
    terms = {name: float(exact_terms.get(name, Fraction(0))) for name in TERM_NAMES}
    return EstimateReport(total=float(total), terms=terms, model_kind=kind, warnings=warnings)


def _common_terms(f, k):
    return {
        "offset": _exact(k.e0),
        "slice": _exact(k.e_slice) * f.n_slice,
        "cbf": _exact(k.e_cbf) * f.n_cbf,
        "coeff": _exact(k.e_coeff) * f.n_coeff,
    }


def _mode_depth_term(counts, energies):
    return sum((_exact(e) * int(n) for e, n in zip(np.ravel(energies), np.ravel(counts))), Fraction(0))


def estimate_accurate(f: FeatureCounts, k: EnergyConstants) -> EstimateReport:
    """Full model: every feature term, with the TSF saving subtracted."""
    terms = _common_terms(f, k)
    terms["mode_depth"] = _mode_depth_term(f.n_mode_depth, k.e_mode_depth)
    terms["val"] = _exact(k.e_val) * _exact(f.sum_log2_abs)
    terms["nompm"] = _exact(k.e_nompm) * f.n_nompm
    terms["tsf"] = -_exact(k.e_tsf) * f.n_tsf
    warnings = []
    negative = k.negative_names()
    if negative:
        warnings.append(f"constants profile has negative entries: {', '.join(negative)}")
    return _report("accurate", terms, warnings)


def estimate_simplified(f: FeatureCounts, k: EnergyConstants) -> EstimateReport:
    """Reduced model using per-depth average unit energies.

    Mode coding, transform skipping and coefficient values are dropped; the
    report says so whenever the input actually carries those features.
    """
    terms = _common_terms(f, k)
    terms["mode_depth"] = _mode_depth_term(f.n_depth, k.e_depth_avg)
    warnings = []
    if f.qp <= SIMPLIFIED_MIN_QP:
        warnings.append(f"simplified model invalid for QP ≤ {SIMPLIFIED_MIN_QP} (qp={f.qp})")
    if f.n_tsf > 0:
        warnings.append(f"simplified model ignores {f.n_tsf} transform-skip flag(s)")
    if f.n_nompm > 0:
        warnings.append(f"simplified model ignores {f.n_nompm} non-MPM mode(s)")
    return _report("simplified", terms, warnings)


def relative_error(measured: float, estimated: float) -> float:
    if not measured > 0:
        raise ValueError(f"measured energy must be positive, got {measured!r}")
    return abs(measured - estimated) / measured


def mode_spread(k: EnergyConstants) -> np.ndarray:
    """Largest relative deviation of a mode class from the depth average, per depth."""
    avg = k.e_depth_avg
    if np.any(avg == 0):
        raise ValueError("depth average is zero; relative spread undefined")
    return np.max(np.abs(k.e_mode_depth - avg) / np.abs(avg), axis=0)
