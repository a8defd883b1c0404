"""Per-TU feature traces and their aggregation into model feature counts.

A trace file is line-delimited JSON.  The first object is a stream header
carrying ``n_slice`` and ``qp``; each following object describes one transform
unit with the fields ``frame``, ``ctu``, ``depth``, ``mode``, ``mpm``, ``tsf``,
``cbf_y``, ``cbf_cb``, ``cbf_cr`` and ``coeffs``.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MODE_CLASSES = ("pla", "dc", "hvd", "ang")
DEPTHS = (1, 2, 3, 4)
HVD_MODES = frozenset({2, 10, 18, 26, 34})

RECORD_FIELDS = ("frame", "ctu", "depth", "mode", "mpm", "tsf", "cbf_y", "cbf_cb", "cbf_cr", "coeffs")
HEADER_FIELDS = ("n_slice", "qp")


class TraceError(ValueError):
    """Raised for malformed or structurally invalid traces."""

    def __init__(self, message, line=None, index=None):
        self.line = line
        self.index = index
        where = []
        if line is not None:
            where.append(f"line {line}")
        if index is not None:
            where.append(f"record {index}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


def classify_mode(intra_mode: int) -> str:
    """Map an HEVC intra mode (0-34) onto its energy class."""
    if isinstance(intra_mode, bool) or not isinstance(intra_mode, (int, np.integer)):
        raise TraceError(f"intra mode must be an integer, got {intra_mode!r}")
    if not 0 <= intra_mode <= 34:
        raise TraceError(f"intra mode {intra_mode} outside 0..34")
    if intra_mode == 0:
        return "pla"
    if intra_mode == 1:
        return "dc"
    if intra_mode in HVD_MODES:
        return "hvd"
    return "ang"


@dataclass(frozen=True)
class StreamHeader:
    n_slice: int
    qp: int

    def violations(self):
        out = []
        if not _is_int(self.n_slice) or self.n_slice < 1:
            out.append(f"n_slice must be a positive integer, got {self.n_slice!r}")
        if not _is_int(self.qp) or not 0 <= self.qp <= 51:
            out.append(f"qp must be an integer in 0..51, got {self.qp!r}")
        return out


@dataclass(frozen=True)
class TraceRecord:
    """Syntax features of one intra transform unit.

    ``cbf`` holds the (Y, Cb, Cr) coded block flags and ``coeffs`` the nonzero
    coefficient levels of all three color components.
    """

    frame_index: int
    ctu_index: int
    depth: int
    intra_mode: int
    coded_as_mpm: bool
    transform_skip: bool
    cbf: tuple = (False, False, False)
    coefficients: tuple = ()

    def to_json(self):
        return {
            "frame": self.frame_index,
            "ctu": self.ctu_index,
            "depth": self.depth,
            "mode": self.intra_mode,
            "mpm": self.coded_as_mpm,
            "tsf": self.transform_skip,
            "cbf_y": self.cbf[0],
            "cbf_cb": self.cbf[1],
            "cbf_cr": self.cbf[2],
            "coeffs": list(self.coefficients),
        }


def _is_int(x):
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def validate_record(record: TraceRecord) -> list[str]:
    """Return every structural rule the record breaks (empty list if none)."""
    out = []
    for name in ("frame_index", "ctu_index"):
        value = getattr(record, name)
        if not _is_int(value) or value < 0:
            out.append(f"{name} must be a nonnegative integer, got {value!r}")
    if not _is_int(record.depth) or record.depth not in DEPTHS:
        out.append(f"depth {record.depth!r} outside 1..4")
    if not _is_int(record.intra_mode) or not 0 <= record.intra_mode <= 34:
        out.append(f"intra mode {record.intra_mode!r} outside 0..34")
    if not isinstance(record.coded_as_mpm, bool):
        out.append(f"mpm flag must be boolean, got {record.coded_as_mpm!r}")
    if not isinstance(record.transform_skip, bool):
        out.append(f"tsf flag must be boolean, got {record.transform_skip!r}")
    elif record.transform_skip and record.depth != 4:
        out.append("TSF outside depth 4")
    if len(record.cbf) != 3 or not all(isinstance(f, bool) for f in record.cbf):
        out.append(f"cbf must be three booleans, got {record.cbf!r}")
    if not all(_is_int(c) for c in record.coefficients):
        out.append("coefficients must be integers")
    else:
        if any(c == 0 for c in record.coefficients):
            out.append("zero coefficient listed")
        if record.coefficients and not any(record.cbf):
            out.append("coefficients present but all CBFs false")
    return out


class FeatureCounts:
    """Aggregated feature counts consumed by the energy models.

    ``n_mode_depth`` is a 4x4 integer array indexed ``[class, depth - 1]`` with
    classes ordered as in :data:`MODE_CLASSES`.
    """

    __slots__ = ("n_slice", "n_mode_depth", "n_cbf", "n_coeff", "sum_log2_abs", "n_nompm", "n_tsf", "qp")

    def __init__(self, n_slice=0, n_mode_depth=None, n_cbf=0, n_coeff=0, sum_log2_abs=0.0, n_nompm=0, n_tsf=0, qp=32):
        if n_mode_depth is None:
            n_mode_depth = np.zeros((4, 4), dtype=np.int64)
        n_mode_depth = np.array(n_mode_depth, dtype=np.int64)
        if n_mode_depth.shape != (4, 4):
            raise ValueError(f"n_mode_depth must be 4x4, got shape {n_mode_depth.shape}")
        n_mode_depth.setflags(write=False)
        self.n_slice = int(n_slice)
        self.n_mode_depth = n_mode_depth
        self.n_cbf = int(n_cbf)
        self.n_coeff = int(n_coeff)
        self.sum_log2_abs = float(sum_log2_abs)
        self.n_nompm = int(n_nompm)
        self.n_tsf = int(n_tsf)
        self.qp = int(qp)

    @property
    def n_depth(self) -> np.ndarray:
        """TU count per depth, summed over mode classes."""
        return self.n_mode_depth.sum(axis=0)

    @property
    def n_units(self) -> int:
        return int(self.n_mode_depth.sum())

    def count(self, mode_class: str, depth: int) -> int:
        return int(self.n_mode_depth[MODE_CLASSES.index(mode_class), depth - 1])

    def violations(self):
        out = []
        scalars = {
            "n_slice": self.n_slice, "n_cbf": self.n_cbf, "n_coeff": self.n_coeff,
            "n_nompm": self.n_nompm, "n_tsf": self.n_tsf,
        }
        for name, value in scalars.items():
            if value < 0:
                out.append(f"{name} is negative")
        if (self.n_mode_depth < 0).any():
            out.append("n_mode_depth has negative entries")
        if not math.isfinite(self.sum_log2_abs) or self.sum_log2_abs < 0:
            out.append("sum_log2_abs must be finite and nonnegative")
        if self.n_tsf > self.n_depth[3]:
            out.append(f"n_tsf={self.n_tsf} exceeds the {self.n_depth[3]} depth-4 units")
        if self.n_nompm > self.n_units:
            out.append(f"n_nompm={self.n_nompm} exceeds the {self.n_units} units")
        if self.n_cbf > 3 * self.n_units:
            out.append(f"n_cbf={self.n_cbf} exceeds three flags per unit")
        if self.n_coeff == 0 and self.sum_log2_abs != 0:
            out.append("sum_log2_abs nonzero without coefficients")
        if not 0 <= self.qp <= 51:
            out.append(f"qp {self.qp} outside 0..51")
        return out

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValueError("invalid feature counts: " + "; ".join(problems))
        return self

    def __add__(self, other):
        if not isinstance(other, FeatureCounts):
            return NotImplemented
        if self.qp != other.qp:
            raise ValueError(f"cannot add feature counts with different qp ({self.qp} vs {other.qp})")
        return FeatureCounts(
            n_slice=self.n_slice + other.n_slice,
            n_mode_depth=self.n_mode_depth + other.n_mode_depth,
            n_cbf=self.n_cbf + other.n_cbf,
            n_coeff=self.n_coeff + other.n_coeff,
            sum_log2_abs=self.sum_log2_abs + other.sum_log2_abs,
            n_nompm=self.n_nompm + other.n_nompm,
            n_tsf=self.n_tsf + other.n_tsf,
            qp=self.qp,
        )

    def replace(self, **changes):
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(changes)
        return FeatureCounts(**fields)

    def __eq__(self, other):
        if not isinstance(other, FeatureCounts):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name)) for name in self.__slots__
        )

    def __repr__(self):
        return (
            f"FeatureCounts(n_slice={self.n_slice}, n_mode_depth={self.n_mode_depth.tolist()}, "
            f"n_cbf={self.n_cbf}, n_coeff={self.n_coeff}, sum_log2_abs={self.sum_log2_abs!r}, "
            f"n_nompm={self.n_nompm}, n_tsf={self.n_tsf}, qp={self.qp})"
        )

    def to_json(self):
        return {
            "n_slice": self.n_slice,
            "qp": self.qp,
            "n_mode_depth": {cls: self.n_mode_depth[i].tolist() for i, cls in enumerate(MODE_CLASSES)},
            "n_cbf": self.n_cbf,
            "n_coeff": self.n_coeff,
            "sum_log2_abs": self.sum_log2_abs,
            "n_nompm": self.n_nompm,
            "n_tsf": self.n_tsf,
        }

    @classmethod
    def from_json(cls, obj):
        expected = {"n_slice", "qp", "n_mode_depth", "n_cbf", "n_coeff", "sum_log2_abs", "n_nompm", "n_tsf"}
        unknown = set(obj) - expected
        if unknown:
            raise ValueError(f"unknown feature fields: {sorted(unknown)}")
        missing = expected - set(obj)
        if missing:
            raise ValueError(f"missing feature fields: {sorted(missing)}")
        table = obj["n_mode_depth"]
        if set(table) != set(MODE_CLASSES):
            raise ValueError(f"n_mode_depth must have keys {MODE_CLASSES}")
        rows = [table[c] for c in MODE_CLASSES]
        return cls(
            n_slice=obj["n_slice"], n_mode_depth=rows, n_cbf=obj["n_cbf"], n_coeff=obj["n_coeff"],
            sum_log2_abs=obj["sum_log2_abs"], n_nompm=obj["n_nompm"], n_tsf=obj["n_tsf"], qp=obj["qp"],
        )


def _sum_log2(magnitudes: Counter) -> float:
    # Exactly rounded sum over a magnitude histogram: the result only depends
    # on the multiset of |c|, never on record order or chunking.
    return math.fsum(n * math.log2(v) for v, n in sorted(magnitudes.items()) if v > 1)


class _Accumulator:
    def __init__(self):
        self.mode_depth = np.zeros((4, 4), dtype=np.int64)
        self.n_cbf = 0
        self.n_coeff = 0
        self.magnitudes = Counter()
        self.n_nompm = 0
        self.n_tsf = 0

    def add(self, record: TraceRecord):
        cls = MODE_CLASSES.index(classify_mode(record.intra_mode))
        self.mode_depth[cls, record.depth - 1] += 1
        self.n_cbf += sum(record.cbf)
        self.n_coeff += len(record.coefficients)
        self.magnitudes.update(abs(c) for c in record.coefficients)
        self.n_nompm += not record.coded_as_mpm
        self.n_tsf += record.transform_skip

    def merge(self, other: "_Accumulator"):
        self.mode_depth += other.mode_depth
        self.n_cbf += other.n_cbf
        self.n_coeff += other.n_coeff
        self.magnitudes.update(other.magnitudes)
        self.n_nompm += other.n_nompm
        self.n_tsf += other.n_tsf


def aggregate(header: StreamHeader, records: Iterable[TraceRecord], chunk_size=None) -> FeatureCounts:
    """Reduce a sequence of TU records to model feature counts.

    ``chunk_size`` splits the reduction into partial accumulators that are
    merged afterwards; the counts are identical for any chunking.
    """
    problems = header.violations()
    if problems:
        raise TraceError("invalid header: " + "; ".join(problems))
    total = _Accumulator()
    part = _Accumulator()
    for index, record in enumerate(records):
        problems = validate_record(record)
        if problems:
            raise TraceError(problems[0], index=index)
        part.add(record)
        if chunk_size and (index + 1) % chunk_size == 0:
            total.merge(part)
            part = _Accumulator()
    total.merge(part)
    return FeatureCounts(
        n_slice=header.n_slice,
        n_mode_depth=total.mode_depth,
        n_cbf=total.n_cbf,
        n_coeff=total.n_coeff,
        sum_log2_abs=_sum_log2(total.magnitudes),
        n_nompm=total.n_nompm,
        n_tsf=total.n_tsf,
        qp=header.qp,
    )


@dataclass
class Trace:
    header: StreamHeader
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def counts(self) -> FeatureCounts:
        return aggregate(self.header, self.records)


def _check_fields(obj, allowed, what, lineno, strict, notes):
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        msg = f"unknown {what} field(s) {unknown}"
        if strict:
            raise TraceError(msg, line=lineno)
        notes.append(f"line {lineno}: ignored {msg}")
        warnings.warn(f"line {lineno}: ignored {msg}", stacklevel=3)
    missing = [k for k in allowed if k not in obj]
    if missing:
        raise TraceError(f"missing {what} field(s) {missing}", line=lineno)


def parse_trace(lines: Iterable[str], strict: bool = True) -> Trace:
    """Parse trace text lines.  Blank lines are skipped."""
    header = None
    records = []
    notes = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceError(f"not a JSON object ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise TraceError("not a JSON object", line=lineno)
        if header is None:
            _check_fields(obj, HEADER_FIELDS, "header", lineno, strict, notes)
            header = StreamHeader(n_slice=obj["n_slice"], qp=obj["qp"])
            problems = header.violations()
            if problems:
                raise TraceError("; ".join(problems), line=lineno)
            continue
        _check_fields(obj, RECORD_FIELDS, "record", lineno, strict, notes)
        coeffs = obj["coeffs"]
        if not isinstance(coeffs, list):
            raise TraceError("coeffs must be a list", line=lineno)
        record = TraceRecord(
            frame_index=obj["frame"],
            ctu_index=obj["ctu"],
            depth=obj["depth"],
            intra_mode=obj["mode"],
            coded_as_mpm=obj["mpm"],
            transform_skip=obj["tsf"],
            cbf=(obj["cbf_y"], obj["cbf_cb"], obj["cbf_cr"]),
            coefficients=tuple(coeffs),
        )
        problems = validate_record(record)
        if problems:
            raise TraceError(problems[0], line=lineno, index=len(records))
        records.append(record)
    if header is None:
        raise TraceError("trace has no header object")
    return Trace(header, records, notes)


def read_trace(path, strict: bool = True) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh, strict=strict)


def format_trace(header: StreamHeader, records: Sequence[TraceRecord]) -> str:
    lines = [json.dumps({"n_slice": header.n_slice, "qp": header.qp})]
    lines.extend(json.dumps(r.to_json()) for r in records)
    return "\n".join(lines) + "\n"


def write_trace(path, header: StreamHeader, records: Sequence[TraceRecord]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trace(header, records))


def random_trace(rng, n_ctus=18, n_slice=1, qp=32, n_frames=1):
    """Synthetic intra trace with a random quadtree per CTU.

    Each CTU holds four depth-1 units that split recursively down to depth 4.
    Low QP produces more set CBFs and larger coefficient levels.  Intended for
    demos and tests; nothing here claims to mimic a real encoder.
    """
    header = StreamHeader(n_slice=n_slice, qp=qp)
    p_cbf = min(0.95, max(0.05, (51 - qp) / 45))
    mean_level = max(1.0, 2.0 ** ((40 - qp) / 6))
    records = []

    def leaf(frame, ctu, depth):
        mode = int(rng.choice([0, 1, int(rng.integers(2, 35))], p=[0.3, 0.2, 0.5]))
        cbf = tuple(bool(rng.random() < p) for p in (p_cbf, p_cbf / 2, p_cbf / 2))
        coeffs = []
        for flag in cbf:
            if flag:
                n = 1 + int(rng.geometric(0.3 if depth == 4 else 0.08))
                mags = rng.geometric(1 / mean_level, size=n)
                signs = rng.choice([-1, 1], size=n)
                coeffs.extend(int(m * s) for m, s in zip(mags, signs))
        records.append(TraceRecord(
            frame_index=frame, ctu_index=ctu, depth=depth, intra_mode=mode,
            coded_as_mpm=bool(rng.random() < 0.6),
            transform_skip=bool(depth == 4 and rng.random() < 0.15),
            cbf=cbf, coefficients=tuple(coeffs),
        ))

    def split(frame, ctu, depth):
        if depth < 4 and rng.random() < 0.45:
            for _ in range(4):
                split(frame, ctu, depth + 1)
        else:
            leaf(frame, ctu, depth)

    for frame in range(n_frames):
        for ctu in range(n_ctus):
            for _ in range(4):
                split(frame, ctu, 1)
    return header, records
