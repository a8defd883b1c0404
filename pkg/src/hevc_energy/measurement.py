"""Current-log integration and decoder energy bookkeeping.

The supply delivers a constant voltage ``v0`` and the ampere meter's shunt
``r_a`` drops ``i * r_a``, so the device receives ``(v0 - i * r_a) * i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_V0 = 5.2
DEFAULT_SHUNT = 0.1


class LogError(ValueError):
    """Invalid or unparsable power log."""


@dataclass(frozen=True)
class PowerLog:
    t: np.ndarray
    i: np.ndarray
    v0: float = DEFAULT_V0
    r_a: float = DEFAULT_SHUNT

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        i = np.asarray(self.i, dtype=float)
        if t.ndim != 1 or t.shape != i.shape:
            raise LogError("time and current must be 1-D arrays of equal length")
        if not (np.isfinite(t).all() and np.isfinite(i).all()):
            raise LogError("log contains non-finite samples")
        if np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise LogError(f"timestamps not strictly increasing at sample {k}")
        if np.any(i < 0):
            raise LogError("negative current sample")
        if not self.v0 > 0:
            raise LogError(f"v0 must be positive, got {self.v0}")
        if not self.r_a >= 0:
            raise LogError(f"shunt resistance must be nonnegative, got {self.r_a}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "i", i)

    @classmethod
    def constant(cls, current, duration, v0=DEFAULT_V0, r_a=DEFAULT_SHUNT):
        return cls(np.array([0.0, duration]), np.array([current, current]), v0, r_a)

    def split(self, k):
        """Two logs sharing sample ``k`` as their common boundary."""
        if not 0 < k < len(self.t) - 1:
            raise ValueError("split index must be interior")
        return (
            PowerLog(self.t[: k + 1], self.i[: k + 1], self.v0, self.r_a),
            PowerLog(self.t[k:], self.i[k:], self.v0, self.r_a),
        )


def charge_and_square(log: PowerLog):
    """Integrals of i and i^2 over the piecewise-linear current.

    The first is the trapezoidal rule; the second integrates the square of the
    same linear interpolant exactly, so both terms describe one current curve.
    """
    if len(log.t) < 2:
        raise ValueError("need at least two samples to integrate")
    h = np.diff(log.t)
    a, b = log.i[:-1], log.i[1:]
    charge = float(np.sum(h * (a + b) / 2))
    square = float(np.sum(h * (a * a + a * b + b * b) / 3))
    return charge, square


def integrate_power_log(log: PowerLog) -> float:
    """Energy delivered to the device over the log window, in joules."""
    charge, square = charge_and_square(log)
    return log.v0 * charge - log.r_a * square


@dataclass(frozen=True)
class EnergyMeasurement:
    e_all: float
    e_idle: float


def decoder_energy(m: EnergyMeasurement) -> float:
    """Decoder-only energy; negative results are returned with a warning."""
    e_dec = m.e_all - m.e_idle
    if e_dec < 0:
        warnings.warn(
            f"idle energy {m.e_idle:.6e} J exceeds total {m.e_all:.6e} J; measurement fault?",
            stacklevel=2,
        )
    return e_dec


def differential_unit_energy(e_test: float, e_ref: float, n_units: int) -> float:
    """Per-unit energy from a test stream minus its one-CTU reference stream."""
    if n_units < 1:
        raise ValueError(f"n_units must be at least 1, got {n_units}")
    return (e_test - e_ref) / n_units


def parse_power_log(lines, v0=None, r_a=None) -> PowerLog:
    """Parse a two-column ``time_s current_a`` table.

    Header lines of the form ``v0_volts = 5.2`` / ``shunt_ohms = 0.1`` set the
    log's electrical parameters; an optional ``time_s current_a`` column
    header is accepted, and ``#`` starts a comment.  Explicit ``v0``/``r_a``
    arguments override the file.
    """
    params = {}
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line or ":" in line:
            key, _, value = line.replace(":", "=", 1).partition("=")
            key = key.strip()
            if rows:
                raise LogError(f"line {lineno}: header entry {key!r} after data")
            if key not in ("v0_volts", "shunt_ohms"):
                raise LogError(f"line {lineno}: unknown header key {key!r}")
            try:
                params[key] = float(value)
            except ValueError:
                raise LogError(f"line {lineno}: bad value for {key}") from None
            continue
        cols = line.replace(",", " ").split()
        if cols == ["time_s", "current_a"]:
            continue
        if len(cols) != 2:
            raise LogError(f"line {lineno}: expected two columns, got {len(cols)}")
        try:
            rows.append((float(cols[0]), float(cols[1])))
        except ValueError:
            raise LogError(f"line {lineno}: non-numeric sample") from None
    if len(rows) < 2:
        raise LogError("log needs at least two samples")
    data = np.array(rows)
    try:
        return PowerLog(
            data[:, 0], data[:, 1],
            v0=v0 if v0 is not None else params.get("v0_volts", DEFAULT_V0),
            r_a=r_a if r_a is not None else params.get("shunt_ohms", DEFAULT_SHUNT),
        )
    except LogError as exc:
        raise LogError(f"invalid log: {exc}") from None


def read_power_log(path, v0=None, r_a=None) -> PowerLog:
    with open(path, encoding="utf-8") as fh:
        return parse_power_log(fh, v0=v0, r_a=r_a)


def format_power_log(log: PowerLog) -> str:
    lines = [f"v0_volts = {log.v0!r}", f"shunt_ohms = {log.r_a!r}", "time_s current_a"]
    lines.extend(f"{t!r} {i!r}" for t, i in zip(log.t.tolist(), log.i.tolist()))
    return "\n".join(lines) + "\n"
