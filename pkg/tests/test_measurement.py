import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevc_energy.measurement import (
    EnergyMeasurement,
    LogError,
    PowerLog,
    decoder_energy,
    differential_unit_energy,
    format_power_log,
    integrate_power_log,
    parse_power_log,
)


def dense_oracle(log, factor=1000):
    """Resample the linear interpolant on a grid `factor` times denser, then trapezoid."""
    segments = []
    for t0, t1 in zip(log.t[:-1], log.t[1:]):
        segments.append(np.linspace(t0, t1, factor + 1)[:-1])
    t = np.concatenate(segments + [log.t[-1:]])
    i = np.interp(t, log.t, log.i)
    return np.trapezoid(log.v0 * i - log.r_a * i * i, t)


def ramp_log(rng, n=40):
    t = np.cumsum(rng.uniform(0.001, 0.05, size=n))
    i = rng.uniform(0.45, 0.62, size=n)
    return PowerLog(t, i)


def test_zero_current():
    assert integrate_power_log(PowerLog.constant(0.0, 3.7)) == 0.0


def test_constant_current_closed_form():
    e = integrate_power_log(PowerLog.constant(0.5, 2.0, v0=5.2, r_a=0.1))
    assert e == pytest.approx(5.2 * 0.5 * 2 - 0.1 * 0.25 * 2, rel=1e-12)
    assert e == pytest.approx(5.15, rel=1e-12)


def test_constant_current_many_samples():
    log = PowerLog(np.linspace(0, 2, 401), np.full(401, 0.5))
    assert integrate_power_log(log) == pytest.approx(5.15, rel=1e-12)


def test_piecewise_linear_matches_dense_oracle(rng):
    for _ in range(20):
        log = ramp_log(rng)
        assert integrate_power_log(log) == pytest.approx(dense_oracle(log), rel=1e-9)


def test_additive_over_partition(rng):
    for _ in range(20):
        log = ramp_log(rng)
        k = int(rng.integers(1, len(log.t) - 1))
        a, b = log.split(k)
        assert integrate_power_log(a) + integrate_power_log(b) == pytest.approx(integrate_power_log(log), rel=1e-14)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 3.3])
def test_current_scaling(alpha):
    v0, r_a, i0, T = 5.2, 0.1, 0.4, 2.0
    e = integrate_power_log(PowerLog.constant(alpha * i0, T, v0, r_a))
    assert e == pytest.approx(alpha * v0 * i0 * T - alpha**2 * r_a * i0**2 * T, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 52.0), min_size=2, max_size=30))
def test_nonnegative_in_operating_region(currents):
    # v0 / r_a = 52 A bounds the physical region
    log = PowerLog(np.arange(len(currents), dtype=float), np.array(currents))
    assert integrate_power_log(log) >= -1e-12 * max(1.0, max(currents))


@pytest.mark.parametrize("t, i", [([0, 0], [1, 1]), ([1, 0.5], [1, 1]), ([0, 1], [1, -0.1]), ([0, 1], [np.nan, 1])])
def test_invalid_logs(t, i):
    with pytest.raises(LogError):
        PowerLog(np.array(t, float), np.array(i, float))


def test_too_few_samples():
    with pytest.raises(ValueError):
        integrate_power_log(PowerLog(np.array([0.0]), np.array([0.5])))


def test_decoder_energy():
    assert decoder_energy(EnergyMeasurement(4.9, 4.9)) == 0.0
    assert decoder_energy(EnergyMeasurement(5.15, 4.90)) == pytest.approx(0.25, rel=1e-12)
    with pytest.warns(UserWarning, match="exceeds"):
        assert decoder_energy(EnergyMeasurement(4.0, 4.5)) == pytest.approx(-0.5)


def test_differential_unit_energy():
    assert differential_unit_energy(0.02, 0.02, 17) == 0.0
    assert differential_unit_energy(0.030, 0.0045, 5) == pytest.approx(0.0051, rel=1e-12)
    assert differential_unit_energy(0.0245, 0.0075, 17) == pytest.approx(0.017 / 17, rel=1e-12)
    with pytest.raises(ValueError):
        differential_unit_energy(1.0, 0.5, 0)


def test_parse_log_header_and_comments():
    text = """# idle capture
v0_volts = 5.0
shunt_ohms: 0.2
time_s current_a
0.0 0.5   # start
1.0,0.5
"""
    log = parse_power_log(text.splitlines())
    assert (log.v0, log.r_a) == (5.0, 0.2)
    assert integrate_power_log(log) == pytest.approx(5.0 * 0.5 - 0.2 * 0.25, rel=1e-12)


def test_parse_log_defaults_and_overrides():
    log = parse_power_log(["0 0.5", "2 0.5"])
    assert (log.v0, log.r_a) == (5.2, 0.1)
    log = parse_power_log(["v0_volts = 3", "0 0.5", "2 0.5"], v0=5.2, r_a=0.0)
    assert (log.v0, log.r_a) == (5.2, 0.0)


@pytest.mark.parametrize("lines, match", [
    (["0 0.5"], "at least two"),
    (["0 0.5 1", "1 0.5"], "two columns"),
    (["0 a", "1 0.5"], "non-numeric"),
    (["foo = 1", "0 1", "1 1"], "unknown header"),
    (["1 0.5", "0 0.5"], "strictly increasing"),
    (["0 0.5", "v0_volts = 4", "1 0.5"], "after data"),
])
def test_parse_log_errors(lines, match):
    with pytest.raises(LogError, match=match):
        parse_power_log(lines)


def test_log_format_round_trip(rng):
    log = ramp_log(rng)
    back = parse_power_log(format_power_log(log).splitlines())
    assert np.array_equal(back.t, log.t) and np.array_equal(back.i, log.i)
    assert integrate_power_log(back) == integrate_power_log(log)
