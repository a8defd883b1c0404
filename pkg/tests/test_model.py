import math

import numpy as np
import pytest

from hevc_energy.model import (
    PARAM_NAMES,
    EnergyConstants,
    EstimateReport,
    ProfileError,
    builtin_constants,
    default_constants,
    estimate_accurate,
    estimate_simplified,
    export_builtin_profile,
    format_profile,
    mode_spread,
    parse_profile,
    relative_error,
)
from hevc_energy.trace import FeatureCounts

from conftest import random_counts

K = builtin_constants()


def counts(**kw):
    table = np.zeros((4, 4), dtype=int)
    for (cls, depth), n in kw.pop("units", {}).items():
        table[("pla", "dc", "hvd", "ang").index(cls), depth - 1] = n
    return FeatureCounts(n_mode_depth=table, **kw).validate()


def oracle_accurate(f, k):
    terms = [k.e0, k.e_slice * f.n_slice]
    for c in range(4):
        for d in range(4):
            terms.append(float(k.e_mode_depth[c, d]) * int(f.n_mode_depth[c, d]))
    terms += [k.e_cbf * f.n_cbf, k.e_coeff * f.n_coeff, k.e_val * f.sum_log2_abs,
              k.e_nompm * f.n_nompm, -k.e_tsf * f.n_tsf]
    return math.fsum(terms)


def test_builtin_values_from_table():
    assert K.mode_depth("pla", 1) == 2.505e-4
    assert K.e_depth_avg[3] == 7.431e-6
    assert K.e_cbf == 9.863e-7
    assert (K.e0, K.e_slice, K.e_tsf, K.e_nompm, K.e_coeff, K.e_val) == (
        1.579e-2, 6.250e-4, 5.0916e-7, 7.413e-7, 2.064e-7, 1.729e-7)


def test_builtin_table_decreases_with_depth():
    assert np.all(np.diff(K.e_mode_depth, axis=1) < 0)
    assert K.negative_names() == []


def test_accurate_single_planar_tu():
    f = counts(n_slice=1, units={("pla", 1): 1})
    r = estimate_accurate(f, K)
    assert r.total == pytest.approx(1.66655e-2, rel=1e-12)
    assert r.model_kind == "accurate"
    assert r.terms["mode_depth"] == 2.505e-4


def test_accurate_offset_only():
    assert estimate_accurate(FeatureCounts(), K).total == 1.579e-2


def test_accurate_tsf_term_negative():
    f = counts(n_slice=1, units={("dc", 4): 3}, n_tsf=3)
    r = estimate_accurate(f, K)
    assert r.terms["tsf"] == pytest.approx(-3 * 5.0916e-7, rel=1e-15)


def test_accurate_matches_oracle(rng):
    for _ in range(300):
        f = random_counts(rng)
        assert estimate_accurate(f, K).total == pytest.approx(oracle_accurate(f, K), rel=1e-12)


def test_breakdown_sums_to_total(rng):
    for _ in range(200):
        f = random_counts(rng)
        for r in (estimate_accurate(f, K), estimate_simplified(f, K)):
            assert math.fsum(r.terms.values()) == pytest.approx(r.total, rel=1e-12)


def test_simplified_example():
    f = counts(n_slice=1, units={("hvd", 2): 4}, n_cbf=2, n_coeff=10, sum_log2_abs=0.0, qp=45)
    r = estimate_simplified(f, K)
    # 1.579e-2 + 6.250e-4 + 4 * 6.262e-5 + 2 * 9.863e-7 + 10 * 2.064e-7
    assert r.total == pytest.approx(1.66695166e-2, rel=1e-12)
    assert f"{r.total:.7e}" == "1.6669517e-02"
    assert r.warnings == []


def test_simplified_offset_only():
    assert estimate_simplified(FeatureCounts(qp=40), K).total == 1.579e-2


def test_simplified_qp_warning():
    r = estimate_simplified(FeatureCounts(qp=10), K)
    assert any("simplified model invalid for QP ≤ 30" in w for w in r.warnings)
    assert not estimate_simplified(FeatureCounts(qp=31), K).warnings
    assert estimate_simplified(FeatureCounts(qp=30), K).warnings


def test_simplified_flags_ignored_terms():
    f = counts(n_slice=1, units={("pla", 4): 5}, n_tsf=2, n_nompm=1, qp=40)
    w = estimate_simplified(f, K).warnings
    assert any("transform-skip" in s for s in w) and any("non-MPM" in s for s in w)


def test_warnings_do_not_change_numbers():
    f = counts(n_slice=2, units={("pla", 2): 7})
    assert estimate_simplified(f.replace(qp=10), K).total == estimate_simplified(f.replace(qp=45), K).total


def _flat_profile(k):
    table = np.tile(k.e_depth_avg, (4, 1))
    return EnergyConstants(k.e0, k.e_slice, table, k.e_depth_avg, k.e_cbf, k.e_coeff, k.e_val, k.e_nompm, k.e_tsf)


def test_simplified_equals_accurate_on_flat_profile(rng):
    flat = _flat_profile(K)
    for _ in range(200):
        f = random_counts(rng).replace(n_tsf=0, n_nompm=0, sum_log2_abs=0.0)
        assert estimate_simplified(f, flat).total == estimate_accurate(f, flat).total


def test_linearity(rng):
    for _ in range(200):
        qp = int(rng.integers(0, 52))
        f1, f2 = random_counts(rng, qp), random_counts(rng, qp)
        lhs = estimate_accurate(f1 + f2, K).total + K.e0
        rhs = estimate_accurate(f1, K).total + estimate_accurate(f2, K).total
        assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("field", ["n_slice", "n_cbf", "n_coeff", "n_nompm", "sum_log2_abs", "unit", "n_tsf"])
def test_monotonicity(rng, field):
    for _ in range(50):
        f = random_counts(rng)
        if field == "unit":
            table = f.n_mode_depth.copy()
            table[rng.integers(4), 3] += 1
            g = f.replace(n_mode_depth=table)
        elif field == "n_tsf":
            table = f.n_mode_depth.copy()
            table[0, 3] += 1
            g = f.replace(n_mode_depth=table)
            f, g = g, g.replace(n_tsf=g.n_tsf + 1)
        else:
            g = f.replace(**{field: getattr(f, field) + 1})
        before, after = estimate_accurate(f, K).total, estimate_accurate(g, K).total
        if field == "n_tsf":
            assert after < before
        else:
            assert after >= before


@pytest.mark.parametrize("measured, estimated, expected", [(1.0, 1.0, 0.0), (0.5, 0.516, 0.032), (1.0, 0.0, 1.0)])
def test_relative_error(measured, estimated, expected):
    assert relative_error(measured, estimated) == pytest.approx(expected, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("measured", [0.0, -1.0])
def test_relative_error_domain(measured):
    with pytest.raises(ValueError):
        relative_error(measured, 1.0)


def test_mode_spread_builtin():
    spread = mode_spread(K)
    # direct evaluation over the table values
    expected = [
        max(abs(v - a) / a for v in col)
        for col, a in zip(np.array([[2.505e-4, 6.262e-5, 2.150e-5, 7.214e-6],
                                    [2.452e-4, 6.209e-5, 2.161e-5, 7.332e-6],
                                    [2.512e-4, 6.336e-5, 2.199e-5, 7.429e-6],
                                    [2.556e-4, 6.442e-5, 2.215e-5, 7.443e-6]]).T,
                          [2.550e-4, 6.262e-5, 2.150e-5, 7.431e-6])
    ]
    assert spread == pytest.approx(expected, rel=1e-12)
    assert spread[0] == pytest.approx(abs(2.452e-4 - 2.550e-4) / 2.550e-4, rel=1e-12)
    assert spread[0] == pytest.approx(0.0384, abs=5e-5)
    assert np.all(spread < 0.04)


def test_mode_spread_flat_and_zero():
    assert np.array_equal(mode_spread(_flat_profile(K)), np.zeros(4))
    k = EnergyConstants(0, 0, np.zeros((4, 4)), np.zeros(4), 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        mode_spread(k)


def test_profile_golden(data_dir):
    assert export_builtin_profile() == (data_dir / "builtin_profile.golden").read_text()
    assert parse_profile((data_dir / "builtin_profile.golden").read_text()) == K


def test_profile_round_trip(rng):
    for _ in range(20):
        vec = rng.uniform(-1e-3, 1e-2, size=len(PARAM_NAMES))
        k = EnergyConstants.from_vector(vec)
        assert parse_profile(format_profile(k, comments=["fitted"])) == k


@pytest.mark.parametrize("text, match", [
    ("bogus = 1\n", "unknown profile keys"),
    ("e0 = 1\n", "missing profile keys"),
    ("e0 = x\n", "not a number"),
    ("e0\n", "key = value"),
])
def test_profile_errors(text, match):
    if match == "unknown profile keys":
        text = export_builtin_profile() + text
    with pytest.raises(ProfileError, match=match):
        parse_profile(text)


def test_default_constants_env(tmp_path, monkeypatch):
    k = EnergyConstants.from_vector(K.to_vector() * 2)
    path = tmp_path / "p.profile"
    path.write_text(format_profile(k))
    monkeypatch.setenv("HEVC_ENERGY_PROFILE", str(path))
    assert default_constants() == k
    monkeypatch.delenv("HEVC_ENERGY_PROFILE")
    assert default_constants() == K


def test_report_json_round_trip():
    r = estimate_simplified(FeatureCounts(n_slice=3, qp=12), K)
    assert EstimateReport.from_json(r.to_json()) == r
