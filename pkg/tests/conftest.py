from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from hevc_energy.trace import FeatureCounts, TraceRecord

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


nonzero_coeff = st.integers(-4096, 4096).filter(lambda c: c != 0)


@st.composite
def trace_records(draw):
    depth = draw(st.integers(1, 4))
    cbf = tuple(draw(st.lists(st.booleans(), min_size=3, max_size=3)))
    coeffs = tuple(draw(st.lists(nonzero_coeff, max_size=12))) if any(cbf) else ()
    return TraceRecord(
        frame_index=draw(st.integers(0, 30)),
        ctu_index=draw(st.integers(0, 500)),
        depth=depth,
        intra_mode=draw(st.integers(0, 34)),
        coded_as_mpm=draw(st.booleans()),
        transform_skip=draw(st.booleans()) if depth == 4 else False,
        cbf=cbf,
        coefficients=coeffs,
    )


def random_counts(rng, qp=None, scale=2000):
    """Valid FeatureCounts with independent random fields."""
    table = rng.integers(0, scale, size=(4, 4))
    units = int(table.sum())
    n_coeff = int(rng.integers(0, 20 * scale))
    sum_log2 = float(rng.uniform(0, 8) * n_coeff) if n_coeff else 0.0
    return FeatureCounts(
        n_slice=int(rng.integers(1, 64)),
        n_mode_depth=table,
        n_cbf=int(rng.integers(0, 3 * units + 1)),
        n_coeff=n_coeff,
        sum_log2_abs=sum_log2,
        n_nompm=int(rng.integers(0, units + 1)),
        n_tsf=int(rng.integers(0, table[:, 3].sum() + 1)),
        qp=int(rng.integers(0, 52)) if qp is None else qp,
    ).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(20130901)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    marker = _CRITERIA.get(report.nodeid)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        marker["outcome"] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = {"number": mark.args[0], "title": mark.args[1], "outcome": None}


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in _CRITERIA.values() if c["outcome"]]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ran, key=lambda c: c["number"]):
        terminalreporter.write_line(f"criterion {c['number']}: {c['outcome']}  {c['title']}")
