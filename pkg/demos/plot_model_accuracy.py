"""
How far apart are the two models?
=================================

Treat the accurate model as the measurement and report the relative error of
the simplified model over a sweep of QPs.
"""

import numpy as np

from hevc_energy import aggregate, builtin_constants, estimate_accurate, estimate_simplified
from hevc_energy.model import SIMPLIFIED_BOUND, relative_error
from hevc_energy.trace import random_trace

rng = np.random.default_rng(3)
k = builtin_constants()

print(" qp   accurate [J]  simplified [J]  eps")
for qp in range(22, 48, 5):
    counts = aggregate(*random_trace(rng, n_ctus=40, qp=qp))
    acc = estimate_accurate(counts, k).total
    simp = estimate_simplified(counts, k).total
    eps = relative_error(acc, simp)
    mark = "" if eps < SIMPLIFIED_BOUND else "  (above the simplified bound)"
    print(f"{qp:3d}   {acc:.5e}   {simp:.5e}    {eps:.3%}{mark}")
