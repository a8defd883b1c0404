"""
Estimating the decoding energy of a trace
=========================================

Generate a synthetic intra trace, reduce it to feature counts and evaluate
both energy models with the builtin constants.
"""

import numpy as np

from hevc_energy import aggregate, builtin_constants, estimate_accurate, estimate_simplified
from hevc_energy.trace import random_trace

rng = np.random.default_rng(1)
k = builtin_constants()

# one frame of 18 CTUs, coded at a moderate QP
header, records = random_trace(rng, n_ctus=18, qp=37)
counts = aggregate(header, records)
print(f"{len(records)} transform units, {counts.n_coeff} coefficients, {counts.n_tsf} transform skips")

for report in (estimate_accurate(counts, k), estimate_simplified(counts, k)):
    print(f"\n{report.model_kind} model: {report.total:.5e} J")
    for name, value in report.terms.items():
        print(f"  {name:<12} {value:.5e}")
    for w in report.warnings:
        print(f"  warning: {w}")

# Low QP puts more energy into the residual and the simplified model stops being valid.
header, records = random_trace(rng, n_ctus=18, qp=22)
low = aggregate(header, records)
print("\nQP 22:", estimate_simplified(low, k).warnings)
