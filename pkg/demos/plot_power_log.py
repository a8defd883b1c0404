"""
From current logs to decoder energy
===================================

Integrate a decode-mode and an idle-mode current log, correct for the ampere
meter's own dissipation and take the difference.
"""

import numpy as np

from hevc_energy import PowerLog, integrate_power_log
from hevc_energy.measurement import EnergyMeasurement, decoder_energy

rng = np.random.default_rng(2)
t = np.linspace(0.0, 2.0, 2001)

# idle board draws about 0.47 A; decoding adds a ripple on top of 0.52 A
idle = PowerLog(t, 0.47 + 0.002 * rng.standard_normal(t.size))
busy = PowerLog(t, 0.52 + 0.01 * np.sin(2 * np.pi * 25 * t) + 0.002 * rng.standard_normal(t.size))

e_all = integrate_power_log(busy)
e_idle = integrate_power_log(idle)
print(f"E_all  {e_all:.5e} J")
print(f"E_idle {e_idle:.5e} J")
print(f"E_dec  {decoder_energy(EnergyMeasurement(e_all, e_idle)):.5e} J")

# the shunt term is small but not negligible at these currents
raw = integrate_power_log(PowerLog(t, busy.i, r_a=0.0))
print(f"shunt correction {raw - e_all:.5e} J")
