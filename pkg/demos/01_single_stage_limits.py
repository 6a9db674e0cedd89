"""
One conversion stage and why it is not enough
=============================================

A single nonlinear stage converts a signal pulse from channel s to channel r.
The conversion is mode selective when one temporal mode is converted well and
all others hardly at all. The selectivity S = rho_1^4 / sum(rho_j^2) measures
this. Here we push the coupling of one stage and watch S saturate.
"""
import numpy as np

from tmi.presets import fwm_stage, twm_stage
from tmi.schmidt import conversion_spectrum, selectivity

# %% Three-wave mixing with the pump matched to the s signal, walk-off 50 pump widths.
stage = twm_stage(50.0)
print(f"grid: {stage.grid.n_samples} samples, dt = {stage.grid.dt}")
print(" gamma   CE_1    CE_2     S")
for gamma in np.linspace(2, 20, 10):
    ce = conversion_spectrum(stage.with_gamma(gamma))
    print(f"{gamma:6.2f}  {ce[0]:.4f}  {ce[1]:.4f}  {selectivity(ce):.4f}")

# %% The conversion of the first mode saturates while the second keeps growing,
# so S peaks near 0.8 well before the first mode is fully converted.

# %% Four-wave mixing with two colliding pumps. Self and cross phase modulation
# distort the modes and S tops out lower still.
stage = fwm_stage(5.0)
print(" gamma   CE_1    CE_2     S")
for gamma in np.linspace(4, 24, 6):
    ce = conversion_spectrum(stage.with_gamma(gamma))
    print(f"{gamma:6.2f}  {ce[0]:.4f}  {ce[1]:.4f}  {selectivity(ce):.4f}")
