"""
Longer walk-off, better selectivity
===================================

The larger the walk-off between r and s compared with the pump width, the
closer the interferometer gets to ideal single-mode operation.
"""
from tmi.presets import twm_cascade
from tmi.tuner import tune_cascade

print(" zeta     S      rho_1^2   rho_2^2")
for zeta in (25, 50, 100, 200):
    tuned = tune_cascade(twm_cascade(float(zeta), "RC", gamma1=2.0), expand=3)
    rho = tuned.rho_sq
    print(f"{zeta:5d}  {tuned.selectivity:.4f}  {rho[0]:.5f}  {rho[1]:.5f}")
