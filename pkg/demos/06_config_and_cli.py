"""
Driving runs from configuration files
=====================================

Every run can be described by a TOML file. The package ships the
configurations behind its reference results; `tmi run <name>` accepts either
a path or one of these names. The same pipeline is available from Python.
"""
import os
import tempfile

from tmi import config
from tmi.cli import main

print("shipped configs:", ", ".join(config.shipped_configs()))

# %% Single stage: gamma tuned for maximum selectivity, report and mode files written.
main(["run", "fig1_twm", "--out", "tmi_out/fig1_twm"])

# %% Sweep a numeric key. Failed points are recorded in the table, not fatal.
# Sweeps need a key holding a number, so write a copy of fig1_twm with a fixed gamma.
text = """
[stage1]
gamma = 1.0
delta_f = 0
[stage1.channels]
p = 0.0
r = 50.0
s = 0.0
[stage1.pump_p]
width = 1.0
"""
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "twm.toml")
    with open(path, "w") as fh:
        fh.write(text)
    main(["sweep", path, "--axis", "stage1.gamma", "--values", "2,4,6,8,10,12"])

# TMI_THREADS caps the number of worker processes used for sweep points.
