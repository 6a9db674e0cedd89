import numpy as np
import pytest

from tmi.core import PumpSpec, StageSpec, make_grid, stage_grid
from tmi.presets import fwm_stage, twm_stage

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_twm():
    """Lattice-friendly three-wave mixing stage, walk-off 4."""
    return twm_stage(4.0, gamma=1.5, dt=0.125)


@pytest.fixture
def small_fwm():
    return fwm_stage(2.0, gamma=3.0, dt=0.125)


@pytest.fixture
def spectral_twm():
    """Walk-off that is not a whole number of samples, forcing the spectral engine."""
    st = StageSpec(grid=make_grid(2, 0.125), gamma=1.5, delta_f=0,
                   channels={"p": 0.0, "r": 3.3, "s": 0.0}, pump_p=PumpSpec(), n_z_steps=256)
    return st.with_grid(stage_grid([st], 0.125))
