"""Ready-made stages and cascades in the reference geometry.

Frame: s and p are at rest (group-velocity matched), r walks off. Pumps are
unit-width Gaussians centred at t = 0 unless stated.
"""
from __future__ import annotations

from typing import Optional

from .cascade import CascadeSpec, auto_cascade_grid
from .core import DEFAULT_DT, PumpSpec, StageSpec, TimeGrid, make_grid, stage_grid


def twm_stage(zeta: float, gamma: float = 1.0, dt: float = DEFAULT_DT,
              grid: Optional[TimeGrid] = None, pump: Optional[PumpSpec] = None,
              n_z_steps: Optional[int] = None) -> StageSpec:
    """Three-wave mixing stage with walk-off zeta between r and s."""
    st = StageSpec(grid=grid or make_grid(2, dt), gamma=gamma, delta_f=0,
                   channels={"p": 0.0, "r": float(zeta), "s": 0.0},
                   pump_p=pump or PumpSpec(), n_z_steps=n_z_steps)
    return st if grid is not None else st.with_grid(stage_grid([st], dt))


def fwm_stage(collision: float = 5.0, gamma: float = 1.0, dt: float = DEFAULT_DT,
              tau_p: float = 1.0, tau_q: float = 1.0, chirp_p=(), chirp_q=(),
              grid: Optional[TimeGrid] = None, n_z_steps: Optional[int] = None) -> StageSpec:
    """Four-wave mixing stage with a complete pump collision.

    The q pump co-moves with r and starts collision/2 * (tau_p + tau_q)
    ahead of p, so the pumps are apart at both faces and cross mid-stage.
    """
    walk = collision * (tau_p + tau_q)
    st = StageSpec(grid=grid or make_grid(2, dt), gamma=gamma, delta_f=1,
                   channels={"p": 0.0, "q": walk, "r": walk, "s": 0.0},
                   pump_p=PumpSpec(width=tau_p, chirp=chirp_p),
                   pump_q=PumpSpec(width=tau_q, center=-0.5 * walk, chirp=chirp_q),
                   n_z_steps=n_z_steps)
    return st if grid is not None else st.with_grid(stage_grid([st], dt))


def twm_cascade(zeta: float, mode: str = "RC", gamma1: float = 1.0, gamma2: Optional[float] = None,
                theta: float = 0.0, dt: float = DEFAULT_DT) -> CascadeSpec:
    spec = CascadeSpec(stage1=twm_stage(zeta, gamma1, dt), mode=mode, theta=theta,
                       gamma2=gamma1 if gamma2 is None else gamma2)
    return auto_cascade_grid(spec, dt)


def fwm_cascade(collision: float = 5.0, mode: str = "RC", gamma1: float = 1.0,
                gamma2: Optional[float] = None, theta: float = 0.0, dt: float = DEFAULT_DT,
                chirps=None) -> CascadeSpec:
    """chirps: optional (p1, q1, p2, q2) coefficient tuples."""
    c = chirps or ((), (), (), ())
    spec = CascadeSpec(stage1=fwm_stage(collision, gamma1, dt, chirp_p=c[0], chirp_q=c[1]),
                       mode=mode, theta=theta, gamma2=gamma1 if gamma2 is None else gamma2,
                       stage2_chirp_p=tuple(c[2]), stage2_chirp_q=tuple(c[3]))
    return auto_cascade_grid(spec, dt)
