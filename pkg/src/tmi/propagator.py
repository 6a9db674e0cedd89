"""Pump evolution along characteristics and split-step propagation of the (r, s) pair.

Both signal engines use the same symmetric splitting: half a coupling step
at z_m, a full advection step, then half a coupling step at z_{m+1}.
Consecutive half steps share a depth and merge, so interior depths get a
full-weight coupling and the two end faces get half weight.

When every per-step advection is a whole number of samples (in a frame
co-moving with s), advection is exact index bookkeeping and the sweep runs
in a compiled kernel over the characteristic lattice. Otherwise advection
is a spectral phase ramp.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy.integrate import trapezoid

from .core import (ConfigurationError, Envelope, NumericalInstabilityError, StageSpec,
                   SIGNALS)

DEFAULT_STEPS = 1024
INT_TOL = 1e-9
AUTO_STEP_TOL = 1e-5
MAX_AUTO_STEPS = 1 << 16


def _as_int(x: float):
    r = round(x)
    return int(r) if abs(x - r) <= INT_TOL * max(1.0, abs(x)) else None


@dataclass(frozen=True)
class StepPlan:
    """How a stage is discretized in z.

    frame: velocity of the computational frame (lab time t -> t - frame*z).
    shifts: whole-sample advection per step for r and s in that frame, or
    None when advection is fractional and the spectral engine is needed.
    final_roll: lab-frame shift (samples) restored after the sweep.
    """

    n_z: int
    frame: float = 0.0
    shifts: Optional[tuple] = None
    final_roll: int = 0

    @property
    def lattice(self) -> bool:
        return self.shifts is not None


def plan_steps(stage: StageSpec) -> StepPlan:
    dt, L = stage.grid.dt, stage.length
    br, bs = stage.beta("r"), stage.beta("s")
    d = _as_int((br - bs) * L / dt)
    roll = _as_int(bs * L / dt)
    n = stage.n_z_steps
    if n is None:
        if d is not None and roll is not None:
            n = abs(d) if d != 0 else DEFAULT_STEPS
        else:
            return StepPlan(DEFAULT_STEPS)
    if d is None or roll is None or d % n:
        return StepPlan(n)
    return StepPlan(n, frame=bs, shifts=(d // n, 0), final_roll=roll)


@dataclass(frozen=True, eq=False)
class PumpField:
    """Pump envelopes sampled at every depth z_m on a window that follows them.

    Row m of `amp_p` holds A_p at the frame-grid samples offsets[m] + j,
    j < width (indices taken modulo the grid size). Frame sample k at depth z
    is lab time t_k + frame*z. `unit_q` marks three-wave mixing (A_q = 1).
    `nl_p`, `nl_q` are the unwrapped nonlinear phases already folded into
    the amplitudes.
    """

    grid: object
    gamma: float
    delta_f: int
    frame: float
    z: np.ndarray
    offsets: np.ndarray
    amp_p: np.ndarray
    amp_q: Optional[np.ndarray]
    unit_q: bool
    nl_p: np.ndarray
    nl_q: Optional[np.ndarray]

    @property
    def n_z(self) -> int:
        return len(self.z) - 1

    @property
    def width(self) -> int:
        return self.amp_p.shape[1]

    @property
    def step(self) -> float:
        return self.z[1] - self.z[0]

    @property
    def q_field(self) -> np.ndarray:
        if self.amp_q is not None:
            return self.amp_q
        return np.full(self.amp_p.shape, 1.0 if self.unit_q else 0.0, dtype=complex)

    @property
    def kappa(self) -> np.ndarray:
        """Coupling gamma * A_p * conj(A_q)."""
        return self.gamma * self.amp_p * np.conj(self.q_field)

    @property
    def xpm(self) -> np.ndarray:
        """Cross-phase rate shared by r and s."""
        if not self.delta_f:
            return np.zeros(self.amp_p.shape)
        return self.gamma * (np.abs(self.amp_p) ** 2 + np.abs(self.q_field) ** 2)

    def window(self, m: int) -> np.ndarray:
        return (self.offsets[m] + np.arange(self.width)) % self.grid.n_samples

    def lab_times(self, m: int) -> np.ndarray:
        g = self.grid
        return g.t_start + (self.offsets[m] + np.arange(self.width)) * g.dt + self.frame * self.z[m]

    def full(self, channel: str, m: int) -> np.ndarray:
        """Pump samples at depth z_m on the whole frame grid."""
        out = np.zeros(self.grid.n_samples, complex)
        if channel == "q" and self.amp_q is None:
            out[:] = 1.0 if self.unit_q else 0.0
            return out
        arr = self.amp_p if channel == "p" else self.amp_q
        np.add.at(out, self.window(m), arr[m])
        return out

    def weights(self) -> np.ndarray:
        w = np.full(self.n_z + 1, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w

    def step_unitaries(self) -> np.ndarray:
        """Coupling exponentials for every depth, shape (n_z+1, width, 2, 2)."""
        phi = self.xpm
        return coupling_unitary(self.kappa, phi, phi, self.weights()[:, None])


def coupling_unitary(kappa, phi_r, phi_s, w) -> np.ndarray:
    """exp(i*w*[[phi_r, kappa], [conj(kappa), phi_s]]) in closed form."""
    kappa = np.asarray(kappa, complex)
    a = 0.5 * (np.asarray(phi_r) + np.asarray(phi_s))
    d = 0.5 * (np.asarray(phi_r) - np.asarray(phi_s))
    w = np.asarray(w, float)
    om = np.sqrt(d * d + np.abs(kappa) ** 2)
    c = np.cos(om * w)
    sw = w * np.sinc(om * w / np.pi)
    e = np.exp(1j * a * w)
    c, sw, e, d, kappa = np.broadcast_arrays(c, sw, e, d, kappa)
    u = np.empty(c.shape + (2, 2), complex)
    u[..., 0, 0] = e * (c + 1j * sw * d)
    u[..., 0, 1] = e * 1j * sw * kappa
    u[..., 1, 0] = e * 1j * sw * np.conj(kappa)
    u[..., 1, 1] = e * (c - 1j * sw * d)
    return u


def _window_check(stage: StageSpec, plan_frame=0.0):
    """Signal samples touched by the pumps must not alias around the periodic window."""
    g = stage.grid
    L = stage.length
    for c in SIGNALS:
        bc = stage.beta(c)
        lo, hi = math.inf, -math.inf
        for name, pump in stage.pumps():
            a, b = pump.support()
            bp = stage.beta(name)
            for z in (0.0, L):
                lo = min(lo, pump.center + a + (bp - bc) * z)
                hi = max(hi, pump.center + b + (bp - bc) * z)
        if hi - lo + 2 * g.dt > g.length:
            raise ConfigurationError(
                f"time window of {g.length:g} is too short: channel {c} meets the pumps over "
                f"{hi - lo:g} (pump width plus walk-off)")


def evolve_pumps(stage: StageSpec, n_z: Optional[int] = None, frame: float = 0.0) -> PumpField:
    """Closed-form pump evolution: rigid advection plus self/cross phase.

    Cross phase is the trapezoid quadrature, over the z-steps, of the other
    pump's intensity along each characteristic.
    """
    _window_check(stage)
    g = stage.grid
    if n_z is None:
        n_z = plan_steps(stage).n_z
    L = stage.length
    z = np.linspace(0.0, L, n_z + 1)
    pumps = stage.pumps()
    lo = np.full(n_z + 1, np.inf)
    hi = np.full(n_z + 1, -np.inf)
    for name, pump in pumps:
        a, b = pump.support()
        pos = pump.center + (stage.beta(name) - frame) * z
        lo = np.minimum(lo, pos + a)
        hi = np.maximum(hi, pos + b)
    first = np.floor((lo - g.t_start) / g.dt).astype(np.int64)
    last = np.ceil((hi - g.t_start) / g.dt).astype(np.int64)
    width = int(np.max(last - first)) + 1
    if width > g.n_samples:
        raise ConfigurationError("pumps are wider than the time window")
    times = g.t_start + (first[:, None] + np.arange(width)[None, :]) * g.dt + frame * z[:, None]

    fields = {}
    for name, pump in pumps:
        bp = stage.beta(name)
        x = times - bp * z[:, None] - pump.center
        mag = pump.magnitude(x)
        lin = pump.phase_profile(x)
        nl = np.zeros_like(mag)
        if stage.delta_f:
            nl += 0.5 * stage.gamma * mag ** 2 * z[:, None]
            other = [(n2, p2) for n2, p2 in pumps if n2 != name]
            if other:
                n2, p2 = other[0]
                nl += stage.gamma * _cross_quadrature(times, z, bp, stage.beta(n2), p2)
        fields[name] = (mag * np.exp(1j * (lin + nl)), nl)
        if not np.all(np.isfinite(fields[name][0])):
            raise NumericalInstabilityError(f"non-finite pump {name} field")

    amp_q, nl_q = fields.get("q", (None, None))
    return PumpField(grid=g, gamma=float(stage.gamma), delta_f=stage.delta_f, frame=float(frame),
                     z=z, offsets=first, amp_p=fields["p"][0], amp_q=amp_q,
                     unit_q=(stage.delta_f == 0), nl_p=fields["p"][1], nl_q=nl_q)


_XPM_CACHE = OrderedDict()
_XPM_CACHE_SIZE = 16


def _cross_quadrature(times, z, b_self, b_other, other):
    """Trapezoid integral over z' < z of |A_other|^2 along the characteristic of this pump.

    Depends only on pump magnitudes and geometry, so results are cached.
    """
    table = None
    if other.amplitude is not None:
        tg = other.table_grid
        table = (other.amplitude.tobytes(), tg.n_samples, tg.dt, tg.t_start)
    key = (times.tobytes(), z.tobytes(), b_self, b_other, other.width, other.center, table)
    hit = _XPM_CACHE.get(key)
    if hit is not None:
        _XPM_CACHE.move_to_end(key)
        return hit
    out = _cross_quadrature_uncached(times, z, b_self, b_other, other)
    out.setflags(write=False)
    _XPM_CACHE[key] = out
    if len(_XPM_CACHE) > _XPM_CACHE_SIZE:
        _XPM_CACHE.popitem(last=False)
    return out


def _cross_quadrature_uncached(times, z, b_self, b_other, other):
    n = len(z)
    out = np.zeros(times.shape)
    for m in range(1, n):
        zk = z[: m + 1, None]
        pos = times[m][None, :] - b_self * (z[m] - zk) - b_other * zk - other.center
        inten = other.magnitude(pos) ** 2
        out[m] = trapezoid(inten, z[: m + 1], axis=0)
    return out


# ---- lattice engine -------------------------------------------------------

@njit(cache=True)
def _sweep(R, S, U, r_rows, s_rows, n_active):
    n_steps = U.shape[0]
    width = U.shape[1]
    for m in range(n_steps):
        nc = n_active[m]
        if nc == 0:
            continue
        a = r_rows[m]
        b = s_rows[m]
        for i in range(width):
            u00 = U[m, i, 0, 0]
            u01 = U[m, i, 0, 1]
            u10 = U[m, i, 1, 0]
            u11 = U[m, i, 1, 1]
            if u01 == 0 and u10 == 0 and u00 == 1 and u11 == 1:
                continue
            for c in range(nc):
                x = R[a + i, c]
                y = S[b + i, c]
                R[a + i, c] = u00 * x + u01 * y
                S[b + i, c] = u10 * x + u11 * y


@dataclass(frozen=True)
class Lattice:
    """Characteristic-lattice bookkeeping for one stage.

    Signal sample j of channel c is followed along its characteristic; the
    rows it occupies are the "active" characteristics first[c] .. first[c]+count[c]-1
    (input frame indices, unwrapped). rows[c][m] is the compact row sitting
    at the start of the pump window at step m; enter[c][j] is the first step
    at which characteristic j is inside the window.
    """

    plan: StepPlan
    n: int
    first: dict
    count: dict
    rows: dict
    enter: dict

    def out_shift(self, channel: str) -> int:
        k = self.plan.shifts[SIGNALS.index(channel)]
        return self.plan.n_z * k + self.plan.final_roll

    def in_index(self, channel: str) -> np.ndarray:
        return (self.first[channel] + np.arange(self.count[channel])) % self.n

    def out_index(self, channel: str) -> np.ndarray:
        return (self.in_index(channel) + self.out_shift(channel)) % self.n


def build_lattice(plan: StepPlan, pumps: PumpField) -> Lattice:
    n = pumps.grid.n_samples
    m = np.arange(plan.n_z + 1)
    first, count, rows, enter = {}, {}, {}, {}
    for c, k in zip(SIGNALS, plan.shifts):
        start = pumps.offsets - m * k
        f = int(start.min())
        cnt = int(start.max()) - f + pumps.width
        if cnt > n:
            raise ConfigurationError(
                f"channel {c} meets the pumps over {cnt} samples but the window has only {n}")
        first[c], count[c] = f, cnt
        rows[c] = (start - f).astype(np.int64)
        ent = np.full(cnt, plan.n_z + 1, dtype=np.int64)
        for step in range(plan.n_z + 1):
            seg = ent[rows[c][step]: rows[c][step] + pumps.width]
            np.minimum(seg, step, out=seg)
        enter[c] = ent
    return Lattice(plan, n, first, count, rows, enter)


def lattice_sweep(lat: Lattice, pumps: PumpField, R: np.ndarray, S: np.ndarray,
                  n_active: Optional[np.ndarray] = None):
    """Run the compiled sweep in place on compact characteristic arrays."""
    U = np.ascontiguousarray(pumps.step_unitaries())
    bad = ~np.all(np.isfinite(U.reshape(U.shape[0], -1)), axis=1)
    if bad.any():
        raise NumericalInstabilityError(
            f"non-finite coupling at z-step {int(np.argmax(bad))}", int(np.argmax(bad)))
    if n_active is None:
        n_active = np.full(pumps.n_z + 1, R.shape[1], dtype=np.int64)
    _sweep(R, S, U, lat.rows["r"], lat.rows["s"], np.asarray(n_active, dtype=np.int64))
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(S))):
        raise NumericalInstabilityError("non-finite samples after lattice sweep")


def _lattice_propagate(stage, plan, pumps, r, s):
    if r.ndim == 1:
        ro, so = _lattice_propagate(stage, plan, pumps, r[:, None], s[:, None])
        return ro[:, 0], so[:, 0]
    lat = build_lattice(plan, pumps)
    R = np.ascontiguousarray(r[lat.in_index("r")])
    S = np.ascontiguousarray(s[lat.in_index("s")])
    lattice_sweep(lat, pumps, R, S)
    r = r.copy()
    s = s.copy()
    r[lat.in_index("r")] = R
    s[lat.in_index("s")] = S
    return np.roll(r, lat.out_shift("r"), axis=0), np.roll(s, lat.out_shift("s"), axis=0)


# ---- spectral engine ------------------------------------------------------

def _spectral_propagate(stage, pumps, r, s):
    if pumps.frame != 0.0:
        raise ConfigurationError("the spectral engine needs lab-frame pump fields")
    g = stage.grid
    h = pumps.step
    shape = (-1,) + (1,) * (r.ndim - 1)
    ramp_r = np.exp(-1j * g.omega * stage.beta("r") * h).reshape(shape)
    ramp_s = np.exp(-1j * g.omega * stage.beta("s") * h).reshape(shape)
    U = pumps.step_unitaries()
    r = r.copy()
    s = s.copy()
    for m in range(pumps.n_z + 1):
        idx = pumps.window(m)
        u = U[m].reshape((pumps.width, 2, 2) + (1,) * (r.ndim - 1))
        x, y = r[idx], s[idx]
        r[idx] = u[:, 0, 0] * x + u[:, 0, 1] * y
        s[idx] = u[:, 1, 0] * x + u[:, 1, 1] * y
        if m < pumps.n_z:
            r = np.fft.ifft(np.fft.fft(r, axis=0) * ramp_r, axis=0)
            s = np.fft.ifft(np.fft.fft(s, axis=0) * ramp_s, axis=0)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(s))):
            raise NumericalInstabilityError(f"non-finite signal samples after z-step {m}", m)
    return r, s


def propagate(stage: StageSpec, r, s, pumps: Optional[PumpField] = None, method: str = "auto"):
    """Propagate signal arrays of shape (N,) or (N, k) through one stage.

    method: "auto" (lattice when advection is whole-sample), "lattice" or
    "spectral". A supplied PumpField must match the chosen engine's steps
    and frame.
    """
    r = np.array(r, dtype=complex)
    s = np.array(s, dtype=complex)
    n = stage.grid.n_samples
    if r.shape != s.shape or r.shape[0] != n:
        raise ConfigurationError(f"signal arrays must have leading dimension {n}")
    plan = plan_steps(stage)
    if method == "auto":
        method = "lattice" if plan.lattice else "spectral"
        if pumps is not None and (pumps.n_z != plan.n_z or pumps.frame != plan.frame):
            method = "spectral"
    if method == "lattice":
        if not plan.lattice:
            raise ConfigurationError("stage advection is not a whole number of samples per step")
        if pumps is None:
            pumps = evolve_pumps(stage, plan.n_z, plan.frame)
        elif pumps.n_z != plan.n_z or pumps.frame != plan.frame:
            raise ConfigurationError("pump field does not match the lattice steps")
        return _lattice_propagate(stage, plan, pumps, r, s)
    if method != "spectral":
        raise ConfigurationError(f"unknown propagation method {method!r}")
    if pumps is None:
        pumps = evolve_pumps(stage, plan.n_z)
    return _spectral_propagate(stage, pumps, r, s)


def evolve_signals(stage: StageSpec, pumps: Optional[PumpField], r_in: Envelope, s_in: Envelope,
                   method: str = "auto"):
    for env, name in ((r_in, "r input"), (s_in, "s input")):
        stage.grid.require_same(env.grid, name)
    r, s = propagate(stage, r_in.samples, s_in.samples, pumps, method)
    return Envelope(stage.grid, r, "r"), Envelope(stage.grid, s, "s")


def auto_steps(stage: StageSpec, tol: float = AUTO_STEP_TOL, start: int = DEFAULT_STEPS,
               max_steps: int = MAX_AUTO_STEPS) -> int:
    """Double n_z from `start` until a probe pulse's output changes by less than tol."""
    from .core import gaussian_pulse
    from dataclasses import replace
    plan = plan_steps(stage)
    if plan.lattice and stage.n_z_steps is None:
        return plan.n_z
    g = stage.grid
    p = stage.pump_p
    probe = gaussian_pulse(g, p.width, p.center, channel="s").samples
    zero = np.zeros_like(probe)
    n = start
    prev = None
    while n <= max_steps:
        st = replace(stage, n_z_steps=n)
        r, s = propagate(st, zero, probe, method="spectral")
        out = np.concatenate([r, s])
        if prev is not None and np.linalg.norm(out - prev) * math.sqrt(g.dt) < tol:
            return n
        prev = out
        n *= 2
    raise NumericalInstabilityError(f"z-step refinement did not settle below {tol} by n_z={max_steps}")
