"""Parameter searches: 50% conversion, control phase, pump pre-chirps and grid convergence."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .cascade import CascadeResponse, CascadeSpec, delays, derive_stage2
from .core import ConfigurationError, N_CHIRP, StageSpec, TimeGrid
from .propagator import build_lattice, evolve_pumps, plan_steps
from .schmidt import conversion_spectrum, selectivity

log = logging.getLogger(__name__)

HALF_CE_TOL = 1e-3
MAX_BISECTIONS = 60
CONVERGENCE_TOL = 1e-3
# default bounds on chirp coefficients of orders 1..4
DEFAULT_CHIRP_BOUNDS = ((-4.0, 4.0), (-12.0, 12.0), (-4.0, 4.0), (-4.0, 4.0))


class BracketError(RuntimeError):
    def __init__(self, message, max_ce):
        super().__init__(message)
        self.max_ce = max_ce


@dataclass(eq=False)
class TuneResult:
    parameter: str
    value: object
    objective: float
    iterations: int
    history: list = field(default_factory=list)
    warning: bool = False
    extra: dict = field(default_factory=dict)

    def write_history(self, path):
        write_history_csv(self.history, path)


def write_history_csv(history, path):
    """Rows of (iteration, parameter, objective); vector parameters are ';'-joined."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "parameter", "objective"])
        for i, (val, obj) in enumerate(history):
            if np.ndim(val):
                val = ";".join(f"{v:.10g}" for v in np.ravel(val))
            w.writerow([i, val, obj])


# ---- single stage ---------------------------------------------------------

def stage_ce1(stage: StageSpec) -> float:
    return float(conversion_spectrum(stage)[0])


def tune_gamma_half_ce(stage_template: StageSpec, gamma_max: Optional[float] = None,
                       tol: float = HALF_CE_TOL, target: float = 0.5, expand: int = 0) -> TuneResult:
    """Bisection on gamma in [0, gamma_max] for a first-mode conversion efficiency of 0.5.

    gamma_max defaults to the template's gamma; `expand` allows that many
    doublings of the upper bracket before giving up.
    """
    hi = stage_template.gamma if gamma_max is None else float(gamma_max)
    if not hi > 0:
        raise ConfigurationError("upper gamma bracket must be positive")
    history = []
    ce_hi = stage_ce1(stage_template.with_gamma(hi))
    history.append((hi, ce_hi))
    best = ce_hi
    for _ in range(expand):
        if ce_hi > target:
            break
        hi *= 2.0
        ce_hi = stage_ce1(stage_template.with_gamma(hi))
        history.append((hi, ce_hi))
        best = max(best, ce_hi)
    if ce_hi <= target:
        raise BracketError(f"conversion never reaches {target} on the bracket (max found {best:.4f})", best)
    if abs(ce_hi - target) < tol:
        return TuneResult("gamma", hi, ce_hi, 0, history)
    lo = 0.0
    for it in range(1, MAX_BISECTIONS + 1):
        mid = 0.5 * (lo + hi)
        ce = stage_ce1(stage_template.with_gamma(mid))
        history.append((mid, ce))
        if abs(ce - target) < tol:
            return TuneResult("gamma", mid, ce, it, history)
        if ce < target:
            lo = mid
        else:
            hi = mid
    raise BracketError(f"bisection did not reach |CE - {target}| < {tol}", best)


def maximize_single_selectivity(stage: StageSpec, gamma_bounds=(0.5, 30.0), n_scan: int = 16,
                                xtol: float = 1e-3) -> TuneResult:
    """Best single-stage selectivity over gamma: coarse scan then bounded Brent refinement."""
    history = []

    def s_of(g):
        val = selectivity(conversion_spectrum(stage.with_gamma(g)))
        history.append((float(g), val))
        return val

    grid = np.linspace(*gamma_bounds, n_scan)
    vals = [s_of(g) for g in grid]
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, n_scan - 1)]
    res = minimize_scalar(lambda g: -s_of(g), bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    g_best, s_best = (float(res.x), -float(res.fun)) if -res.fun >= vals[k] else (float(grid[k]), vals[k])
    return TuneResult("gamma", g_best, s_best, len(history), history)


# ---- control phase --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThetaCurve:
    thetas: np.ndarray
    ce: np.ndarray
    theta_star: float
    ce_star: float

    @property
    def visibility(self) -> float:
        return float(max(self.ce_star, self.ce.max()) - self.ce.min())


def scan_theta(spec, k_points: int = 32, refine: bool = True):
    """Composite first-mode conversion over theta in [0, 2pi); returns (theta_star, curve).

    The best sample is refined by a parabola through its neighbours and then
    by a bounded Brent search inside one grid spacing.
    """
    if k_points < 8:
        raise ConfigurationError("k_points must be at least 8")
    resp = spec if isinstance(spec, CascadeResponse) else CascadeResponse(spec)
    th = 2 * np.pi * np.arange(k_points) / k_points
    ce = np.array([resp.ce1(t) for t in th])
    k = int(np.argmax(ce))
    t_best, c_best = float(th[k]), float(ce[k])
    if refine:
        h = th[1] - th[0]
        y0, y1, y2 = ce[k - 1], ce[k], ce[(k + 1) % k_points]
        den = y0 - 2 * y1 + y2
        off = 0.5 * h * (y0 - y2) / den if den < 0 else 0.0
        t_par = t_best + float(np.clip(off, -h, h))
        c_par = resp.ce1(t_par)
        if c_par > c_best:
            t_best, c_best = t_par, c_par
        res = minimize_scalar(lambda t: -resp.ce1(t), bounds=(t_best - h, t_best + h),
                              method="bounded", options={"xatol": 1e-7})
        if -res.fun > c_best:
            t_best, c_best = float(res.x), float(-res.fun)
    t_best = float(np.mod(t_best, 2 * np.pi))
    return t_best, ThetaCurve(th, ce, t_best, c_best)


# ---- cascade tuning -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TunedCascade:
    spec: CascadeSpec
    gamma1: TuneResult
    gamma2: TuneResult
    curve: ThetaCurve
    response: CascadeResponse

    @property
    def selectivity(self) -> float:
        return self.response.selectivity(self.spec.theta)

    @property
    def rho_sq(self):
        return self.response.rho_sq(self.spec.theta)


def tune_cascade(spec: CascadeSpec, gamma_max: Optional[float] = None, k_points: int = 32,
                 expand: int = 3) -> TunedCascade:
    """Both stages to 50% conversion, then theta at the composite maximum."""
    g1 = tune_gamma_half_ce(spec.stage1, gamma_max, expand=expand)
    st1 = spec.stage1.with_gamma(g1.value)
    s2 = derive_stage2(replace(spec, stage1=st1))
    g2 = tune_gamma_half_ce(s2, gamma_max or spec.gamma2 or spec.stage1.gamma, expand=expand)
    tuned = spec.with_gammas(g1.value, g2.value)
    resp = CascadeResponse(tuned)
    theta, curve = scan_theta(resp, k_points)
    return TunedCascade(tuned.with_theta(theta), g1, g2, curve, resp)


# ---- pre-chirp optimisation ----------------------------------------------

def phase_flatness(env, level: float = 0.5) -> float:
    """max - min of the unwrapped phase where |A| >= level * max|A| (around the peak)."""
    a = np.abs(env.samples)
    k = int(np.argmax(a))
    thr = level * a[k]
    lo = k
    while lo > 0 and a[lo - 1] >= thr:
        lo -= 1
    hi = k
    while hi < len(a) - 1 and a[hi + 1] >= thr:
        hi += 1
    ph = np.unwrap(np.angle(env.samples[lo:hi + 1]))
    return float(ph.max() - ph.min())


def _poly_fit(x, y, w, orders):
    """Weighted least squares of y on [1, x**k for k in orders]; returns coefficients of the orders."""
    cols = [np.ones_like(x)] + [x ** k for k in orders]
    a = np.stack(cols, axis=1) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(a, y * np.sqrt(w), rcond=None)
    return coef[1:]


def _chirp_vector(c, orders):
    out = [0.0] * N_CHIRP
    for k, v in zip(orders, c):
        out[k - 1] = float(v)
    return tuple(out)


def _coupling_phase_fit(stage: StageSpec, orders, th_r=None, th_s=None):
    """Separable polynomial fit of the slowly varying coupling phase seen by the signals.

    In the interaction picture (signal cross-phase removed along each signal
    characteristic) the effective coupling phase is
        arg A_p - arg A_q + theta_s - theta_r,
    where theta_r, theta_s are the accumulated signal cross phases. It is fit
    by a(T) + b(V) + const with T, V the offsets from the p and q pump centres
    and weights |kappa|^2 dz. Adding -a to the p chirp and +b to the q chirp
    flattens it. Returns (a, b, th_r_out, th_s_out) with the output phases
    indexed by lab sample at the stage exit.
    """
    plan = plan_steps(stage)
    if not plan.lattice:
        raise ConfigurationError("phase-compensation warm start needs a whole-sample stage")
    pf = evolve_pumps(stage, plan.n_z, plan.frame)
    lat = build_lattice(plan, pf)
    n = stage.grid.n_samples
    th_r = np.zeros(n) if th_r is None else th_r.copy()
    th_s = np.zeros(n) if th_s is None else th_s.copy()
    w = pf.weights()
    phi = pf.xpm
    kap = np.abs(pf.kappa)
    wid = pf.width
    T, V, P, W = [], [], [], []
    pq = stage.pump_q
    for m in range(pf.n_z + 1):
        t = pf.lab_times(m)
        x_p = t - stage.beta("p") * pf.z[m] - stage.pump_p.center
        x_q = t - stage.beta("q") * pf.z[m] - pq.center
        ir = (lat.first["r"] + lat.rows["r"][m] + np.arange(wid)) % n
        is_ = (lat.first["s"] + lat.rows["s"][m] + np.arange(wid)) % n
        ts = th_s[is_] + 0.5 * w[m] * phi[m]
        tr = th_r[ir] + 0.5 * w[m] * phi[m]
        psi = (stage.pump_p.phase_profile(x_p) + pf.nl_p[m]
               - pq.phase_profile(x_q) - pf.nl_q[m] + ts - tr)
        mask = kap[m] > 1e-4 * kap.max()
        T.append(x_p[mask])
        V.append(x_q[mask])
        P.append(psi[mask])
        W.append(kap[m][mask] ** 2 * w[m])
        th_s[is_] += w[m] * phi[m]
        th_r[ir] += w[m] * phi[m]
    T, V, P, W = map(np.concatenate, (T, V, P, W))
    cols = [np.ones_like(T)] + [T ** k for k in orders] + [V ** k for k in orders]
    a = np.stack(cols, axis=1) * np.sqrt(W)[:, None]
    coef, *_ = np.linalg.lstsq(a, P * np.sqrt(W), rcond=None)
    k = len(orders)
    # characteristic-indexed phases -> lab indices at the exit
    out_r = np.roll(th_r, lat.out_shift("r"))
    out_s = np.roll(th_s, lat.out_shift("s"))
    return coef[1:1 + k], coef[1 + k:], out_r, out_s


def compensating_chirps(spec: CascadeSpec, orders=(1, 2, 3, 4)):
    """Warm-start chirps (p1, q1, p2, q2) that flatten each stage's effective coupling phase.

    Stage 2 is fit with the signal cross phases inherited from stage 1.
    Current chirps are included, so the result is an absolute setting.
    """
    s1 = spec.stage1
    s2 = derive_stage2(spec)
    a1, b1, th_r, th_s = _coupling_phase_fit(s1, orders)
    g = s1.grid
    d = delays(spec)
    th_r = np.roll(th_r, int(round(d.get("r", 0.0) / g.dt)))
    th_s = np.roll(th_s, int(round(d.get("s", 0.0) / g.dt)))
    a2, b2, _, _ = _coupling_phase_fit(s2, orders, th_r=th_r, th_s=th_s)

    def upd(chirp, delta, sign):
        c = list(chirp)
        for k, v in zip(orders, delta):
            c[k - 1] += sign * v
        return tuple(c)

    return (upd(s1.pump_p.chirp, a1, -1), upd(s1.pump_q.chirp, b1, +1),
            upd(s2.pump_p.chirp, a2, -1), upd(s2.pump_q.chirp, b2, +1))


def with_chirps(spec: CascadeSpec, chirps) -> CascadeSpec:
    p1, q1, p2, q2 = chirps
    s1 = spec.stage1
    s1 = replace(s1, pump_p=s1.pump_p.with_chirp(p1),
                 pump_q=None if s1.pump_q is None else s1.pump_q.with_chirp(q1))
    return replace(spec, stage1=s1, stage2_chirp_p=tuple(p2),
                   stage2_chirp_q=None if s1.pump_q is None else tuple(q2))


def current_chirps(spec: CascadeSpec):
    s2 = derive_stage2(spec)
    zero = (0.0,) * N_CHIRP
    q1 = spec.stage1.pump_q.chirp if spec.stage1.pump_q is not None else zero
    q2 = s2.pump_q.chirp if s2.pump_q is not None else zero
    return (spec.stage1.pump_p.chirp, q1, s2.pump_p.chirp, q2)


class _Objective:
    """Composite selectivity after re-tuning both gammas and theta."""

    def __init__(self, spec, k_points, gamma_hint):
        self.spec = spec
        self.k_points = k_points
        self.gamma_hint = gamma_hint
        self.cache = {}

    def evaluate(self, chirps):
        key = tuple(np.round(np.ravel(chirps), 12))
        if key in self.cache:
            return self.cache[key]
        sp = with_chirps(self.spec, chirps)
        hint = 1.5 * self.gamma_hint
        g1 = tune_gamma_half_ce(sp.stage1, hint, expand=4)
        sp1 = replace(sp, stage1=sp.stage1.with_gamma(g1.value))
        g2 = tune_gamma_half_ce(derive_stage2(sp1), hint, expand=4)
        tuned = sp.with_gammas(g1.value, g2.value)
        resp = CascadeResponse(tuned)
        theta, curve = scan_theta(resp, self.k_points)
        tuned = tuned.with_theta(theta)
        out = (resp.selectivity(theta), tuned, resp)
        self.cache[key] = out
        return out


def _flatness_of(resp, theta):
    _, r_out, s_in, s_out = resp.leading_modes(theta)
    return {"r_out": phase_flatness(r_out[0]), "s_in": phase_flatness(s_in[0]),
            "s_out": phase_flatness(s_out[0])}


def _gauge_chirps(spec, resp, chirps, orders):
    """Shift both q chirps by the r-output mode phase and both p chirps by the s-input mode phase.

    These common shifts act as a similarity transform on each signal channel,
    so conversion efficiencies are unchanged while the two mode phases flatten.
    """
    theta = spec.theta
    _, r_out, s_in, _ = resp.leading_modes(theta)
    s1 = spec.stage1
    s2 = derive_stage2(spec)
    L = s1.length
    out = [list(c) for c in chirps]

    def fit(env, centre):
        a = np.abs(env.samples)
        sel = a >= 0.5 * a.max()
        ph = np.unwrap(np.angle(env.samples))
        x = env.times - centre
        return _poly_fit(x[sel], ph[sel], a[sel] ** 2, orders)

    if s1.pump_q is not None:
        hq = fit(r_out[0], s2.pump_q.center + s2.beta("q") * L)
        for idx in (1, 3):
            for k, v in zip(orders, hq):
                out[idx][k - 1] += v
    gp = fit(s_in[0], s1.pump_p.center)
    for idx in (0, 2):
        for k, v in zip(orders, gp):
            out[idx][k - 1] += v
    return tuple(tuple(c) for c in out)


def optimize_prechirp(spec: CascadeSpec, coeff_bounds=None, orders=(1, 2, 3, 4), max_evals: int = 40,
                      warm_start: bool = True, gauge: bool = True, k_points: int = 16,
                      min_improvement: float = 1e-4, history_path=None) -> TuneResult:
    """Pump chirp polynomials of both stages maximising the tuned composite selectivity.

    Search: the current chirps, an optional phase-compensation warm start,
    then a bounded Nelder-Mead refinement. Each evaluation re-tunes both
    gammas to 50% and re-scans theta. Phase flatness of the leading modes is
    logged. A final common-mode shift flattens the r-output and s-input mode
    phases without changing the selectivity.
    """
    orders = tuple(orders)
    bounds = list(coeff_bounds or [DEFAULT_CHIRP_BOUNDS[k - 1] for k in orders])
    if len(bounds) != len(orders):
        raise ConfigurationError("need one (lo, hi) bound per chirp order")
    fwm = spec.stage1.pump_q is not None
    n_pumps = 4 if fwm else 2
    slots = (0, 1, 2, 3) if fwm else (0, 2)
    lo = np.array([b[0] for _ in slots for b in bounds])
    hi = np.array([b[1] for _ in slots for b in bounds])

    def to_vec(chirps):
        return np.array([chirps[s][k - 1] for s in slots for k in orders])

    def to_chirps(vec):
        out = [(0.0,) * N_CHIRP] * 4
        vec = np.asarray(vec).reshape(n_pumps, len(orders))
        for j, s in enumerate(slots):
            out[s] = _chirp_vector(vec[j], orders)
        return tuple(out)

    history = []
    obj = _Objective(spec, k_points, max(spec.stage1.gamma, 1e-3))
    x0 = np.clip(to_vec(current_chirps(spec)), lo, hi)
    s0, tuned0, resp0 = obj.evaluate(to_chirps(x0))
    obj.gamma_hint = tuned0.stage1.gamma
    flat0 = _flatness_of(resp0, tuned0.theta)
    history.append((x0.copy(), s0))
    log.info("initial selectivity %.6f, r-output phase spread %.3f rad", s0, flat0["r_out"])
    best = (s0, x0.copy())

    if warm_start and fwm and plan_steps(tuned0.stage1).lattice:
        warm = compensating_chirps(tuned0, orders)
        xw = np.clip(to_vec(warm), lo, hi)
        sw = obj.evaluate(to_chirps(xw))[0]
        history.append((xw.copy(), sw))
        log.info("warm start selectivity %.6f", sw)
        if sw > best[0]:
            best = (sw, xw.copy())

    evals = [0]

    def f(x):
        evals[0] += 1
        val = obj.evaluate(to_chirps(np.clip(x, lo, hi)))[0]
        history.append((np.clip(x, lo, hi), val))
        return -val

    if max_evals > 0:
        scale = 0.05 * (hi - lo)
        simplex = [best[1]] + [np.clip(best[1] + np.eye(len(lo))[j] * scale[j], lo, hi) for j in range(len(lo))]
        res = minimize(f, best[1], method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"maxfev": max_evals, "initial_simplex": np.array(simplex),
                                "xatol": 1e-3, "fatol": 1e-6})
        if -res.fun > best[0]:
            best = (-float(res.fun), np.clip(res.x, lo, hi))

    s_best, x_best = best
    warn = s_best - s0 < min_improvement
    if warn:
        s_best, x_best = s0, x0
        log.warning("pre-chirp search did not improve on the initial point")
    chirps = to_chirps(x_best)
    s_fin, tuned, resp = obj.evaluate(chirps)
    if gauge and not warn:
        g_chirps = _gauge_chirps(tuned, resp, chirps, orders)
        xg = to_vec(g_chirps)
        if np.all(xg >= lo) and np.all(xg <= hi):
            sg, tg, rg = obj.evaluate(g_chirps)
            history.append((xg.copy(), sg))
            if sg >= s_fin - 1e-6:
                chirps, s_fin, tuned, resp, x_best = g_chirps, sg, tg, rg, xg
    flat = _flatness_of(resp, tuned.theta)
    log.info("final selectivity %.6f, r-output phase spread %.3f rad", s_fin, flat["r_out"])
    result = TuneResult("prechirp", x_best, s_fin, len(history), history, warning=warn,
                        extra={"spec": tuned, "chirps": chirps, "initial_objective": s0,
                               "gamma1": tuned.stage1.gamma, "gamma2": derive_stage2(tuned).gamma,
                               "theta": tuned.theta, "flatness_initial": flat0, "flatness_final": flat,
                               "rho_sq": resp.rho_sq(tuned.theta)})
    if history_path:
        result.write_history(history_path)
    return result


# ---- convergence ----------------------------------------------------------

def refine_spec(spec: CascadeSpec, factor: int = 2) -> CascadeSpec:
    """Same cascade with dt / factor (same window) and factor times the z-steps."""
    g = spec.stage1.grid
    fine = TimeGrid(g.n_samples * factor, g.dt / factor, g.t_start)
    out = spec.with_grid(fine)

    def steps(st):
        return None if st.n_z_steps is None else st.n_z_steps * factor

    s1 = replace(out.stage1, n_z_steps=steps(out.stage1))
    s2 = None if out.stage2 is None else replace(out.stage2, n_z_steps=steps(out.stage2))
    return replace(out, stage1=s1, stage2=s2)


def _mode_on_coarse(env, factor):
    from .core import Envelope
    g = env.grid
    coarse = TimeGrid(g.n_samples // factor, g.dt * factor, g.t_start)
    return Envelope(coarse, env.samples[::factor], env.channel).normalized()


def convergence_study(spec: CascadeSpec, factor: int = 2, tol: float = CONVERGENCE_TOL,
                      k_points: int = 32) -> dict:
    """Selectivity and leading-mode drift under joint refinement of dt and the z-step.

    Gammas are held fixed; theta is re-scanned at each resolution.
    """
    from .core import inner_product
    runs = []
    for sp in (spec, refine_spec(spec, factor)):
        resp = CascadeResponse(sp)
        theta, curve = scan_theta(resp, k_points)
        rho = resp.rho_sq(theta)
        modes = resp.leading_modes(theta) if rho[0] > 1e-12 else None
        runs.append({"dt": sp.stage1.grid.dt, "n_z": plan_steps(sp.stage1).n_z, "theta": theta,
                     "S": selectivity(rho), "rho_sq": [float(v) for v in rho[:5]], "modes": modes})
    base, fine = runs
    trivial = base["rho_sq"][0] < 1e-12 and fine["rho_sq"][0] < 1e-12
    report = {"factor": factor, "tol": tol, "trivial": trivial, "runs": [], "delta_S": None,
              "mode_drift": None, "converged": None}
    for r in runs:
        report["runs"].append({k: v for k, v in r.items() if k != "modes"})
    if trivial:
        return report
    report["delta_S"] = abs(fine["S"] - base["S"])
    drift = {}
    for name, idx in (("r_out", 1), ("s_in", 2)):
        a = base["modes"][idx][0].normalized()
        b = _mode_on_coarse(fine["modes"][idx][0], factor)
        drift[name] = 1.0 - abs(inner_product(a, b)) ** 2
    report["mode_drift"] = drift
    report["converged"] = report["delta_S"] < tol
    return report
