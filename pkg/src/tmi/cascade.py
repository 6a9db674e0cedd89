"""Two-stage temporal-mode interferometer.

Composite Green function: U = T2 @ D @ T1, where D applies the control phase
theta to the r channel and optional per-channel delays. Its conversion block
is G_rs = G2_rs G1_ss + exp(i theta) G2_rr G1_rs.

RC: the second stage swaps the r/s slownesses, so the collision runs in
reverse. DC: the second stage is a copy and delays restore the entry timing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .core import (ChannelParams, ConfigurationError, DEFAULT_DT, Envelope, StageSpec, TimeGrid,
                   stage_grid)
from .greenfn import TransferMatrix, build_transfer_matrix
from .propagator import build_lattice, evolve_pumps, plan_steps, propagate
from .schmidt import (SchmidtDecomposition, degeneracy_mask, mode_overlap, phase_gauge,
                      schmidt_decompose, selectivity)

MODES = ("RC", "DC")
REPORT_MODES = 50


@dataclass(frozen=True, eq=False)
class CascadeSpec:
    """Two stages plus the coupler between them.

    stage2 is derived from stage1 unless given explicitly; gamma2 and the
    stage-2 chirps override the derived values. dc_delays maps channel ->
    delay and is only meaningful for DC.
    """

    stage1: StageSpec
    mode: str = "RC"
    theta: float = 0.0
    dc_delays: Optional[Mapping[str, float]] = None
    stage2: Optional[StageSpec] = None
    gamma2: Optional[float] = None
    stage2_chirp_p: Optional[tuple] = None
    stage2_chirp_q: Optional[tuple] = None

    def __post_init__(self):
        mode = str(self.mode).upper()
        if mode not in MODES:
            raise ConfigurationError(f"cascade mode must be RC or DC, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not np.isfinite(self.theta):
            raise ConfigurationError("theta must be finite")
        if self.dc_delays is not None:
            if mode != "DC":
                raise ConfigurationError("delays are only used in DC mode")
            for k in self.dc_delays:
                if k not in ("p", "q", "r", "s"):
                    raise ConfigurationError(f"unknown delay channel {k!r}")

    def with_theta(self, theta: float) -> "CascadeSpec":
        return replace(self, theta=float(theta))

    def with_gammas(self, gamma1: float, gamma2: float) -> "CascadeSpec":
        return replace(self, stage1=self.stage1.with_gamma(gamma1), gamma2=float(gamma2),
                       stage2=None if self.stage2 is None else self.stage2.with_gamma(gamma2))

    def with_grid(self, grid: TimeGrid) -> "CascadeSpec":
        return replace(self, stage1=self.stage1.with_grid(grid),
                       stage2=None if self.stage2 is None else self.stage2.with_grid(grid))


def default_delays(stage: StageSpec) -> dict:
    """Delay of each channel so that all of them leave together with the slowest one."""
    names = [c for c in ("p", "q", "r", "s") if c in stage.channels]
    slowest = max(stage.beta(c) for c in names)
    return {c: (slowest - stage.beta(c)) * stage.length for c in names}


def delays(spec: CascadeSpec) -> dict:
    if spec.mode != "DC":
        return {c: 0.0 for c in spec.stage1.channels}
    d = default_delays(spec.stage1)
    if spec.dc_delays:
        d.update({k: float(v) for k, v in spec.dc_delays.items()})
    return d


def _derived(spec: CascadeSpec) -> StageSpec:
    s1 = spec.stage1
    L = s1.length
    d = delays(spec)
    ch = {c: p.beta_prime for c, p in s1.channels.items()}
    if spec.mode == "RC":
        new = dict(ch)
        new["r"], new["s"] = ch["s"], ch["r"]
        # pumps keep their slowness relative to the signal they co-move with
        new["p"] = ch["p"] + (new["s"] - ch["s"])
        if "q" in ch:
            new["q"] = ch["q"] + (new["r"] - ch["r"])
    else:
        new = dict(ch)
    pump_p = s1.pump_p.moved(s1.beta("p") * L + d.get("p", 0.0))
    if spec.stage2_chirp_p is not None:
        pump_p = pump_p.with_chirp(spec.stage2_chirp_p)
    pump_q = None
    if s1.pump_q is not None:
        pump_q = s1.pump_q.moved(s1.beta("q") * L + d.get("q", 0.0))
        if spec.stage2_chirp_q is not None:
            pump_q = pump_q.with_chirp(spec.stage2_chirp_q)
    gamma = s1.gamma if spec.gamma2 is None else spec.gamma2
    return replace(s1, gamma=float(gamma), channels={c: ChannelParams(v) for c, v in new.items()},
                   pump_p=pump_p, pump_q=pump_q)


def derive_stage2(spec: CascadeSpec) -> StageSpec:
    if spec.stage2 is None:
        return _derived(spec)
    s1, s2 = spec.stage1, spec.stage2
    s1.grid.require_same(s2.grid, "cascade stages")
    tol = 1e-12
    if spec.mode == "RC":
        ok = (abs(s2.beta("r") - s1.beta("s")) < tol and abs(s2.beta("s") - s1.beta("r")) < tol)
    else:
        ok = all(abs(s2.beta(c) - s1.beta(c)) < tol for c in ("r", "s"))
    if not ok:
        raise ConfigurationError(f"explicit stage2 violates the {spec.mode} slowness relation")
    if spec.gamma2 is not None:
        s2 = s2.with_gamma(spec.gamma2)
    return s2


def _delay_operator(grid: TimeGrid, d: float, phase: complex = 1.0):
    """(shift, phase) for whole-sample delays, else a dense spectral delay."""
    k = d / grid.dt
    if abs(k - round(k)) < 1e-9:
        return (int(round(k)), phase)
    n = grid.n_samples
    f = np.fft.fft(np.eye(n), axis=0)
    return phase * np.fft.ifft(np.exp(-1j * grid.omega * d)[:, None] * f, axis=0)


def interstage_operator(spec: CascadeSpec) -> TransferMatrix:
    g = spec.stage1.grid
    d = delays(spec)
    for c in ("r", "s"):
        if abs(d.get(c, 0.0)) > 0.5 * g.length:
            raise ConfigurationError(f"delay {d[c]} on channel {c} exceeds half the time window")
    return TransferMatrix.channel_map(g, _delay_operator(g, d.get("r", 0.0), np.exp(1j * spec.theta)),
                                      _delay_operator(g, d.get("s", 0.0)))


def compose(T1: TransferMatrix, D: TransferMatrix, T2: TransferMatrix) -> TransferMatrix:
    """T2 @ D @ T1."""
    return T2 @ (D @ T1)


def auto_cascade_grid(spec: CascadeSpec, dt: float = DEFAULT_DT) -> CascadeSpec:
    """Same cascade on a window covering both stages."""
    s2 = derive_stage2(spec)
    return spec.with_grid(stage_grid([spec.stage1, s2], dt))


@dataclass(frozen=True, eq=False)
class CascadeResult:
    transfer: TransferMatrix
    schmidt: SchmidtDecomposition
    report: dict
    stage1: Optional[TransferMatrix] = None
    stage2: Optional[TransferMatrix] = None

    def __iter__(self):
        # unpacks as (transfer, schmidt)
        return iter((self.transfer, self.schmidt))

    def to_json(self, **kw) -> str:
        return json.dumps(self.report, **kw)


def _grid_dict(g: TimeGrid):
    return {"n_samples": g.n_samples, "dt": g.dt, "t_start": g.t_start}


def _shift_env(env: Envelope, D: TransferMatrix, channel: str) -> Envelope:
    n = D.n
    x = np.zeros(2 * n, complex)
    o = 0 if channel == "r" else n
    x[o:o + n] = env.samples
    y = D.matvec(x)[o:o + n]
    return Envelope(env.grid, y, channel)


def overlap_diagnostics(sd1: SchmidtDecomposition, sd2: SchmidtDecomposition, D: TransferMatrix) -> dict:
    """Mode matching between stage-1 outputs (after the coupler) and stage-2 inputs."""
    out = {"s_mode1": None, "r_mode1": None}
    if sd1.n_kept and sd2.n_kept:
        out["s_mode1"] = mode_overlap(_shift_env(sd1.modes_s_out[0], D, "s"), sd2.modes_s_in[0])
        out["r_mode1"] = mode_overlap(_shift_env(sd1.modes_r_out[0], D, "r"), sd2.modes_r_in[0])
    return out


def run_cascade(spec: CascadeSpec, with_defects: bool = True) -> CascadeResult:
    """Build both stages, compose, decompose and report."""
    s1 = spec.stage1
    s2 = derive_stage2(spec)
    try:
        T1 = build_transfer_matrix(s1)
    except Exception as exc:
        exc.args = (f"stage1: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    try:
        T2 = build_transfer_matrix(s2)
    except Exception as exc:
        exc.args = (f"stage2: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    D = interstage_operator(spec)
    T = compose(T1, D, T2)
    sd = schmidt_decompose(T)
    sd1 = schmidt_decompose(T1)
    sd2 = schmidt_decompose(T2)
    k = min(len(sd.rho), REPORT_MODES)
    report = {
        "mode": spec.mode,
        "theta": float(spec.theta),
        "gamma1": float(s1.gamma),
        "gamma2": float(s2.gamma),
        "S": sd.selectivity,
        "rho_sq": [float(v) for v in sd.rho_sq[:k]],
        "tau_sq": [float(v) for v in sd.tau_sq[:k]],
        "overlap_diag": overlap_diagnostics(sd1, sd2, D),
        "grid": _grid_dict(s1.grid),
        "stage_ce1": [sd1.ce1, sd2.ce1],
        "stage_S": [sd1.selectivity, sd2.selectivity],
        "n_kept": sd.n_kept,
    }
    if with_defects:
        report["unitarity_defect"] = {"stage1": T1.unitarity_defect(), "stage2": T2.unitarity_defect(),
                                      "composite": T.unitarity_defect()}
    return CascadeResult(transfer=T, schmidt=sd, report=report, stage1=T1, stage2=T2)


def stage_report(stage: StageSpec, with_defect: bool = True):
    """Single-stage analogue of run_cascade: (TransferMatrix, SchmidtDecomposition, report)."""
    T = build_transfer_matrix(stage)
    sd = schmidt_decompose(T)
    k = min(len(sd.rho), REPORT_MODES)
    report = {
        "mode": "single",
        "gamma1": float(stage.gamma),
        "S": sd.selectivity,
        "ce1": sd.ce1,
        "rho_sq": [float(v) for v in sd.rho_sq[:k]],
        "tau_sq": [float(v) for v in sd.tau_sq[:k]],
        "grid": _grid_dict(stage.grid),
        "n_kept": sd.n_kept,
    }
    if with_defect:
        report["unitarity_defect"] = T.unitarity_defect()
    return T, sd, report


class CascadeResponse:
    """Conversion and transmission blocks of a cascade as functions of theta.

    Only s-input columns that can meet a pump are propagated:
    G_rs(theta) = X_r + exp(i theta) Y_r and G_ss(theta) = X_s + exp(i theta) Y_s,
    where X follows the s path of stage 1 and Y the converted (r) path.
    """

    def __init__(self, spec: CascadeSpec):
        self.spec = spec
        s1 = spec.stage1
        s2 = derive_stage2(spec)
        self.stage2 = s2
        g = s1.grid
        n = g.n_samples
        self.grid = g
        d = delays(spec)
        cols = self._input_columns(s1, s2, d.get("s", 0.0))
        self.cols = cols
        k = len(cols)
        x = np.zeros((n, k), complex)
        x[cols, np.arange(k)] = 1.0
        r1, s1o = propagate(s1, np.zeros_like(x), x)
        D = interstage_operator(spec.with_theta(0.0))
        both = D.matvec(np.concatenate([r1, s1o]))
        r1d, s1d = both[:n], both[n:]
        zr = np.zeros_like(r1d)
        r2, s2o = propagate(s2, np.concatenate([zr, r1d], axis=1), np.concatenate([s1d, zr], axis=1))
        self.Xr, self.Yr = r2[:, :k], r2[:, k:]
        self.Xs, self.Ys = s2o[:, :k], s2o[:, k:]
        live = np.nonzero(np.any(self.Xr != 0, axis=1) | np.any(self.Yr != 0, axis=1))[0]
        self.rows = live
        self.Xr, self.Yr = self.Xr[live], self.Yr[live]

    @staticmethod
    def _input_columns(s1, s2, delay_s):
        n = s1.grid.n_samples
        p1, p2 = plan_steps(s1), plan_steps(s2)
        k = delay_s / s1.grid.dt
        if not (p1.lattice and p2.lattice and abs(k - round(k)) < 1e-9):
            return np.arange(n)
        l1 = build_lattice(p1, evolve_pumps(s1, p1.n_z, p1.frame))
        l2 = build_lattice(p2, evolve_pumps(s2, p2.n_z, p2.frame))
        back = (l2.in_index("s") - int(round(k)) - l1.out_shift("s")) % n
        return np.union1d(l1.in_index("s"), back)

    def conversion(self, theta: float) -> np.ndarray:
        return self.Xr + np.exp(1j * theta) * self.Yr

    def rho_sq(self, theta: float) -> np.ndarray:
        a = self.conversion(theta)
        if a.size == 0:
            return np.zeros(1)
        return np.linalg.svd(a, compute_uv=False) ** 2

    def ce1(self, theta: float) -> float:
        return float(self.rho_sq(theta)[0])

    def selectivity(self, theta: float) -> float:
        return selectivity(self.rho_sq(theta))

    def leading_modes(self, theta: float, n_modes: int = 1):
        """(rho_sq, r-output modes, s-input modes, s-output modes) of the composite."""
        g = self.grid
        n = g.n_samples
        sq = math.sqrt(g.dt)
        u, sv, vh = np.linalg.svd(self.conversion(theta), full_matrices=False)
        mask = degeneracy_mask(sv)
        u, v = phase_gauge(u[:, :n_modes], vh[:n_modes].conj().T, mask[:n_modes])
        r_out, s_in, s_out = [], [], []
        gss = self.Xs + np.exp(1j * theta) * self.Ys
        for j in range(n_modes):
            a = np.zeros(n, complex)
            a[self.rows] = u[:, j]
            b = np.zeros(n, complex)
            b[self.cols] = v[:, j]
            tau = math.sqrt(max(0.0, 1.0 - sv[j] ** 2))
            c = gss @ v[:, j]
            c = c / tau if tau > 1e-6 else c
            r_out.append(Envelope(g, a / sq, "r"))
            s_in.append(Envelope(g, b / sq, "s"))
            s_out.append(Envelope(g, c / sq, "s"))
        return sv ** 2, r_out, s_in, s_out
