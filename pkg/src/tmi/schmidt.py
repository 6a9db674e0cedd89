"""Schmidt (singular-value) decomposition of the Green blocks and the selectivity figure of merit.

For a lossless stage the four blocks share their mode sets:

    G_rr =  sum tau_n Psi_n psi_n^H      G_rs = sum rho_n Psi_n phi_n^H
    G_sr = -sum rho_n Phi_n psi_n^H      G_ss = sum tau_n Phi_n phi_n^H

The SVD of G_rs fixes rho_n, Psi_n and phi_n; the other families follow by
projection (Phi_n = G_ss phi_n / tau_n, psi_n = G_rr^H Psi_n / tau_n), so all
four sets stay consistently phased. tau_n come from an independent SVD of
G_ss and are paired with rho_n by order.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .core import ConfigurationError, Envelope, NumericalInstabilityError, inner_product
from .greenfn import TransferMatrix

KEEP_THRESHOLD = 1e-6
DEGENERACY_TOL = 1e-8
PAIRING_TOL = 1e-3
PAIRING_FLOOR = 1e-3
TAU_FLOOR = 1e-6


class SchmidtPairingError(NumericalInstabilityError):
    """rho_n^2 + tau_n^2 deviates from one."""

    def __init__(self, n, deviation):
        super().__init__(f"Schmidt pair {n}: rho^2 + tau^2 - 1 = {deviation:.3e}")
        self.n = n
        self.deviation = deviation


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    grid: object
    rho: np.ndarray
    tau: np.ndarray
    modes_s_in: List[Envelope]
    modes_s_out: List[Envelope]
    modes_r_in: List[Envelope]
    modes_r_out: List[Envelope]
    n_kept: int
    degenerate: tuple = field(default=())

    @property
    def rho_sq(self) -> np.ndarray:
        return self.rho ** 2

    @property
    def tau_sq(self) -> np.ndarray:
        return self.tau ** 2

    @property
    def selectivity(self) -> float:
        return selectivity(self.rho_sq)

    @property
    def ce1(self) -> float:
        return float(self.rho_sq[0]) if len(self.rho) else 0.0

    def families(self):
        return {"s_in": self.modes_s_in, "s_out": self.modes_s_out,
                "r_in": self.modes_r_in, "r_out": self.modes_r_out}


def selectivity(rho_sq) -> float:
    """S = rho_1^4 / sum(rho_j^2), with rho_sq sorted descending."""
    rho_sq = np.asarray(rho_sq, float)
    if rho_sq.size == 0:
        return 0.0
    total = float(np.sum(rho_sq))
    if total <= 0:
        return 0.0
    return float(rho_sq[0] ** 2 / total)


def mode_overlap(a: Envelope, b: Envelope) -> float:
    """|<a, b>|^2 for unit-energy envelopes."""
    for env, name in ((a, "first"), (b, "second")):
        if abs(env.energy - 1.0) > 1e-6:
            raise ConfigurationError(f"{name} envelope is not normalized (energy {env.energy:.8g})")
    return float(abs(inner_product(a, b)) ** 2)


def _fix_phase(v):
    """Scale a vector so its largest-magnitude sample is real and positive."""
    k = int(np.argmax(np.abs(v)))
    return v * np.exp(-1j * np.angle(v[k]))


def phase_gauge(u, v, degenerate_mask):
    """Rotate paired singular vectors so each v column peaks real-positive."""
    u = u.copy()
    v = v.copy()
    for k in range(v.shape[1]):
        if degenerate_mask[k]:
            continue
        j = int(np.argmax(np.abs(v[:, k])))
        ph = np.exp(-1j * np.angle(v[j, k]))
        v[:, k] *= ph
        u[:, k] *= ph
    return u, v


def degeneracy_mask(sv, tol=DEGENERACY_TOL):
    d = np.abs(np.diff(sv)) < tol
    mask = np.zeros(len(sv), bool)
    mask[:-1] |= d
    mask[1:] |= d
    return mask


def transmission_values(T: TransferMatrix) -> np.ndarray:
    """Singular values of G_ss, ascending, over all N s samples."""
    _, _, a, n_trivial, ph = T.diagonal_block("s")
    sv = np.linalg.svd(a, compute_uv=False) if a.size else np.zeros(0)
    return np.sort(np.concatenate([sv, np.full(n_trivial, ph)]))


def schmidt_decompose(T: TransferMatrix, keep: float = KEEP_THRESHOLD,
                      check_pairing: bool = True) -> SchmidtDecomposition:
    g = T.grid
    n = T.n
    sq = np.sqrt(g.dt)
    r_rows, s_cols, a = T.off_block("r", "s")
    if a.size:
        try:
            u, rho, vh = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalInstabilityError(f"SVD of the conversion block failed: {exc}")
    else:
        u, rho, vh = np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0))
    tau_all = transmission_values(T)
    m = min(len(rho), n)
    rho = rho[:m]
    tau = tau_all[:m]
    if len(rho) < 1:
        rho = np.zeros(1)
        tau = tau_all[:1]
    if check_pairing:
        dev = rho ** 2 + tau ** 2 - 1.0
        for k in np.nonzero((rho ** 2 > PAIRING_FLOOR) & (np.abs(dev) > PAIRING_TOL))[0]:
            raise SchmidtPairingError(int(k), float(dev[k]))

    n_kept = int(np.sum(rho ** 2 > keep))
    degen = degeneracy_mask(rho)
    fam = {k: [] for k in ("s_in", "s_out", "r_in", "r_out")}
    if n_kept:
        uk, vk = phase_gauge(u[:, :n_kept], vh[:n_kept].conj().T, degen[:n_kept])
        phi = np.zeros((n, n_kept), complex)
        phi[s_cols] = vk
        psi_out = np.zeros((n, n_kept), complex)
        psi_out[r_rows] = uk
        x = np.concatenate([np.zeros((n, n_kept)), phi])
        big_phi = T.matvec(x)[n:]
        y = np.concatenate([psi_out, np.zeros((n, n_kept))])
        small_psi = T.rmatvec(y)[:n]
        tk = tau[:n_kept]
        ok = tk > TAU_FLOOR
        big_phi[:, ok] /= tk[ok]
        small_psi[:, ok] /= tk[ok]
        if not ok.all():
            _fill_from_sr(T, rho[:n_kept], ~ok, big_phi, small_psi)
        for k in range(n_kept):
            fam["s_in"].append(Envelope(g, phi[:, k] / sq, "s"))
            fam["r_out"].append(Envelope(g, psi_out[:, k] / sq, "r"))
            fam["s_out"].append(Envelope(g, big_phi[:, k] / sq, "s"))
            fam["r_in"].append(Envelope(g, small_psi[:, k] / sq, "r"))
    close = np.abs(np.diff(rho[:max(n_kept, 1)])) < DEGENERACY_TOL
    pairs = tuple(int(k) for k in np.nonzero(close)[0])
    return SchmidtDecomposition(grid=g, rho=rho, tau=tau, modes_s_in=fam["s_in"], modes_s_out=fam["s_out"],
                                modes_r_in=fam["r_in"], modes_r_out=fam["r_out"], n_kept=n_kept,
                                degenerate=pairs)


def _fill_from_sr(T, rho, mask, big_phi, small_psi):
    """Fully converted modes (tau ~ 0): take Phi, psi from the SVD of G_sr = -sum rho Phi psi^H."""
    n = T.n
    s_rows, r_cols, b = T.off_block("s", "r")
    u, sv, vh = np.linalg.svd(b, full_matrices=False)
    for k in np.nonzero(mask)[0]:
        j = int(np.argmin(np.abs(sv - rho[k])))
        col_phi = np.zeros(n, complex)
        col_phi[s_rows] = -u[:, j]
        col_psi = np.zeros(n, complex)
        col_psi[r_cols] = vh[j].conj()
        big_phi[:, k] = col_phi
        small_psi[:, k] = col_psi


def reconstruct_rs(sd: SchmidtDecomposition) -> np.ndarray:
    """sum_n rho_n Psi_n phi_n^H in the sample basis (kept modes only)."""
    if not sd.n_kept:
        return None
    dt = sd.modes_s_in[0].grid.dt
    big = np.stack([m.samples for m in sd.modes_r_out], axis=1)
    small = np.stack([m.samples for m in sd.modes_s_in], axis=1)
    return dt * (big * sd.rho[:sd.n_kept]) @ small.conj().T


def export_modes_csv(sd: SchmidtDecomposition, directory, n_modes=None, prefix="mode"):
    """One CSV per mode family: column t, then re_k, im_k for each mode k."""
    os.makedirs(directory, exist_ok=True)
    k = sd.n_kept if n_modes is None else min(n_modes, sd.n_kept)
    paths = []
    for name, modes in sd.families().items():
        path = os.path.join(directory, f"{prefix}_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{p}_{j + 1}" for j in range(k) for p in ("re", "im")])
            cols = [sd.grid.times] + [c for m in modes[:k] for c in (m.samples.real, m.samples.imag)]
            w.writerows(np.column_stack(cols).tolist())
        paths.append(path)
    return paths


def conversion_spectrum(stage, pumps=None) -> np.ndarray:
    """rho_n^2 of a single stage, computed from s-input columns only."""
    from .greenfn import rs_block
    _, _, a = rs_block(stage, pumps)
    return np.linalg.svd(a, compute_uv=False) ** 2
