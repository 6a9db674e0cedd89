"""Green-function transfer matrices of the (r, s) signal pair.

A matrix acts on the stacked sample vector [r; s] of length 2N. It is
stored as U = P + E: P shifts each channel circularly and multiplies it by a
constant (possibly zero), and E is a dense `core` on the index sets
`rows` x `cols`. Only samples that ever meet a pump need dense storage, so
long walk-off stages stay affordable while every block is still available
densely on request.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, Envelope, StageSpec, TimeGrid, SIGNALS
from .propagator import (PumpField, build_lattice, evolve_pumps, lattice_sweep, plan_steps,
                         propagate)

MAGIC = b"TMIX"
VERSION = 1
DENSE_LIMIT = 2048  # exact spectral norm below this size, Frobenius bound above
BATCH = 256


def _channel(idx, n):
    return idx // n


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    grid: TimeGrid
    shift: tuple = (0, 0)
    phase: tuple = (1.0, 1.0)
    rows: np.ndarray = None
    cols: np.ndarray = None
    core: np.ndarray = None

    def __post_init__(self):
        n2 = 2 * self.grid.n_samples
        rows = np.zeros(0, np.int64) if self.rows is None else np.asarray(self.rows, np.int64)
        cols = np.zeros(0, np.int64) if self.cols is None else np.asarray(self.cols, np.int64)
        core = np.zeros((len(rows), len(cols)), complex) if self.core is None else np.asarray(self.core, complex)
        if core.shape != (len(rows), len(cols)):
            raise ConfigurationError("core shape does not match its index sets")
        for idx in (rows, cols):
            if len(idx) and (idx.min() < 0 or idx.max() >= n2 or np.any(np.diff(idx) <= 0)):
                raise ConfigurationError("index sets must be sorted, unique and inside [0, 2N)")
        for a in (rows, cols, core):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "shift", tuple(int(s) % self.grid.n_samples for s in self.shift))
        object.__setattr__(self, "phase", tuple(complex(p) for p in self.phase))

    # -- basic maps ---------------------------------------------------------
    @property
    def n(self) -> int:
        return self.grid.n_samples

    def p_map(self, idx):
        """Image index and factor of the base operator on stacked indices."""
        idx = np.asarray(idx, np.int64)
        n = self.n
        c = idx // n
        sh = np.array(self.shift)[c]
        ph = np.array(self.phase)[c]
        return c * n + (idx % n + sh) % n, ph

    def p_inverse(self, idx):
        idx = np.asarray(idx, np.int64)
        n = self.n
        c = idx // n
        sh = np.array(self.shift)[c]
        return c * n + (idx % n - sh) % n

    def matvec(self, x):
        """U @ x for x of shape (2N,) or (2N, k)."""
        x = np.asarray(x, complex)
        n = self.n
        y = np.empty_like(x)
        for c in range(2):
            blk = x[c * n:(c + 1) * n]
            y[c * n:(c + 1) * n] = self.phase[c] * np.roll(blk, self.shift[c], axis=0)
        if len(self.rows):
            y[self.rows] += self.core @ x[self.cols]
        return y

    def rmatvec(self, y):
        """U^H @ y."""
        y = np.asarray(y, complex)
        n = self.n
        x = np.empty_like(y)
        for c in range(2):
            blk = y[c * n:(c + 1) * n]
            x[c * n:(c + 1) * n] = np.conj(self.phase[c]) * np.roll(blk, -self.shift[c], axis=0)
        if len(self.rows):
            x[self.cols] += self.core.conj().T @ y[self.rows]
        return x

    def block(self, out_ch: str, in_ch: str) -> np.ndarray:
        """Dense N x N Green block G_{out,in}."""
        n = self.n
        i, j = SIGNALS.index(out_ch), SIGNALS.index(in_ch)
        g = np.zeros((n, n), complex)
        if i == j and self.phase[i] != 0:
            k = np.arange(n)
            g[(k + self.shift[i]) % n, k] = self.phase[i]
        rsel = _channel(self.rows, n) == i
        csel = _channel(self.cols, n) == j
        if rsel.any() and csel.any():
            g[np.ix_(self.rows[rsel] - i * n, self.cols[csel] - j * n)] += self.core[np.ix_(rsel, csel)]
        return g

    @property
    def G_rr(self):
        return self.block("r", "r")

    @property
    def G_rs(self):
        return self.block("r", "s")

    @property
    def G_sr(self):
        return self.block("s", "r")

    @property
    def G_ss(self):
        return self.block("s", "s")

    def dense(self) -> np.ndarray:
        return np.block([[self.G_rr, self.G_rs], [self.G_sr, self.G_ss]])

    # -- compact views ------------------------------------------------------
    def closed_columns(self, channels=(0, 1)) -> np.ndarray:
        """Columns on which U differs from a bijective phase map, closed under P.

        Outside this set U maps e_j to phase * e_P(j), and those images are
        orthogonal to everything the set maps to.
        """
        n = self.n
        parts = [self.cols, self.p_inverse(self.rows)]
        for c in range(2):
            if self.phase[c] == 0:
                parts.append(c * n + np.arange(n))
        cc = np.unique(np.concatenate(parts))
        return cc[np.isin(_channel(cc, n), channels)]

    def submatrix(self, row_idx, col_idx) -> np.ndarray:
        """U[row_idx, col_idx] as a dense array (sorted unique indices)."""
        row_idx = np.asarray(row_idx, np.int64)
        col_idx = np.asarray(col_idx, np.int64)
        out = np.zeros((len(row_idx), len(col_idx)), complex)
        img, ph = self.p_map(col_idx)
        pos = np.searchsorted(row_idx, img)
        pos_c = np.minimum(pos, max(len(row_idx) - 1, 0))
        hit = (pos < len(row_idx)) & (row_idx[pos_c] == img) if len(row_idx) else np.zeros(len(col_idx), bool)
        out[pos[hit], np.nonzero(hit)[0]] = ph[hit]
        ri = np.searchsorted(row_idx, self.rows)
        ci = np.searchsorted(col_idx, self.cols)
        rk = (ri < len(row_idx)) & (row_idx[np.minimum(ri, len(row_idx) - 1)] == self.rows) if len(row_idx) else np.zeros(0, bool)
        ck = (ci < len(col_idx)) & (col_idx[np.minimum(ci, len(col_idx) - 1)] == self.cols) if len(col_idx) else np.zeros(0, bool)
        if rk.any() and ck.any():
            out[np.ix_(ri[rk], ci[ck])] += self.core[np.ix_(rk, ck)]
        return out

    def diagonal_block(self, channel: str):
        """Closed compact form of G_cc: (row_idx, col_idx, A, n_trivial, |phase|)."""
        c = SIGNALS.index(channel)
        n = self.n
        cols = self.closed_columns((c,))
        rows = np.unique(self.p_map(cols)[0])
        sel = _channel(self.rows, n) == c
        rows = np.union1d(rows, self.rows[sel])
        a = self.submatrix(rows, cols)
        return rows - c * n, cols - c * n, a, n - len(cols), abs(self.phase[c])

    def off_block(self, out_ch: str, in_ch: str):
        """Compact form of an off-diagonal block: (row_idx, col_idx, A); zero elsewhere."""
        n = self.n
        i, j = SIGNALS.index(out_ch), SIGNALS.index(in_ch)
        rsel = _channel(self.rows, n) == i
        csel = _channel(self.cols, n) == j
        return self.rows[rsel] - i * n, self.cols[csel] - j * n, self.core[np.ix_(rsel, csel)]

    # -- algebra ------------------------------------------------------------
    def compose(self, other: "TransferMatrix") -> "TransferMatrix":
        """self @ other (apply `other` first)."""
        self.grid.require_same(other.grid, "composed matrices")
        a, b = self, other
        n = self.n
        shift = tuple((a.shift[c] + b.shift[c]) % n for c in range(2))
        phase = tuple(a.phase[c] * b.phase[c] for c in range(2))
        pa_rb, ph_a = a.p_map(b.rows)
        pbinv_ca = b.p_inverse(a.cols)
        rows = np.union1d(pa_rb, a.rows)
        cols = np.union1d(b.cols, pbinv_ca)
        core = np.zeros((len(rows), len(cols)), complex)
        if len(b.rows):
            # Pa Eb
            core[np.ix_(np.searchsorted(rows, pa_rb), np.searchsorted(cols, b.cols))] += ph_a[:, None] * b.core
        if len(a.rows):
            # Ea Pb
            img, ph_b = b.p_map(pbinv_ca)
            order = np.searchsorted(a.cols, img)
            core[np.ix_(np.searchsorted(rows, a.rows), np.searchsorted(cols, pbinv_ca))] += a.core[:, order] * ph_b[None, :]
            # Ea Eb
            common, ia, ib = np.intersect1d(a.cols, b.rows, return_indices=True)
            if len(common):
                core[np.ix_(np.searchsorted(rows, a.rows), np.searchsorted(cols, b.cols))] += a.core[:, ia] @ b.core[ib, :]
        return TransferMatrix(self.grid, shift, phase, rows, cols, core)

    def __matmul__(self, other):
        return self.compose(other)

    def unitarity_defect(self) -> float:
        """||U^H U - I||, spectral norm (Frobenius bound for very large active blocks)."""
        cols = self.closed_columns()
        rows = np.union1d(self.p_map(cols)[0], self.rows)
        a = self.submatrix(rows, cols)
        h = a.conj().T @ a
        h[np.diag_indices_from(h)] -= 1.0
        if len(cols) <= DENSE_LIMIT:
            d = float(np.linalg.norm(h, 2)) if len(cols) else 0.0
        else:
            d = float(np.linalg.norm(h))
        n = self.n
        for c in range(2):
            if np.sum(_channel(cols, n) == c) < n:
                d = max(d, abs(abs(self.phase[c]) ** 2 - 1.0))
        return d

    # -- construction -------------------------------------------------------
    @classmethod
    def identity(cls, grid: TimeGrid) -> "TransferMatrix":
        return cls(grid)

    @classmethod
    def from_dense(cls, grid: TimeGrid, u) -> "TransferMatrix":
        u = np.asarray(u, complex)
        n2 = 2 * grid.n_samples
        if u.shape != (n2, n2):
            raise ConfigurationError(f"dense matrix must be {n2} x {n2}")
        idx = np.arange(n2)
        return cls(grid, (0, 0), (0.0, 0.0), idx, idx, u)

    @classmethod
    def channel_map(cls, grid: TimeGrid, r_op, s_op) -> "TransferMatrix":
        """Block-diagonal matrix; each operator is (shift, phase) or a dense N x N array."""
        n = grid.n_samples
        shift, phase, rows, cores = [0, 0], [1.0, 1.0], [], []
        for c, op in enumerate((r_op, s_op)):
            if isinstance(op, np.ndarray):
                if op.shape != (n, n):
                    raise ConfigurationError("channel operator must be N x N")
                phase[c] = 0.0
                rows.append(c * n + np.arange(n))
                cores.append(op)
            else:
                shift[c], phase[c] = op
        if not rows:
            return cls(grid, tuple(shift), tuple(phase))
        idx = np.concatenate(rows)
        core = np.zeros((len(idx), len(idx)), complex)
        o = 0
        for blk in cores:
            k = blk.shape[0]
            core[o:o + k, o:o + k] = blk
            o += k
        return cls(grid, tuple(shift), tuple(phase), idx, idx, core)

    # -- binary dump --------------------------------------------------------
    def save(self, path):
        """Write the dense matrix: header then blocks rr, rs, sr, ss, row-major (re, im) f64 LE."""
        n = self.n
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIdd", VERSION, n, self.grid.dt, self.grid.t_start))
            for out_ch, in_ch in (("r", "r"), ("r", "s"), ("s", "r"), ("s", "s")):
                fh.write(np.ascontiguousarray(self.block(out_ch, in_ch), dtype="<c16").tobytes())

    @classmethod
    def load(cls, path) -> "TransferMatrix":
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise ConfigurationError(f"{path} is not a transfer-matrix dump")
            version, n, dt, t0 = struct.unpack("<IIdd", fh.read(24))
            if version != VERSION:
                raise ConfigurationError(f"unsupported dump version {version}")
            blocks = [np.frombuffer(fh.read(16 * n * n), dtype="<c16").reshape(n, n) for _ in range(4)]
        grid = TimeGrid(n, dt, t0)
        return cls.from_dense(grid, np.block([[blocks[0], blocks[1]], [blocks[2], blocks[3]]]))


def _stage_pumps(stage, pumps):
    plan = plan_steps(stage)
    if pumps is None:
        pumps = evolve_pumps(stage, plan.n_z, plan.frame)
    return plan, pumps


def _lattice_columns(stage, plan, pumps, channels=("r", "s")):
    """Propagate identity columns for the active characteristics of `channels`.

    Returns (lat, cols_stacked, R, S) with R, S compact over active rows.
    Columns are ordered by the step at which they first meet a pump so the
    kernel can skip columns that are still untouched.
    """
    lat = build_lattice(plan, pumps)
    n = lat.n
    col_ch, col_j, col_enter = [], [], []
    for c in channels:
        cnt = lat.count[c]
        col_ch.append(np.full(cnt, SIGNALS.index(c)))
        col_j.append(np.arange(cnt))
        col_enter.append(lat.enter[c])
    col_ch = np.concatenate(col_ch)
    col_j = np.concatenate(col_j)
    col_enter = np.concatenate(col_enter)
    order = np.argsort(col_enter, kind="stable")
    col_ch, col_j, col_enter = col_ch[order], col_j[order], col_enter[order]
    k = len(order)
    R = np.zeros((lat.count["r"], k), complex)
    S = np.zeros((lat.count["s"], k), complex)
    isr = col_ch == 0
    R[col_j[isr], np.nonzero(isr)[0]] = 1.0
    S[col_j[~isr], np.nonzero(~isr)[0]] = 1.0
    n_active = np.searchsorted(col_enter, np.arange(plan.n_z + 1), side="right")
    lattice_sweep(lat, pumps, R, S, n_active)
    first = np.array([lat.first["r"], lat.first["s"]])
    stacked = col_ch * n + (first[col_ch] + col_j) % n
    return lat, stacked, R, S


def build_transfer_matrix(stage: StageSpec, pumps: Optional[PumpField] = None) -> TransferMatrix:
    """Green-function matrix of one stage from propagated impulse columns."""
    plan, pumps = _stage_pumps(stage, pumps)
    g = stage.grid
    n = g.n_samples
    if plan.lattice and pumps.n_z == plan.n_z and pumps.frame == plan.frame:
        lat, cols, R, S = _lattice_columns(stage, plan, pumps)
        ordc = np.argsort(cols)
        cols = cols[ordc]
        out_r = lat.out_index("r")
        out_s = n + lat.out_index("s")
        rows = np.concatenate([out_r, out_s])
        full = np.concatenate([R, S], axis=0)[:, ordc]
        ordr = np.argsort(rows)
        rows = rows[ordr]
        full = full[ordr]
        shift = (lat.out_shift("r"), lat.out_shift("s"))
        tmp = TransferMatrix(g, shift, (1.0, 1.0))
        img, _ = tmp.p_map(cols)
        full[np.searchsorted(rows, img), np.arange(len(cols))] -= 1.0
        return TransferMatrix(g, shift, (1.0, 1.0), rows, cols, full)
    # general path: every impulse column through the spectral engine
    u = np.zeros((2 * n, 2 * n), complex)
    for c0 in range(0, 2 * n, BATCH):
        c1 = min(2 * n, c0 + BATCH)
        x = np.zeros((2 * n, c1 - c0), complex)
        x[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
        try:
            ro, so = propagate(stage, x[:n], x[n:], pumps)
        except Exception as exc:
            exc.args = (f"{exc.args[0] if exc.args else exc} (columns {c0}..{c1 - 1})",) + exc.args[1:]
            raise
        u[:n, c0:c1] = ro
        u[n:, c0:c1] = so
    return TransferMatrix.from_dense(g, u)


def apply_transfer(T: TransferMatrix, r_in: Envelope, s_in: Envelope):
    T.grid.require_same(r_in.grid, "matrix and r input")
    T.grid.require_same(s_in.grid, "matrix and s input")
    y = T.matvec(np.concatenate([r_in.samples, s_in.samples]))
    n = T.n
    return Envelope(T.grid, y[:n], "r"), Envelope(T.grid, y[n:], "s")


def rs_block(stage: StageSpec, pumps: Optional[PumpField] = None):
    """Compact conversion block G_rs from s-input columns only: (row_idx, col_idx, A)."""
    plan, pumps = _stage_pumps(stage, pumps)
    n = stage.grid.n_samples
    if plan.lattice and pumps.n_z == plan.n_z and pumps.frame == plan.frame:
        lat, cols, R, S = _lattice_columns(stage, plan, pumps, channels=("s",))
        ordc = np.argsort(cols)
        rows = lat.out_index("r")
        ordr = np.argsort(rows)
        return rows[ordr], cols[ordc] - n, R[ordr][:, ordc]
    x = np.eye(n, dtype=complex)
    ro, _ = propagate(stage, np.zeros_like(x), x, pumps)
    idx = np.arange(n)
    return idx, idx, ro
