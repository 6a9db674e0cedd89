"""Grids, envelopes, pulse shapes and the stage description shared by every module.

Units: the pump width sets the time unit and the medium length sets the
length unit, so group slownesses are dimensionless walk-off rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.fft import next_fast_len
from scipy.special import erfc

CHANNELS = ("p", "q", "r", "s")
SIGNALS = ("r", "s")

DEFAULT_DT = 1.0 / 16.0
# fraction of pulse energy allowed outside the window
CLIP_TOL = 1e-6
# amplitude (relative to peak) below which a pump is treated as absent
SUPPORT_EPS = 1e-13
N_CHIRP = 4


class ConfigurationError(ValueError):
    """Invalid parameters, mismatched grids or a window that is too small."""


class NumericalInstabilityError(RuntimeError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    """Uniform periodic time grid, t_k = t_start + k*dt."""

    n_samples: int
    dt: float
    t_start: float = 0.0

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ConfigurationError(f"n_samples must be an integer >= 2, got {self.n_samples}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not np.isfinite(self.t_start):
            raise ConfigurationError("t_start must be finite")
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t_start", float(self.t_start))

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_samples)

    @property
    def length(self) -> float:
        return self.n_samples * self.dt

    @property
    def t_end(self) -> float:
        return self.t_start + self.length

    @property
    def omega(self) -> np.ndarray:
        """Angular frequencies in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n_samples, self.dt)

    def index_of(self, t: float) -> float:
        """Fractional sample index of time t."""
        return (t - self.t_start) / self.dt

    def matches(self, other: "TimeGrid") -> bool:
        return (self.n_samples == other.n_samples
                and math.isclose(self.dt, other.dt, rel_tol=1e-12)
                and math.isclose(self.t_start, other.t_start, rel_tol=1e-12, abs_tol=1e-12 * self.dt))

    def require_same(self, other: "TimeGrid", what="operands"):
        if not self.matches(other):
            raise ConfigurationError(f"grid mismatch between {what}: {self} vs {other}")


def make_grid(n_samples: int, dt: float, t_start: float = 0.0) -> TimeGrid:
    return TimeGrid(n_samples, dt, t_start)


def auto_grid(t_lo: float, t_hi: float, dt: float = DEFAULT_DT, factor: float = 1.1) -> TimeGrid:
    """Grid covering [t_lo, t_hi] scaled by `factor` about its centre.

    The sample count is rounded up to an FFT-friendly size and t_start is
    snapped to a multiple of dt so that t = 0 is a grid point.
    """
    if not t_hi > t_lo:
        raise ConfigurationError("empty time span")
    n = next_fast_len(int(math.ceil(factor * (t_hi - t_lo) / dt)) + 2)
    centre = 0.5 * (t_lo + t_hi)
    t_start = dt * math.floor((centre - 0.5 * n * dt) / dt)
    return TimeGrid(n, dt, t_start)


@dataclass(frozen=True, eq=False)
class Envelope:
    """Complex field samples of one channel on a grid."""

    grid: TimeGrid
    samples: np.ndarray
    channel: str = "s"

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ConfigurationError(f"unknown channel {self.channel!r}")
        arr = np.array(self.samples, dtype=complex)
        if arr.shape != (self.grid.n_samples,):
            raise ConfigurationError(
                f"samples have shape {arr.shape}, grid needs ({self.grid.n_samples},)")
        if not np.all(np.isfinite(arr)):
            raise NumericalInstabilityError(f"non-finite samples in {self.channel} envelope")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def times(self):
        return self.grid.times

    @property
    def energy(self) -> float:
        return float(self.grid.dt * np.sum(np.abs(self.samples) ** 2))

    def normalized(self) -> "Envelope":
        e = self.energy
        if e <= 0:
            raise ConfigurationError("cannot normalize a zero envelope")
        return Envelope(self.grid, self.samples / math.sqrt(e), self.channel)

    def with_channel(self, channel: str) -> "Envelope":
        return Envelope(self.grid, self.samples, channel)

    def __repr__(self):
        return f"Envelope(channel={self.channel!r}, n={self.grid.n_samples}, energy={self.energy:.6g})"


def zero_envelope(grid: TimeGrid, channel="s") -> Envelope:
    return Envelope(grid, np.zeros(grid.n_samples, complex), channel)


def _gaussian_outside_fraction(grid: TimeGrid, tau: float, t_center: float) -> float:
    # energy density exp(-x^2/tau^2): tails beyond each edge
    lo = (t_center - grid.t_start) / tau
    hi = (grid.t_end - t_center) / tau
    return 0.5 * (erfc(lo) + erfc(hi))


def gaussian_pulse(grid: TimeGrid, tau: float, t_center: float = 0.0, energy: float = 1.0,
                   channel: str = "s") -> Envelope:
    """Gaussian exp(-(t-t_center)^2 / (2 tau^2)) scaled to the requested discrete energy.

    tau is the 1/sqrt(e) amplitude half-width.
    """
    if not tau > 0:
        raise ConfigurationError(f"pulse width must be positive, got {tau}")
    if energy < 0:
        raise ConfigurationError("energy must be non-negative")
    frac = _gaussian_outside_fraction(grid, tau, t_center)
    if frac > CLIP_TOL:
        raise ConfigurationError(
            f"pulse at t={t_center} with width {tau} is clipped by the window "
            f"[{grid.t_start}, {grid.t_end}) ({frac:.2e} of its energy outside)")
    x = (grid.times - t_center) / tau
    a = np.exp(-0.5 * x * x).astype(complex)
    norm = grid.dt * np.sum(np.abs(a) ** 2)
    return Envelope(grid, a * math.sqrt(energy / norm), channel)


def hermite_gauss(grid: TimeGrid, order: int, tau: float = 1.0, t_center: float = 0.0,
                  channel: str = "s") -> Envelope:
    """Unit-energy Hermite-Gauss function of the given order."""
    from scipy.special import eval_hermite
    x = (grid.times - t_center) / tau
    a = eval_hermite(order, x) * np.exp(-0.5 * x * x)
    return Envelope(grid, a.astype(complex), channel).normalized()


def apply_phase(env: Envelope, phase) -> Envelope:
    phase = np.asarray(phase, dtype=float)
    if phase.shape != env.samples.shape:
        raise ConfigurationError(
            f"phase has length {phase.size}, envelope has {env.samples.size}")
    return Envelope(env.grid, env.samples * np.exp(1j * phase), env.channel)


def inner_product(a: Envelope, b: Envelope) -> complex:
    """dt * sum(conj(a) * b)."""
    a.grid.require_same(b.grid, "inner product arguments")
    return complex(a.grid.dt * np.vdot(a.samples, b.samples))


@dataclass(frozen=True)
class ChannelParams:
    beta_prime: float

    def __post_init__(self):
        try:
            v = float(self.beta_prime)
        except (TypeError, ValueError):
            raise ConfigurationError(f"group slowness must be a real number, got {self.beta_prime!r}")
        if not np.isfinite(v):
            raise ConfigurationError("group slowness must be finite")
        object.__setattr__(self, "beta_prime", v)


def _chirp_tuple(chirp) -> tuple:
    c = tuple(float(x) for x in (chirp or ()))
    if len(c) > N_CHIRP:
        raise ConfigurationError(f"at most {N_CHIRP} chirp coefficients are supported, got {len(c)}")
    if not all(np.isfinite(c)):
        raise ConfigurationError("chirp coefficients must be finite")
    return c + (0.0,) * (N_CHIRP - len(c))


@dataclass(frozen=True, eq=False)
class PumpSpec:
    """Pump pulse at stage entry, always normalized to unit energy.

    Gaussian by default. `chirp[k-1]` multiplies (t - center)**k for k = 1..4.
    A tabulated shape is given by `amplitude` (and optionally `phase`) sampled
    on `table_grid`; `center` then shifts the table in time.
    """

    width: float = 1.0
    center: float = 0.0
    chirp: tuple = (0.0,) * N_CHIRP
    phase_offset: float = 0.0
    amplitude: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None
    table_grid: Optional[TimeGrid] = None

    def __post_init__(self):
        if not (np.isfinite(self.width) and self.width > 0):
            raise ConfigurationError(f"pump width must be positive, got {self.width}")
        if not np.isfinite(self.center):
            raise ConfigurationError("pump center must be finite")
        object.__setattr__(self, "chirp", _chirp_tuple(self.chirp))
        if self.amplitude is not None:
            if self.table_grid is None:
                raise ConfigurationError("a tabulated pump needs table_grid")
            amp = np.abs(np.asarray(self.amplitude, dtype=float))
            if amp.shape != (self.table_grid.n_samples,):
                raise ConfigurationError("tabulated pump amplitude does not match its grid")
            norm = self.table_grid.dt * np.sum(amp ** 2)
            if not norm > 0:
                raise ConfigurationError("tabulated pump amplitude is zero")
            amp = amp / math.sqrt(norm)
            ph = np.zeros_like(amp) if self.phase is None else np.asarray(self.phase, dtype=float)
            if ph.shape != amp.shape:
                raise ConfigurationError("tabulated pump phase does not match its amplitude")
            amp.setflags(write=False)
            ph = ph.copy()
            ph.setflags(write=False)
            object.__setattr__(self, "amplitude", amp)
            object.__setattr__(self, "phase", ph)
        elif self.phase is not None:
            raise ConfigurationError("tabulated phase requires a tabulated amplitude")

    @property
    def tabulated(self) -> bool:
        return self.amplitude is not None

    def _table_coords(self, x):
        g = self.table_grid
        return (np.asarray(x, float) - g.t_start) / g.dt

    def magnitude(self, x) -> np.ndarray:
        """|A| at offsets x = t - center."""
        x = np.asarray(x, float)
        if not self.tabulated:
            return np.pi ** -0.25 / math.sqrt(self.width) * np.exp(-0.5 * (x / self.width) ** 2)
        g = self.table_grid
        tg = g.times
        return np.interp(x, tg, self.amplitude, left=0.0, right=0.0)

    def phase_profile(self, x) -> np.ndarray:
        """Imposed (linear) phase at offsets x = t - center."""
        x = np.asarray(x, float)
        ph = np.full(x.shape, self.phase_offset)
        xk = np.ones_like(x)
        for c in self.chirp:
            xk = xk * x
            if c:
                ph = ph + c * xk
        if self.tabulated:
            ph = ph + np.interp(x, self.table_grid.times, self.phase, left=0.0, right=0.0)
        return ph

    def field(self, t) -> np.ndarray:
        x = np.asarray(t, float) - self.center
        return self.magnitude(x) * np.exp(1j * self.phase_profile(x))

    def support(self) -> tuple:
        """Offsets (relative to center) outside which the amplitude is negligible."""
        if not self.tabulated:
            half = self.width * math.sqrt(-2.0 * math.log(SUPPORT_EPS))
            return -half, half
        amp = self.amplitude
        idx = np.nonzero(amp > SUPPORT_EPS * amp.max())[0]
        tg = self.table_grid.times
        return tg[idx[0]] - self.table_grid.dt, tg[idx[-1]] + self.table_grid.dt

    def envelope(self, grid: TimeGrid, channel="p") -> Envelope:
        lo, hi = self.support()
        if self.center + lo < grid.t_start or self.center + hi > grid.t_end:
            if not self.tabulated and _gaussian_outside_fraction(grid, self.width, self.center) > CLIP_TOL:
                raise ConfigurationError(f"pump {channel} at t={self.center} is clipped by the window")
        return Envelope(grid, self.field(grid.times), channel)

    def moved(self, delta: float) -> "PumpSpec":
        return replace(self, center=self.center + delta)

    def with_chirp(self, chirp) -> "PumpSpec":
        return replace(self, chirp=_chirp_tuple(chirp))


@dataclass(frozen=True, eq=False)
class StageSpec:
    """One nonlinear medium.

    delta_f = 0 is three-wave mixing with the second pump fixed at A_q = 1
    (pump_q must then be None). delta_f = 1 is four-wave mixing with two pumps.
    n_z_steps = None picks the step count automatically.
    """

    grid: TimeGrid
    gamma: float
    delta_f: int
    channels: Mapping[str, ChannelParams]
    pump_p: PumpSpec = field(default_factory=PumpSpec)
    pump_q: Optional[PumpSpec] = None
    length: float = 1.0
    n_z_steps: Optional[int] = None

    def __post_init__(self):
        if self.delta_f not in (0, 1):
            raise ConfigurationError(f"delta_f must be 0 or 1, got {self.delta_f}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ConfigurationError(f"gamma must be non-negative, got {self.gamma}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ConfigurationError("length must be positive")
        if self.n_z_steps is not None and (int(self.n_z_steps) != self.n_z_steps or self.n_z_steps < 1):
            raise ConfigurationError(f"n_z_steps must be a positive integer, got {self.n_z_steps}")
        ch = {}
        need = ("p", "r", "s") + (("q",) if self.pump_q is not None else ())
        for c in need:
            if c not in self.channels:
                raise ConfigurationError(f"missing group slowness for channel {c}", )
            v = self.channels[c]
            ch[c] = v if isinstance(v, ChannelParams) else ChannelParams(v)
        if "q" in self.channels and "q" not in ch:
            v = self.channels["q"]
            ch["q"] = v if isinstance(v, ChannelParams) else ChannelParams(v)
        object.__setattr__(self, "channels", ch)
        if self.delta_f == 0 and self.pump_q is not None:
            raise ConfigurationError("three-wave mixing stages take no q pump (A_q = 1)")

    def beta(self, channel: str) -> float:
        return self.channels[channel].beta_prime

    @property
    def walk_off(self) -> float:
        return abs(self.beta("r") - self.beta("s")) * self.length

    def with_gamma(self, gamma: float) -> "StageSpec":
        return replace(self, gamma=float(gamma))

    def with_grid(self, grid: TimeGrid) -> "StageSpec":
        return replace(self, grid=grid)

    def pumps(self):
        out = [("p", self.pump_p)]
        if self.pump_q is not None:
            out.append(("q", self.pump_q))
        return out

    def span(self) -> tuple:
        """Lab-time interval touched by the pumps and by every signal sample they meet."""
        lo, hi = math.inf, -math.inf
        L = self.length
        for name, pump in self.pumps():
            a, b = pump.support()
            bp = self.beta(name)
            for z in (0.0, L):
                for x in (pump.center + a + bp * z, pump.center + b + bp * z):
                    for c in SIGNALS:
                        bc = self.beta(c)
                        for y in (x, x - bc * z, x + bc * (L - z)):
                            lo, hi = min(lo, y), max(hi, y)
        return lo, hi


def stage_grid(stages: Sequence[StageSpec], dt: float = DEFAULT_DT, factor: float = 1.1) -> TimeGrid:
    lo = min(s.span()[0] for s in stages)
    hi = max(s.span()[1] for s in stages)
    return auto_grid(lo, hi, dt, factor)
