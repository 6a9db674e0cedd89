import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tmi.core import (ConfigurationError, Envelope, PumpSpec, StageSpec, TimeGrid, apply_phase,
                      auto_grid, gaussian_pulse, hermite_gauss, inner_product, make_grid)
from tmi.presets import twm_stage
from tmi.propagator import _window_check


def test_grid_examples():
    assert np.allclose(make_grid(4, 0.5, 0.0).times, [0.0, 0.5, 1.0, 1.5])
    assert np.allclose(make_grid(2, 1.0, -1.0).times, [-1.0, 0.0])
    g = make_grid(4096, 0.1, -200.0)
    assert g.length == pytest.approx(409.6)


def test_large_grid_covers_long_walk_off():
    st = twm_stage(200.0, dt=0.1, grid=make_grid(4096, 0.1, -200.0))
    _window_check(st)


@pytest.mark.parametrize("n, dt", [(1, 0.1), (4, 0.0), (4, -0.5)])
def test_grid_rejects_bad_input(n, dt):
    with pytest.raises(ConfigurationError):
        make_grid(n, dt)


def test_auto_grid_snaps_start_to_dt():
    g = auto_grid(-3.3, 17.1, 0.125)
    assert g.t_start / g.dt == pytest.approx(round(g.t_start / g.dt))
    assert g.t_start <= -3.3 and g.t_end >= 17.1


def test_gaussian_normalization_symmetry_peak():
    g = make_grid(512, 0.05, -12.8)
    a = gaussian_pulse(g, 1.0)
    assert abs(a.energy - 1.0) < 1e-10
    k = np.arange(1, 256)
    mid = 256
    assert np.allclose(np.abs(a.samples[mid + k]), np.abs(a.samples[mid - k]), atol=1e-15)
    assert abs(abs(a.samples[mid]) - math.pi ** -0.25) < 1e-6


def test_gaussian_clipped_by_window():
    with pytest.raises(ConfigurationError, match="clipped"):
        gaussian_pulse(make_grid(64, 0.1, -3.2), 1.0)


def test_apply_phase_identity_and_energy(rng):
    g = make_grid(256, 0.1, -12.8)
    a = gaussian_pulse(g, 1.0, 0.5)
    assert np.array_equal(apply_phase(a, np.zeros(256)).samples, a.samples)
    b = apply_phase(a, rng.uniform(-10, 10, 256))
    assert abs(b.energy - a.energy) < 1e-12


def _spectral_width(env):
    p = np.abs(np.fft.fft(env.samples)) ** 2
    w = env.grid.omega
    m = np.sum(w * p) / np.sum(p)
    return np.sum((w - m) ** 2 * p) / np.sum(p)


def test_quadratic_phase_broadens_spectrum():
    g = make_grid(512, 0.05, -12.8)
    a = gaussian_pulse(g, 1.0)
    b = apply_phase(a, 0.5 * g.times ** 2)
    assert _spectral_width(b) > 1.5 * _spectral_width(a)


def test_apply_phase_length_mismatch():
    a = gaussian_pulse(make_grid(256, 0.1, -12.8), 1.0)
    with pytest.raises(ConfigurationError):
        apply_phase(a, np.zeros(10))


def test_inner_product_disjoint_and_grid_mismatch():
    g = make_grid(1024, 0.1, -51.2)
    a = gaussian_pulse(g, 1.0, -30.0)
    b = gaussian_pulse(g, 1.0, 30.0)
    assert abs(inner_product(a, b)) < 1e-8
    with pytest.raises(ConfigurationError):
        inner_product(a, gaussian_pulse(make_grid(512, 0.1, -25.6), 1.0))


def test_hermite_gauss_orthonormal():
    g = make_grid(512, 0.05, -12.8)
    h = [hermite_gauss(g, n) for n in range(4)]
    gram = np.array([[inner_product(a, b) for b in h] for a in h])
    assert np.allclose(gram, np.eye(4), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_inner_product_properties(seed):
    r = np.random.default_rng(seed)
    g = make_grid(64, 0.25)
    a = Envelope(g, r.normal(size=64) + 1j * r.normal(size=64))
    b = Envelope(g, r.normal(size=64) + 1j * r.normal(size=64))
    assert inner_product(a, b) == pytest.approx(np.conj(inner_product(b, a)))
    assert abs(inner_product(a, b)) <= math.sqrt(a.energy * b.energy) * (1 + 1e-12)
    assert inner_product(a, a).real == pytest.approx(a.energy)


def test_envelope_is_read_only_and_validated():
    g = make_grid(8, 1.0)
    e = Envelope(g, np.ones(8))
    with pytest.raises(ValueError):
        e.samples[0] = 2.0
    with pytest.raises(ConfigurationError):
        Envelope(g, np.ones(7))
    with pytest.raises(ConfigurationError):
        Envelope(g, np.ones(8), channel="x")


def test_pump_spec_unit_energy_and_chirp():
    p = PumpSpec(width=1.5, center=2.0, chirp=(0.0, 0.3))
    g = make_grid(1024, 0.05, -23.6)
    env = p.envelope(g)
    assert env.energy == pytest.approx(1.0, abs=1e-10)
    assert p.chirp == (0.0, 0.3, 0.0, 0.0)
    ph = np.angle(p.field(np.array([3.0])) / abs(p.field(np.array([3.0]))))
    assert ph[0] == pytest.approx(0.3)


def test_pump_spec_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        PumpSpec(width=0.0)
    with pytest.raises(ConfigurationError):
        PumpSpec(chirp=(1, 2, 3, 4, 5))


def test_tabulated_pump_matches_gaussian():
    tg = make_grid(400, 0.05, -10.0)
    amp = np.exp(-0.5 * tg.times ** 2)
    tab = PumpSpec(amplitude=amp, table_grid=tg)
    x = np.linspace(-3, 3, 13)
    assert np.allclose(tab.magnitude(x), PumpSpec().magnitude(x), atol=1e-3)


def test_stage_spec_validation():
    g = make_grid(64, 0.5, -16)
    with pytest.raises(ConfigurationError, match="q pump"):
        StageSpec(g, 1.0, 0, {"p": 0, "q": 0, "r": 1, "s": 0}, pump_q=PumpSpec())
    with pytest.raises(ConfigurationError, match="channel r"):
        StageSpec(g, 1.0, 0, {"p": 0, "s": 0})
    with pytest.raises(ConfigurationError):
        StageSpec(g, -1.0, 0, {"p": 0, "r": 1, "s": 0})
    with pytest.raises(ConfigurationError):
        StageSpec(g, 1.0, 2, {"p": 0, "r": 1, "s": 0})
    st_ = StageSpec(g, 1.0, 0, {"p": 0, "r": 3, "s": 1})
    assert st_.walk_off == 2.0
    assert st_.with_gamma(2.0).gamma == 2.0


def test_time_grid_matches():
    assert TimeGrid(8, 0.5, 0.0).matches(make_grid(8, 0.5))
    assert not TimeGrid(8, 0.5, 0.0).matches(make_grid(8, 0.25))
