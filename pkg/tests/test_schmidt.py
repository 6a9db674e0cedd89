import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from tmi.core import ConfigurationError, hermite_gauss, make_grid
from tmi.greenfn import TransferMatrix, build_transfer_matrix
from tmi.schmidt import (SchmidtPairingError, export_modes_csv, mode_overlap, reconstruct_rs,
                         schmidt_decompose, selectivity)


def _synthetic(n, rho, seed):
    """Lossless 2N x 2N matrix with prescribed conversion amplitudes."""
    rho = np.asarray(rho)
    tau = np.sqrt(1 - rho ** 2)
    big_psi, small_psi, big_phi, small_phi = (unitary_group.rvs(n, random_state=seed + k) for k in range(4))
    rr = big_psi @ np.diag(tau) @ small_psi.conj().T
    rs = big_psi @ np.diag(rho) @ small_phi.conj().T
    sr = -big_phi @ np.diag(rho) @ small_psi.conj().T
    ss = big_phi @ np.diag(tau) @ small_phi.conj().T
    return np.block([[rr, rs], [sr, ss]])


def test_selectivity_examples():
    assert selectivity([1.0]) == 1.0
    assert selectivity([0.5, 0.5]) == 0.25
    assert selectivity([0.9975, 0.0110]) == pytest.approx(0.98662, abs=1e-5)
    assert selectivity([]) == 0.0
    assert selectivity([0.0, 0.0]) == 0.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_selectivity_bounds(values):
    v = sorted(values, reverse=True)
    s = selectivity(v)
    assert 0.0 <= s <= v[0] + 1e-15


def test_mode_overlap():
    g = make_grid(512, 0.05, -12.8)
    h0, h1 = hermite_gauss(g, 0), hermite_gauss(g, 1)
    assert mode_overlap(h0, h0) == pytest.approx(1.0, abs=1e-12)
    assert mode_overlap(h0, h1) < 1e-10
    from tmi.core import Envelope
    with pytest.raises(ConfigurationError):
        mode_overlap(Envelope(g, 2 * h0.samples), h0)


def test_synthetic_decomposition_recovers_construction():
    n = 12
    rho = np.sort(np.random.default_rng(3).uniform(0.05, 0.99, n))[::-1]
    u = _synthetic(n, rho, 11)
    g = make_grid(n, 1.0)
    sd = schmidt_decompose(TransferMatrix.from_dense(g, u))
    assert np.allclose(sd.rho, rho, atol=1e-10)
    assert np.allclose(sd.rho_sq + sd.tau_sq, 1.0, atol=1e-10)
    assert np.allclose(reconstruct_rs(sd), u[:n, n:], atol=1e-10)
    # projected families reproduce the other blocks
    big_phi = np.stack([m.samples for m in sd.modes_s_out], 1)
    small_psi = np.stack([m.samples for m in sd.modes_r_in], 1)
    small_phi = np.stack([m.samples for m in sd.modes_s_in], 1)
    assert np.allclose((big_phi * sd.tau) @ small_phi.conj().T, u[n:, n:], atol=1e-9)
    assert np.allclose(-(big_phi * sd.rho) @ small_psi.conj().T, u[n:, :n], atol=1e-9)
    for m in sd.modes_s_in:
        k = np.argmax(np.abs(m.samples))
        assert abs(m.samples[k].imag) < 1e-12 and m.samples[k].real > 0


def test_fully_converted_modes_use_backconversion_block():
    n = 6
    rho = np.array([1.0, 0.8, 0.5, 0.3, 0.2, 0.1])
    u = _synthetic(n, rho, 5)
    sd = schmidt_decompose(TransferMatrix.from_dense(make_grid(n, 1.0), u))
    assert sd.modes_s_out[0].energy == pytest.approx(1.0, abs=1e-10)
    assert sd.modes_r_in[0].energy == pytest.approx(1.0, abs=1e-10)


def test_pairing_error_carries_index_and_deviation():
    n = 4
    u = _synthetic(n, [0.9, 0.5, 0.2, 0.1], 1)
    u[n:, n:] *= 0.5
    with pytest.raises(SchmidtPairingError) as err:
        schmidt_decompose(TransferMatrix.from_dense(make_grid(n, 1.0), u))
    assert err.value.n >= 0 and abs(err.value.deviation) > 1e-3


def test_zero_gamma_stage(small_twm):
    sd = schmidt_decompose(build_transfer_matrix(small_twm.with_gamma(0.0)))
    assert np.all(sd.rho == 0)
    assert np.allclose(sd.tau, 1.0)
    assert sd.selectivity == 0.0 and sd.n_kept == 0


def test_stage_pairing_and_mode_order(small_fwm, tmp_path):
    sd = schmidt_decompose(build_transfer_matrix(small_fwm))
    big = sd.rho_sq > 1e-3
    assert np.allclose((sd.rho_sq + sd.tau_sq)[big], 1.0, atol=1e-6)
    assert np.all(np.diff(sd.rho) <= 0)
    for fam in sd.families().values():
        assert len(fam) == sd.n_kept
        assert all(abs(m.energy - 1) < 1e-8 for m in fam)
    paths = export_modes_csv(sd, tmp_path, n_modes=2)
    assert len(paths) == 4
    header = open(paths[0]).readline().strip().split(",")
    assert header == ["t", "re_1", "im_1", "re_2", "im_2"]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 20), n=st.integers(2, 10))
def test_random_unitary_pairs(seed, n):
    rho = np.sort(np.random.default_rng(seed).uniform(0, 1, n))[::-1]
    sd = schmidt_decompose(TransferMatrix.from_dense(make_grid(n, 0.5), _synthetic(n, rho, seed)))
    assert np.allclose(sd.rho, rho, atol=1e-9)
