import numpy as np
import pytest

from tmi.core import ConfigurationError
from tmi.presets import fwm_cascade, twm_cascade, twm_stage
from tmi.schmidt import conversion_spectrum, selectivity
from tmi.tuner import (BracketError, DEFAULT_CHIRP_BOUNDS, ThetaCurve, convergence_study,
                       maximize_single_selectivity, optimize_prechirp, phase_flatness, scan_theta,
                       stage_ce1, tune_cascade, tune_gamma_half_ce, write_history_csv)


def test_bisection_converges_and_is_deterministic():
    st_ = twm_stage(8.0, dt=0.125)
    gmax = 3.0
    assert stage_ce1(st_.with_gamma(gmax)) > 0.5
    a = tune_gamma_half_ce(st_, gmax)
    b = tune_gamma_half_ce(st_, gmax)
    assert a.iterations <= 30
    assert a.value == b.value and a.objective == b.objective and a.history == b.history
    assert stage_ce1(st_.with_gamma(a.value)) == pytest.approx(0.5, abs=1e-3)


def test_bracket_failure_reports_max_ce():
    st_ = twm_stage(8.0, dt=0.125)
    with pytest.raises(BracketError) as err:
        tune_gamma_half_ce(st_, 0.1)
    assert 0 < err.value.max_ce < 0.5
    with pytest.raises(ConfigurationError):
        tune_gamma_half_ce(st_, 0.0)


def test_bracket_expansion():
    st_ = twm_stage(8.0, dt=0.125)
    res = tune_gamma_half_ce(st_, 0.3, expand=4)
    assert res.objective == pytest.approx(0.5, abs=1e-3)


@pytest.fixture(scope="module")
def zeta200_points():
    """Single TWM stage at walk-off 200: gamma for 50% conversion and for maximum conversion."""
    st_ = twm_stage(200.0, dt=0.0625)
    half = tune_gamma_half_ce(st_, 4.0, expand=3)
    gs = np.linspace(4.0, 24.0, 11)
    ces = [stage_ce1(st_.with_gamma(g)) for g in gs]
    g_max = gs[int(np.argmax(ces))]
    return (conversion_spectrum(st_.with_gamma(half.value)),
            conversion_spectrum(st_.with_gamma(g_max)))


def test_half_ce_has_less_ringing_than_max_ce(zeta200_points):
    half, full = zeta200_points
    assert half[0] == pytest.approx(0.5, abs=1e-3)
    # fraction of the conversion carried by the leading mode
    assert half[0] / half.sum() > full[0] / full.sum()
    assert half[1] / half[0] < full[1] / full[0]


@pytest.mark.xfail(strict=True, reason="selectivity is bounded by rho_1^2, which is 0.5 at the "
                   "half-conversion point, while the maximum-conversion point exceeds 0.5")
def test_half_ce_selectivity_exceeds_max_ce_selectivity(zeta200_points):
    half, full = zeta200_points
    assert selectivity(half) > selectivity(full)


def test_maximize_single_selectivity_within_bounds():
    st_ = twm_stage(8.0, dt=0.125)
    res = maximize_single_selectivity(st_, (0.5, 6.0), n_scan=8)
    assert 0.5 <= res.value <= 6.0
    assert res.objective == pytest.approx(max(v for _, v in res.history))


def test_scan_theta_rejects_few_points():
    with pytest.raises(ConfigurationError):
        scan_theta(twm_cascade(6.0, dt=0.125), k_points=4)


def test_tuned_cascade_visibility():
    tc = tune_cascade(twm_cascade(6.0, gamma1=3.0, dt=0.125))
    assert isinstance(tc.curve, ThetaCurve)
    assert tc.curve.visibility > 0.9
    assert tc.curve.ce_star >= tc.curve.ce.max()


def test_twm_prechirp_is_a_no_op(tmp_path):
    spec = tune_cascade(twm_cascade(200.0, gamma1=2.0, dt=0.125)).spec
    res = optimize_prechirp(spec, max_evals=6, history_path=tmp_path / "h.csv")
    assert res.objective - res.extra["initial_objective"] < 1e-3
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,parameter,objective"
    assert len(lines) == len(res.history) + 1


def test_prechirp_respects_bounds():
    spec = fwm_cascade(2.0, gamma1=3.0, dt=0.125)
    bounds = [(0.0, 0.1), (-0.2, 0.0)]
    res = optimize_prechirp(spec, coeff_bounds=bounds, orders=(1, 2), max_evals=6, gauge=True)
    x = np.asarray(res.value).reshape(4, 2)
    assert np.all(x[:, 0] >= 0.0) and np.all(x[:, 0] <= 0.1)
    assert np.all(x[:, 1] >= -0.2) and np.all(x[:, 1] <= 0.0)
    for c in res.extra["chirps"]:
        assert 0.0 <= c[0] <= 0.1 and -0.2 <= c[1] <= 0.0


def test_prechirp_bound_count_checked():
    with pytest.raises(ConfigurationError):
        optimize_prechirp(fwm_cascade(2.0, gamma1=3.0, dt=0.125), coeff_bounds=[(0, 1)])


def test_default_bounds_cover_all_orders():
    assert len(DEFAULT_CHIRP_BOUNDS) == 4


def test_phase_flatness():
    from tmi.core import apply_phase, gaussian_pulse, make_grid
    g = make_grid(512, 0.05, -12.8)
    a = gaussian_pulse(g, 1.0)
    assert phase_flatness(a) < 1e-12
    b = apply_phase(a, 2.0 * g.times ** 2)
    # FWHM of |A| for tau=1 spans |t| < sqrt(2 ln 2)
    assert phase_flatness(b) == pytest.approx(2.0 * 2 * np.log(2), rel=0.05)


def test_convergence_trivial_case():
    rep = convergence_study(twm_cascade(6.0, gamma1=0.0, dt=0.125))
    assert rep["trivial"] is True
    assert rep["delta_S"] is None and rep["converged"] is None


@pytest.fixture(scope="module")
def coarse_study():
    spec = tune_cascade(twm_cascade(200.0, gamma1=2.0, dt=0.5)).spec
    return convergence_study(spec)


def test_convergence_flags_coarse_grid(coarse_study):
    assert coarse_study["delta_S"] > coarse_study["tol"]
    assert coarse_study["converged"] is False


@pytest.mark.xfail(strict=True, reason="the whole-sample lattice stays accurate at dt = tau_p/2; "
                   "the measured change is about 1.6e-3")
def test_convergence_coarse_change_exceeds_one_percent(coarse_study):
    assert coarse_study["delta_S"] > 1e-2


def test_history_csv(tmp_path):
    p = tmp_path / "h.csv"
    write_history_csv([(1.0, 0.2), (2.0, 0.4)], p)
    assert p.read_text().splitlines() == ["iteration,parameter,objective", "0,1.0,0.2", "1,2.0,0.4"]
