import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from manifold_mcmc.diagnostics import Trace, autocorrelation, energy_stats, ess, ks_statistic_1d, moments
from manifold_mcmc.errors import DimensionMismatch, MissingSeries, TraceTooShort
from manifold_mcmc.samplers import SamplerConfig, run_chain
from manifold_mcmc.targets import TargetModel, make_quartic
from manifold_mcmc.verification import rejection_sampler_quartic
from scipy.stats import norm


def _trace(states, **diag):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    n = len(states)
    return Trace(initial=states[0], states=states, accepted=np.ones(n, bool), diag=diag)


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_trace_length_validation():
    with pytest.raises(ValueError):
        Trace(initial=np.zeros(1), states=np.zeros((3, 1)), accepted=np.ones(2, bool))


def test_ess_independent_draws():
    flat = TargetModel(dim=1, log_density=lambda t: 0.0, grad_log_density=lambda t: np.zeros(1))
    # accept-all random walk increments are independent; ESS is measured on the increments
    tr = run_chain([0.0], SamplerConfig(kernel="rwm", step_size=1.0), flat, 10_001, 4)
    inc = np.diff(np.concatenate([tr.initial, tr.states[:, 0]]))
    assert 0.8 <= ess(inc[:10_000]) / 10_000 <= 1.2
    x = np.random.default_rng(0).standard_normal(10_000)
    assert 0.8 <= ess(x) / 10_000 <= 1.2


def test_ess_constant_is_zero():
    assert ess(np.full(500, 3.0)) == 0.0


def test_ess_ar1():
    n = 100_000
    val = ess(_ar1(0.9, n, 1)) / n
    assert abs(val - 1 / 19) <= 0.3 / 19


def test_ess_too_short():
    with pytest.raises(TraceTooShort):
        ess(np.arange(50.0))


def test_autocorrelation_lag0():
    rho = autocorrelation(np.random.default_rng(1).standard_normal(300))
    assert rho[0] == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 200, elements=st.floats(-100, 100)), st.floats(0.1, 50), st.floats(-50, 50))
def test_ess_bounded_and_affine_invariant(x, a, b):
    if np.ptp(x) < 1e-6:
        return
    e = ess(x)
    assert 0 < e <= len(x)
    assert ess(a * x + b) == pytest.approx(e, rel=1e-6)


def test_moments_identical_points():
    m = moments(_trace(np.tile([1.5, -2.0], (400, 1))), burn_in=0.0)
    np.testing.assert_array_equal(m.mean, [1.5, -2.0])
    assert not m.cov.any()
    assert not m.mcse.any()


def test_moments_standard_normal():
    x = np.random.default_rng(3).standard_normal((100_000, 1))
    m = moments(_trace(x), burn_in=0.0)
    assert abs(m.mean[0]) <= 0.02
    assert abs(m.cov[0, 0] - 1) <= 0.05
    assert m.mcse[0] == pytest.approx(np.sqrt(m.cov[0, 0] / m.ess[0]))


def test_burn_in_halves_length():
    tr = _trace(np.arange(1000.0))
    assert len(tr.post_burn_in(0.5)) == 500
    m = moments(tr, burn_in=0.5)
    assert m.mean[0] == pytest.approx(np.arange(500.0, 1000.0).mean())
    with pytest.raises(TraceTooShort):
        moments(_trace(np.arange(150.0)), burn_in=0.5)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (150, 3), elements=st.floats(-1e3, 1e3)))
def test_moments_cov_symmetric_psd(x):
    m = moments(_trace(x), burn_in=0.0)
    np.testing.assert_array_equal(m.cov, m.cov.T)
    assert np.linalg.eigvalsh(m.cov).min() >= -1e-8 * max(1.0, np.abs(m.cov).max())


def test_ks_point_mass():
    assert ks_statistic_1d(_trace(np.zeros(200)), norm.cdf, burn_in=0.0) == pytest.approx(0.5)


def test_ks_self_empirical():
    x = np.sort(np.random.default_rng(0).standard_normal(1000))

    def empirical(v):
        return np.searchsorted(x, v, side="right") / len(x)

    assert ks_statistic_1d(_trace(x), empirical, burn_in=0.0) <= 1 / len(x) + 1e-12


def test_ks_exact_quartic_draws():
    draws = rejection_sampler_quartic(100_000, np.random.default_rng(5))
    assert ks_statistic_1d(_trace(draws), make_quartic().cdf, burn_in=0.0) <= 0.01


def test_ks_requires_1d():
    with pytest.raises(DimensionMismatch):
        ks_statistic_1d(_trace(np.zeros((200, 2))), norm.cdf)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 120, elements=st.floats(-10, 10)))
def test_ks_in_unit_interval(x):
    v = ks_statistic_1d(_trace(x), norm.cdf, burn_in=0.0)
    assert 0.0 <= v <= 1.0


def test_energy_stats_requires_series():
    with pytest.raises(MissingSeries):
        energy_stats(_trace(np.zeros(200)))


def test_energy_stats_exact_flow(gauss1):
    tr = run_chain([0.2], SamplerConfig(kernel="hmc", step_size=1e-4, leapfrog_steps=1), gauss1, 500, 0)
    es = energy_stats(tr)
    assert es.max_abs_dH <= 1e-6 and es.divergences == 0


def test_energy_stats_order(gauss1):
    # same trajectory length, half the step size
    a = energy_stats(run_chain([0.0], SamplerConfig(kernel="hmc", step_size=0.2, leapfrog_steps=5), gauss1, 2000, 1))
    b = energy_stats(run_chain([0.0], SamplerConfig(kernel="hmc", step_size=0.1, leapfrog_steps=10), gauss1, 2000, 1))
    assert 3.0 <= a.mean_abs_dH / b.mean_abs_dH <= 5.0


def test_csv_roundtrip_and_thinning(tmp_path, gauss2):
    tr = run_chain(np.zeros(2), SamplerConfig(kernel="hmc", step_size=0.3, leapfrog_steps=2), gauss2, 100, 0)
    tr.write_csv(tmp_path / "t.csv")
    back = Trace.read_csv(tmp_path / "t.csv")
    assert back.states.tobytes() == tr.states.tobytes()
    np.testing.assert_array_equal(back.accepted, tr.accepted)
    np.testing.assert_array_equal(back.diag["dH"], tr.diag["dH"])
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "step,accepted,theta_1,theta_2,dH,fp_iters"
    tr.write_csv(tmp_path / "thin.csv", thinning=10)
    thin = Trace.read_csv(tmp_path / "thin.csv")
    assert thin.meta["steps"] == list(range(10, 101, 10))
    np.testing.assert_array_equal(thin.states, tr.states[9::10])
