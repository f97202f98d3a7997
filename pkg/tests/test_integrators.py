import numpy as np
import pytest

from manifold_mcmc.errors import FixedPointDiverged, NonFiniteState
from manifold_mcmc.integrators import (
    PhaseState,
    generalized_leapfrog_step,
    hamiltonian_energy,
    integrate,
    leapfrog_step,
    phase_state,
    with_momentum,
)
from manifold_mcmc.targets import TargetModel, identity_metric, make_gaussian, with_metric
from manifold_mcmc.geometry import MetricTensor

from conftest import posterior_points

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _flat(dim):
    return TargetModel(dim=dim, log_density=lambda t: 0.0, grad_log_density=lambda t: np.zeros(dim),
                       metric=lambda t: MetricTensor.identity(dim),
                       metric_derivs=lambda t: np.zeros((dim, dim, dim)), constant_metric=True)


def _reverse(state, eps, n, model, generalized):
    s, _ = integrate(state, eps, n, model, generalized=generalized, fp_tol=1e-12)
    s = with_momentum(s, -s.p)
    s, _ = integrate(s, eps, n, model, generalized=generalized, fp_tol=1e-12)
    return with_momentum(s, -s.p)


def test_energy_at_origin(quartic):
    s = phase_state([0.0], [0.0], quartic)
    assert hamiltonian_energy(s) == pytest.approx(HALF_LOG_2PI, abs=1e-15)
    assert HALF_LOG_2PI == pytest.approx(0.918939, abs=1e-6)


def test_energy_momentum_doubling(logistic):
    p = np.array([0.3, -1.0, 0.2, 0.5, 2.0])
    m = identity_metric(logistic)
    theta = np.full(5, 0.1)
    h1 = hamiltonian_energy(phase_state(theta, p, m))
    h2 = hamiltonian_energy(phase_state(theta, 2 * p, m))
    assert h2 - h1 == pytest.approx(1.5 * p @ p, rel=1e-13)


def test_energy_constant_metric_cancellation(gauss2):
    p = np.array([0.4, -0.7])
    a, b = np.array([0.1, 0.2]), np.array([-1.0, 0.5])
    ha = hamiltonian_energy(phase_state(a, p, gauss2))
    hb = hamiltonian_energy(phase_state(b, p, gauss2))
    assert hb - ha == pytest.approx(-(gauss2.log_density(b) - gauss2.log_density(a)), rel=1e-12)


def test_free_particle():
    s = phase_state([1.0, 2.0], [0.5, -0.25], _flat(2))
    out = leapfrog_step(s, 0.2, _flat(2))
    np.testing.assert_array_equal(out.theta, [1.1, 1.95])
    np.testing.assert_array_equal(out.p, [0.5, -0.25])


def test_leapfrog_1d_gaussian(gauss1):
    out = leapfrog_step(phase_state([1.0], [0.0], gauss1), 0.1, gauss1)
    # independent scalar arithmetic
    p_half = 0.0 + 0.05 * (-1.0)
    theta = 1.0 + 0.1 * p_half
    p = p_half + 0.05 * (-theta)
    assert out.theta[0] == pytest.approx(theta, abs=1e-15) == pytest.approx(0.995)
    assert out.p[0] == pytest.approx(p, abs=1e-15) == pytest.approx(-0.09975)


def test_leapfrog_local_order(gauss1):
    s = phase_state([1.0], [0.5], gauss1)
    errs = []
    for eps in (0.2, 0.1):
        _, rep = integrate(s, eps, 1, gauss1)
        errs.append(abs(rep.delta_H))
    assert 6.0 <= errs[0] / errs[1] <= 10.0


def test_leapfrog_nonfinite():
    m = TargetModel(dim=1, log_density=lambda t: float(-t[0] ** 2), grad_log_density=lambda t: np.array([np.inf]),
                    metric=lambda t: MetricTensor.identity(1), constant_metric=True)
    with pytest.raises(NonFiniteState):
        leapfrog_step(phase_state([0.0], [0.0], m), 0.1, m)


def test_explicit_reversibility(gauss2):
    s = phase_state([0.5, -1.0], [1.0, 0.3], gauss2)
    back = _reverse(s, 0.1, 25, gauss2, generalized=False)
    assert np.abs(back.theta - s.theta).max() <= 1e-10
    assert np.abs(back.p - s.p).max() <= 1e-10


def test_generalized_reversibility_logistic(logistic, logistic_mode):
    rng = np.random.default_rng(3)
    for theta in posterior_points(logistic, logistic_mode, rng, 3):
        g = logistic.metric(theta)
        s = phase_state(theta, g.chol @ rng.standard_normal(5), logistic, derivs=True)
        back = _reverse(s, 0.3, 10, logistic, generalized=True)
        assert np.abs(back.theta - s.theta).max() <= 1e-6
        assert np.abs(back.p - s.p).max() <= 1e-6


def test_explicit_volume_preservation():
    model = with_metric(make_gaussian([0.0, 0.0], [[1.0, 0.9], [0.9, 1.0]]), lambda t: MetricTensor.identity(2))
    x0 = np.array([0.3, -0.2, 0.7, 0.1])

    def step(x):
        out = leapfrog_step(phase_state(x[:2], x[2:], model), 0.2, model)
        return np.concatenate([out.theta, out.p])

    h = 1e-6
    jac = np.column_stack([(step(x0 + h * e) - step(x0 - h * e)) / (2 * h) for e in np.eye(4)])
    assert abs(np.linalg.det(jac) - 1.0) <= 1e-6


def _energy_ratio(model, theta, p, eps, n):
    s = phase_state(theta, p, model, derivs=True)
    _, big = integrate(s, eps, n, model, generalized=True, fp_tol=1e-12)
    _, small = integrate(s, eps / 2, 2 * n, model, generalized=True, fp_tol=1e-12)
    return abs(big.delta_H) / abs(small.delta_H)


def test_generalized_energy_order_logistic(logistic, logistic_mode):
    # same integration time, twice the steps at half the step size
    rng = np.random.default_rng(8)
    ratios = []
    for theta in posterior_points(logistic, logistic_mode, rng, 8):
        p = logistic.metric(theta).chol @ rng.standard_normal(5)
        ratios.append(_energy_ratio(logistic, theta, p, 0.1, 20))
    assert all(3.0 <= r <= 5.0 for r in ratios), ratios


def test_constant_metric_reduction(gauss2):
    rng = np.random.default_rng(4)
    for _ in range(5):
        theta, p = rng.standard_normal(2), rng.standard_normal(2)
        s = phase_state(theta, p, gauss2, derivs=True)
        a = leapfrog_step(s, 0.15, gauss2)
        b, rep = generalized_leapfrog_step(s, 0.15, gauss2, fp_tol=1e-10)
        assert np.abs(a.theta - b.theta).max() <= 1e-9
        assert np.abs(a.p - b.p).max() <= 1e-9
        assert rep.max_fixed_point_iters <= 3


def test_fixed_point_failure_raises(logistic):
    s = phase_state(np.zeros(5), np.full(5, 30.0), logistic, derivs=True)
    with pytest.raises(FixedPointDiverged) as info:
        generalized_leapfrog_step(s, 0.05, logistic, fp_tol=1e-12, fp_max_iters=2)
    assert info.value.iters == 2


def test_report_fields(logistic):
    s = phase_state(np.zeros(5), np.ones(5), logistic, derivs=True)
    out, rep = integrate(s, 0.1, 4, logistic, generalized=True)
    assert rep.steps_taken == 4 and rep.converged and np.isfinite(rep.delta_H)
    assert 1 <= rep.max_fixed_point_iters <= 100
    assert isinstance(out, PhaseState)
    assert out.log_density == logistic.log_density(out.theta)
