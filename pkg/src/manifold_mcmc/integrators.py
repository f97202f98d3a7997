"""Leapfrog integrators for the Riemannian Hamiltonian

    H(theta, p) = -L(theta) + 1/2 log((2 pi)^D |G(theta)|) + 1/2 p^T G(theta)^{-1} p.

The explicit scheme assumes a constant metric. The generalized (implicit)
scheme handles position-dependent metrics by fixed-point iteration on the
half-step momentum and on the new position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from manifold_mcmc.errors import FixedPointDiverged, NonFiniteState
from manifold_mcmc.geometry import MetricTensor

DEFAULT_FP_TOL = 1e-10
DEFAULT_FP_MAX_ITERS = 100

_LOG_2PI = float(np.log(2 * np.pi))


@dataclass(slots=True)
class PhaseState:
    """Position, momentum and the position-dependent terms cached at ``theta``.

    Build new states with :func:`phase_state` rather than mutating ``theta``.
    """

    theta: np.ndarray
    p: np.ndarray
    log_density: float
    grad: np.ndarray
    metric: MetricTensor
    metric_derivs: np.ndarray | None = None


@dataclass(slots=True)
class IntegratorReport:
    steps_taken: int = 0
    delta_H: float = float("nan")
    max_fixed_point_iters: int = 0
    converged: bool = True


def phase_state(theta, p, model, *, derivs: bool = False) -> PhaseState:
    theta = np.asarray(theta, dtype=float)
    return PhaseState(
        theta=theta,
        p=np.asarray(p, dtype=float),
        log_density=model.log_density(theta),
        grad=model.grad_log_density(theta),
        metric=model.metric(theta),
        metric_derivs=model.metric_derivs(theta) if derivs else None,
    )


def with_momentum(state: PhaseState, p) -> PhaseState:
    return PhaseState(state.theta, np.asarray(p, dtype=float), state.log_density, state.grad,
                      state.metric, state.metric_derivs)


def hamiltonian_energy(state: PhaseState, model=None) -> float:
    """Potential, log-normalizer and kinetic terms of the Riemannian Hamiltonian."""
    g = state.metric if state.metric is not None else model.metric(state.theta)
    dim = state.theta.size
    return (-state.log_density + 0.5 * (dim * _LOG_2PI + g.logdet)
            + 0.5 * g.quad_form_inv(state.p))


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteState("integrator produced a non-finite coordinate")


def leapfrog_step(state: PhaseState, eps: float, model) -> PhaseState:
    """Kick-drift-kick step for a position-independent metric."""
    g = state.metric
    p_half = state.p + (0.5 * eps) * state.grad
    theta = state.theta + eps * g.solve(p_half)
    _check_finite(theta)
    log_density = model.log_density(theta)
    grad = model.grad_log_density(theta)
    p = p_half + (0.5 * eps) * grad
    _check_finite(p, log_density)
    return PhaseState(theta, p, log_density, grad, g, state.metric_derivs)


class _PositionTerms:
    """Momentum-independent pieces of dH/dtheta at one position."""

    __slots__ = ("base", "derivs")

    def __init__(self, grad, metric: MetricTensor, derivs):
        # 1/2 tr(G^{-1} dG_i) for each coordinate i; both factors symmetric
        dim = grad.shape[0]
        trace = derivs.reshape(dim, -1) @ metric.inv.ravel()
        self.base = -grad + 0.5 * trace
        self.derivs = derivs

    def dH(self, v):
        """dH/dtheta given ``v = G^{-1} p``."""
        return self.base - 0.5 * ((self.derivs @ v) @ v)


def generalized_leapfrog_step(state: PhaseState, eps: float, model, fp_tol: float = DEFAULT_FP_TOL,
                              fp_max_iters: int = DEFAULT_FP_MAX_ITERS):
    """One implicit leapfrog step for a position-dependent metric.

    The half-step momentum solves ``p_half = p - eps/2 dH/dtheta(theta, p_half)``
    and the new position solves
    ``theta' = theta + eps/2 (G(theta)^{-1} + G(theta')^{-1}) p_half``, both by
    fixed-point iteration until the sup-norm increment is at most ``fp_tol``.
    The final half kick is explicit.

    Returns:
        ``(new_state, report)``.

    Raises:
        FixedPointDiverged: if either iteration needs more than ``fp_max_iters``.
        NonFiniteState: if any coordinate becomes non-finite.
    """
    derivs0 = state.metric_derivs if state.metric_derivs is not None else model.metric_derivs(state.theta)
    g0 = state.metric
    terms0 = _PositionTerms(state.grad, g0, derivs0)
    half = 0.5 * eps

    p = state.p
    p_half = p
    for it_p in range(1, fp_max_iters + 1):
        new = p - half * terms0.dH(g0.solve(p_half))
        inc = abs(new - p_half).max()
        p_half = new
        if not inc < math.inf:
            raise NonFiniteState("momentum fixed point produced a non-finite value")
        if inc <= fp_tol:
            break
    else:
        raise FixedPointDiverged(fp_max_iters, inc)

    v0 = g0.solve(p_half)
    theta0 = state.theta
    theta = theta0
    g1 = g0
    for it_q in range(1, fp_max_iters + 1):
        new = theta0 + half * (v0 + g1.solve(p_half))
        inc = abs(new - theta).max()
        theta = new
        if not inc < math.inf:
            raise NonFiniteState("position fixed point produced a non-finite value")
        if inc <= fp_tol:
            break
        g1 = model.metric(theta)
    else:
        raise FixedPointDiverged(fp_max_iters, inc)

    g1 = model.metric(theta)
    derivs1 = model.metric_derivs(theta)
    log_density = model.log_density(theta)
    grad = model.grad_log_density(theta)
    terms1 = _PositionTerms(grad, g1, derivs1)
    p_new = p_half - half * terms1.dH(g1.solve(p_half))
    _check_finite(p_new, log_density, grad)

    new_state = PhaseState(theta, p_new, log_density, grad, g1, derivs1)
    return new_state, IntegratorReport(steps_taken=1, max_fixed_point_iters=max(it_p, it_q))


def integrate(state: PhaseState, eps: float, n_steps: int, model, *, generalized: bool = False,
              fp_tol: float = DEFAULT_FP_TOL, fp_max_iters: int = DEFAULT_FP_MAX_ITERS):
    """Run ``n_steps`` integrator steps; returns ``(final_state, report)``.

    Integration errors propagate to the caller.
    """
    h0 = hamiltonian_energy(state)
    report = IntegratorReport()
    for _ in range(n_steps):
        if generalized:
            state, step_report = generalized_leapfrog_step(state, eps, model, fp_tol, fp_max_iters)
            report.max_fixed_point_iters = max(report.max_fixed_point_iters,
                                               step_report.max_fixed_point_iters)
        else:
            state = leapfrog_step(state, eps, model)
        report.steps_taken += 1
    report.delta_H = hamiltonian_energy(state) - h0
    if not np.isfinite(report.delta_H):
        report.converged = False
    return state, report
