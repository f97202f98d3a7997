"""MCMC transition kernels and the chain driver.

Every kernel has the signature ``kernel(state, config, model, rng)`` (plus a
metric list for the multi-potential kernel and an adapter for the
quasi-Newton kernel) and returns a :class:`StepOutcome`. A rejected step
returns the input state object unchanged, auxiliary draw included.

Proposals that hit a non-finite value, a non-SPD metric or a diverging
fixed-point iteration are rejected without consuming the acceptance uniform.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from manifold_mcmc.diagnostics import Trace
from manifold_mcmc.errors import (
    CapabilityError,
    ChainAbort,
    FixedPointDiverged,
    ManifoldMCMCError,
    NonFiniteState,
    NotPositiveDefinite,
    ValidationError,
)
from manifold_mcmc.geometry import MetricTensor, sample_gaussian_cov
from manifold_mcmc.integrators import (
    DEFAULT_FP_MAX_ITERS,
    DEFAULT_FP_TOL,
    PhaseState,
    integrate,
)
from manifold_mcmc.quasi_newton import DEFAULT_GAMMA_MIN, QuasiNewtonAdapter
from manifold_mcmc.targets import SampledMetric, TargetModel

KERNELS = (
    "rwm",
    "mala",
    "decoupled_langevin",
    "simplified_mmala",
    "full_mmala",
    "hmc",
    "rmhmc",
    "multipotential_rmhmc",
    "extended_noisy_cc",
    "extended_noisy_mmala",
    "qn_precond_mala",
)

_REQUIREMENTS = {
    "simplified_mmala": ("metric",),
    "full_mmala": ("metric", "metric_derivs"),
    "hmc": ("metric",),
    "rmhmc": ("metric", "metric_derivs"),
    "multipotential_rmhmc": ("metric", "metric_derivs"),
    "extended_noisy_cc": ("sample_metric",),
    "extended_noisy_mmala": ("sample_metric", "metric_derivs"),
}

_HAMILTONIAN = ("hmc", "rmhmc", "multipotential_rmhmc")
_EXTENDED = ("extended_noisy_cc", "extended_noisy_mmala")


@dataclass(frozen=True)
class SamplerConfig:
    """Kernel choice and tuning constants.

    ``drift_scale`` and ``noise_scale`` only matter for the decoupled
    Langevin kernel; they default to ``step_size**2 / 2`` and ``step_size``.
    ``adapt_step_size`` is the MALA step used while the quasi-Newton adapter
    is still learning (defaults to ``step_size``).
    """

    kernel: str = "mala"
    step_size: float = 0.1
    drift_scale: float | None = None
    noise_scale: float | None = None
    leapfrog_steps: int = 10
    n_metrics: int = 1
    adjust: bool = True
    adapt_window: int = 1000
    adapt_step_size: float | None = None
    memory: int = 5
    gamma_min: float = DEFAULT_GAMMA_MIN
    fp_tol: float = DEFAULT_FP_TOL
    fp_max_iters: int = DEFAULT_FP_MAX_ITERS

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValidationError("kernel", f"unknown kernel {self.kernel!r}")
        checks = [
            ("step_size", self.step_size > 0),
            ("drift_scale", self.drift_scale is None or self.drift_scale >= 0),
            ("noise_scale", self.noise_scale is None or self.noise_scale > 0),
            ("leapfrog_steps", self.leapfrog_steps >= 1),
            ("n_metrics", self.n_metrics >= 1),
            ("adapt_window", self.adapt_window >= 0),
            ("adapt_step_size", self.adapt_step_size is None or self.adapt_step_size > 0),
            ("memory", self.memory >= 1),
            ("gamma_min", self.gamma_min > 0),
            ("fp_tol", self.fp_tol > 0),
            ("fp_max_iters", self.fp_max_iters >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ValidationError(name, f"invalid value {getattr(self, name)!r}")

    @property
    def tau(self) -> float:
        return self.step_size if self.noise_scale is None else self.noise_scale

    @property
    def eta(self) -> float:
        if self.drift_scale is not None:
            return self.drift_scale
        tau = self.tau
        return 0.5 * tau * tau

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(slots=True)
class ChainState:
    """Position plus values cached at it.

    ``aux_r`` holds the current metric draw for the extended-space kernels and
    is ``None`` for every other kernel.
    """

    theta: np.ndarray
    log_density: float
    grad: np.ndarray | None = None
    metric: MetricTensor | None = None
    metric_derivs: np.ndarray | None = None
    aux_r: SampledMetric | None = None


class StepOutcome(NamedTuple):
    state: ChainState
    accepted: bool
    log_accept_ratio: float
    diagnostics: dict = {}


def check_capabilities(kernel: str, model: TargetModel) -> None:
    for cap in _REQUIREMENTS.get(kernel, ()):
        if not model.has(cap):
            raise CapabilityError(f"kernel {kernel!r} needs the {cap!r} capability, "
                                  f"which model {model.name!r} lacks")
    if kernel == "hmc" and not model.constant_metric:
        raise CapabilityError(f"kernel 'hmc' needs a constant metric; model {model.name!r} has a "
                              "position-dependent one (use rmhmc)")


def init_state(theta, model: TargetModel, kernel: str = "mala", rng=None) -> ChainState:
    """Initial chain state with the caches ``kernel`` needs.

    Extended-space kernels draw the initial auxiliary metric from ``rng``.
    """
    theta = np.array(theta, dtype=float).ravel()
    if theta.size != model.dim:
        raise ValidationError("initial", f"expected {model.dim} coordinates, got {theta.size}")
    state = ChainState(theta, model.log_density(theta))
    if not np.isfinite(state.log_density):
        raise NonFiniteState("initial position has non-finite log-density")
    if kernel != "rwm":
        state.grad = model.grad_log_density(theta)
    if kernel in ("simplified_mmala", "full_mmala", "hmc", "rmhmc"):
        state.metric = model.metric(theta)
        state.metric.logdet  # noqa: B018 - factorize now so a bad start fails here
    if kernel in ("full_mmala", "rmhmc"):
        state.metric_derivs = model.metric_derivs(theta)
    if kernel in _EXTENDED:
        state.aux_r = model.sample_metric(theta, rng)
        state.aux_r.metric.logdet  # noqa: B018
    return state


def _accept(log_alpha: float, rng) -> bool:
    u = rng.random()
    return u > 0 and math.log(u) < log_alpha


def _reject(state, log_alpha=-math.inf, **diag):
    return StepOutcome(state, False, log_alpha, diag)


def _log_q(x, mean, tau, metric=None):
    """Gaussian proposal log-density up to constants shared by both directions."""
    r = x - mean
    if metric is None:
        return -0.5 * float(r @ r) / (tau * tau)
    return -0.5 * float(r @ (metric.matrix @ r)) / (tau * tau) + 0.5 * metric.logdet


def rwm_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng) -> StepOutcome:
    theta = state.theta + config.step_size * rng.standard_normal(state.theta.size)
    ld = model.log_density(theta)
    if not math.isfinite(ld):
        return _reject(state)
    log_alpha = ld - state.log_density
    if _accept(log_alpha, rng):
        return StepOutcome(ChainState(theta, ld), True, log_alpha, {})
    return _reject(state, log_alpha)


def _euclidean_langevin(state, eta, tau, adjust, model, rng):
    mean = state.theta + eta * state.grad
    theta = mean + tau * rng.standard_normal(state.theta.size)
    ld = model.log_density(theta)
    grad = model.grad_log_density(theta)
    if not (math.isfinite(ld) and np.isfinite(grad).all()):
        if adjust:
            return _reject(state)
        raise NonFiniteState("unadjusted Langevin step left the finite region")
    new = ChainState(theta, ld, grad)
    if not adjust:
        return StepOutcome(new, True, 0.0, {})
    log_alpha = (ld - state.log_density
                 + _log_q(state.theta, theta + eta * grad, tau)
                 - _log_q(theta, mean, tau))
    if _accept(log_alpha, rng):
        return StepOutcome(new, True, log_alpha, {})
    return _reject(state, log_alpha)


def mala_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng) -> StepOutcome:
    eps = config.step_size
    return _euclidean_langevin(state, 0.5 * eps * eps, eps, True, model, rng)


def decoupled_langevin_step(state: ChainState, config: SamplerConfig, model: TargetModel,
                            rng) -> StepOutcome:
    """Langevin proposal ``theta + eta grad + tau z`` with independent ``eta`` and ``tau``.

    With ``adjust=False`` every proposal is accepted (unadjusted discretisation).
    """
    return _euclidean_langevin(state, config.eta, config.tau, config.adjust, model, rng)


def curvature_drift(metric: MetricTensor, derivs: np.ndarray) -> np.ndarray:
    """Metric-derivative part of the manifold Langevin drift.

    ``-sum_j [G^{-1} dG_j G^{-1}]_{ij} + 1/2 sum_j (G^{-1})_{ij} tr(G^{-1} dG_j)``
    """
    ginv = metric.inv
    dim = ginv.shape[0]
    a = ginv @ derivs @ ginv  # a[j] = G^{-1} dG_j G^{-1}
    trace = derivs.reshape(dim, -1) @ ginv.ravel()
    idx = np.arange(dim)
    return -a[idx, :, idx].sum(axis=0) + 0.5 * (ginv @ trace)


def _mmala_mean(theta, grad, metric, derivs, eps):
    mean = theta + (0.5 * eps * eps) * metric.solve(grad)
    if derivs is not None:
        mean = mean + (eps * eps) * curvature_drift(metric, derivs)
    return mean


def _manifold_langevin(state, eps, model, rng, current, metric_at, full):
    """Position-dependent Gaussian proposal ``N(mean(theta), eps^2 G^{-1})``.

    ``current`` is the ``(G, dG)`` pair the forward proposal is built from;
    ``metric_at(theta, rng)`` supplies the pair at the proposed point, used
    for the reverse density. Returns the outcome and the accepted pair.
    """
    g, dg = current
    mean_f = _mmala_mean(state.theta, state.grad, g, dg if full else None, eps)
    theta = mean_f + eps * g.inv_sqrt_t(rng.standard_normal(state.theta.size))
    ld = model.log_density(theta)
    grad = model.grad_log_density(theta)
    if not (math.isfinite(ld) and np.isfinite(grad).all()):
        return _reject(state), None
    try:
        g2, dg2 = metric_at(theta, rng)
        g2.logdet  # noqa: B018 - forces the factorization inside the try
    except NotPositiveDefinite:
        return _reject(state), None
    mean_r = _mmala_mean(theta, grad, g2, dg2 if full else None, eps)
    log_alpha = (ld - state.log_density
                 + _log_q(state.theta, mean_r, eps, g2)
                 - _log_q(theta, mean_f, eps, g))
    if _accept(log_alpha, rng):
        return StepOutcome(ChainState(theta, ld, grad), True, log_alpha, {}), (g2, dg2)
    return _reject(state, log_alpha), None


def _analytic_metric(model, with_derivs):
    def metric_at(theta, rng):
        return model.metric(theta), (model.metric_derivs(theta) if with_derivs else None)
    return metric_at


def simplified_mmala_step(state: ChainState, config: SamplerConfig, model: TargetModel,
                          rng) -> StepOutcome:
    """Langevin proposal preconditioned by the local metric, no derivative terms."""
    out, pair = _manifold_langevin(state, config.step_size, model, rng, (state.metric, None),
                                   _analytic_metric(model, False), full=False)
    if pair is not None:
        out.state.metric = pair[0]
    return out


def full_mmala_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng) -> StepOutcome:
    out, pair = _manifold_langevin(state, config.step_size, model, rng,
                                   (state.metric, state.metric_derivs),
                                   _analytic_metric(model, True), full=True)
    if pair is not None:
        out.state.metric, out.state.metric_derivs = pair
    return out


def _extended(state, config, model, rng, full):
    aux = state.aux_r

    def metric_at(theta, rng):
        return model.sample_metric(theta, rng)

    out, pair = _manifold_langevin(state, config.step_size, model, rng, (aux.metric, aux.derivs),
                                   metric_at, full=full)
    if pair is not None:
        out.state.aux_r = SampledMetric(*pair)
    return out


def extended_noisy_cc_step(state: ChainState, config: SamplerConfig, model: TargetModel,
                           rng) -> StepOutcome:
    """Extended-space MH with a sampled metric and no metric derivatives.

    The forward proposal uses the metric draw carried in the state; a fresh
    draw is made at the proposed point and kept only if the move is accepted.
    The law of the draws never enters the acceptance ratio.
    """
    return _extended(state, config, model, rng, full=False)


def extended_noisy_mmala_step(state: ChainState, config: SamplerConfig, model: TargetModel,
                              rng) -> StepOutcome:
    if state.aux_r.derivs is None:
        raise CapabilityError("extended_noisy_mmala needs sampled metric derivatives")
    return _extended(state, config, model, rng, full=True)


def _hamiltonian_move(state, start: PhaseState, config, model, rng, generalized, **extra):
    try:
        end, report = integrate(start, config.step_size, config.leapfrog_steps, model,
                                generalized=generalized, fp_tol=config.fp_tol,
                                fp_max_iters=config.fp_max_iters)
    except (NonFiniteState, FixedPointDiverged, NotPositiveDefinite) as exc:
        iters = config.fp_max_iters if isinstance(exc, FixedPointDiverged) else 0
        return _reject(state, dH=math.nan, fp_iters=iters, divergent=1, **extra), None
    delta_h = report.delta_H
    diag = dict(dH=delta_h, fp_iters=report.max_fixed_point_iters, divergent=0, **extra)
    if not np.isfinite(delta_h):
        diag["divergent"] = 1
        return _reject(state, **diag), None
    log_alpha = -delta_h
    if _accept(log_alpha, rng):
        return StepOutcome(ChainState(end.theta, end.log_density, end.grad), True, log_alpha, diag), end
    return _reject(state, log_alpha, **diag), None


def hmc_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng) -> StepOutcome:
    """Fixed-length HMC with momentum ``N(0, G)`` for a constant metric ``G``."""
    g = state.metric
    start = PhaseState(state.theta, sample_gaussian_cov(g, rng), state.log_density, state.grad, g)
    out, end = _hamiltonian_move(state, start, config, model, rng, generalized=False)
    if end is not None:
        out.state.metric = g
    return out


def rmhmc_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng) -> StepOutcome:
    g = state.metric
    start = PhaseState(state.theta, sample_gaussian_cov(g, rng), state.log_density, state.grad, g,
                       state.metric_derivs)
    out, end = _hamiltonian_move(state, start, config, model, rng, generalized=True)
    if end is not None:
        out.state.metric, out.state.metric_derivs = end.metric, end.metric_derivs
    return out


def multipotential_rmhmc_step(state: ChainState, config: SamplerConfig, model: TargetModel,
                              metrics: list[TargetModel], rng) -> StepOutcome:
    """Pick one of ``k`` metrics uniformly and take an RMHMC step under it.

    Each entry of ``metrics`` is a model sharing ``model``'s log-density but
    carrying its own metric. The momenta of the inactive metrics are
    conditionally independent Gaussians given ``theta`` and are not stored,
    so the kernel is a uniform mixture of single-metric RMHMC kernels.
    """
    k = len(metrics)
    j = int(rng.integers(k)) if k > 1 else 0
    mj = metrics[j]
    g = mj.metric(state.theta)
    start = PhaseState(state.theta, sample_gaussian_cov(g, rng), state.log_density, state.grad, g,
                       mj.metric_derivs(state.theta))
    out, _ = _hamiltonian_move(state, start, config, mj, rng, generalized=True, j=j)
    return out


def qn_precond_mala_step(state: ChainState, config: SamplerConfig, model: TargetModel, rng,
                         adapter: QuasiNewtonAdapter) -> StepOutcome:
    """MALA while the adapter learns curvature, then fixed-metric MMALA once frozen."""
    if not adapter.frozen:
        eps = config.step_size if config.adapt_step_size is None else config.adapt_step_size
        out = _euclidean_langevin(state, 0.5 * eps * eps, eps, True, model, rng)
        if out.accepted:
            adapter.observe(state.theta, state.grad, out.state.theta, out.state.grad)
        return out
    b = adapter.metric()
    out, pair = _manifold_langevin(state, config.step_size, model, rng, (b, None),
                                   lambda theta, rng: (b, None), full=False)
    return out


_STEP_FUNCTIONS = {
    "rwm": rwm_step,
    "mala": mala_step,
    "decoupled_langevin": decoupled_langevin_step,
    "simplified_mmala": simplified_mmala_step,
    "full_mmala": full_mmala_step,
    "hmc": hmc_step,
    "rmhmc": rmhmc_step,
    "extended_noisy_cc": extended_noisy_cc_step,
    "extended_noisy_mmala": extended_noisy_mmala_step,
}

DIAGNOSTIC_SERIES = {
    "hmc": ("dH", "fp_iters", "divergent"),
    "rmhmc": ("dH", "fp_iters", "divergent"),
    "multipotential_rmhmc": ("dH", "fp_iters", "divergent", "j"),
}


def trace_fingerprint(config: SamplerConfig, seed: int, model: TargetModel) -> str:
    blob = json.dumps({"config": config.as_dict(), "seed": seed, "model": model.fingerprint},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _run_unadjusted(state, config, model, n_steps, rng, rng_seed) -> Trace:
    """Unadjusted Langevin recursion with all noise drawn up front.

    Every proposal is accepted, so the chain consumes exactly one normal
    vector per step and batching the draws reproduces the step-by-step
    stream exactly.
    """
    eta, tau = config.eta, config.tau
    noise = tau * rng.standard_normal((n_steps, model.dim))
    states = np.empty((n_steps, model.dim))
    grads = np.empty((n_steps, model.dim))
    theta, grad = state.theta, state.grad
    log_density, grad_fn = model.log_density, model.grad_log_density
    # gradients are checked in one pass afterwards; a non-finite gradient
    # poisons the next state, so the density check stops the loop one step later
    end = n_steps
    for t in range(n_steps):
        theta = theta + eta * grad + noise[t]
        grad = grad_fn(theta)
        states[t] = theta
        grads[t] = grad
        if not math.isfinite(log_density(theta)):
            end = t
            break
    bad_grad = np.flatnonzero(~np.isfinite(grads[:min(end + 1, n_steps)]).all(axis=1))
    first_bad = min(end, int(bad_grad[0]) if bad_grad.size else n_steps)
    if first_bad < n_steps:
        raise ChainAbort(first_bad + 1, NonFiniteState("unadjusted Langevin step left the finite region"))
    return Trace(
        initial=state.theta.copy(),
        states=states,
        accepted=np.ones(n_steps, dtype=bool),
        log_accept_ratio=np.zeros(n_steps),
        seed=rng_seed,
        fingerprint=trace_fingerprint(config, rng_seed, model),
    )


def run_chain(initial, config: SamplerConfig, model: TargetModel, n_steps: int, rng_seed: int, *,
              metrics: list[TargetModel] | None = None,
              adapter: QuasiNewtonAdapter | None = None) -> Trace:
    """Run ``n_steps`` transitions of the configured kernel.

    For ``qn_precond_mala`` the ``adapt_window`` adaptation steps run first
    and are not recorded; only the frozen phase makes up the trace.

    Raises:
        ChainAbort: wrapping any error that escapes a kernel, with the
            1-based step index (negative during qn adaptation).
    """
    if n_steps < 1:
        raise ValidationError("n_steps", "must be at least 1")
    kernel = config.kernel
    check_capabilities(kernel, model)
    rng = np.random.default_rng(rng_seed)
    state = init_state(initial, model, kernel, rng)
    meta: dict[str, Any] = {}

    if kernel == "multipotential_rmhmc":
        if metrics is None:
            metrics = [model] * config.n_metrics
        for m in metrics:
            check_capabilities("rmhmc", m)
        step = lambda s: multipotential_rmhmc_step(s, config, model, metrics, rng)  # noqa: E731
    elif kernel == "qn_precond_mala":
        if adapter is None:
            adapter = QuasiNewtonAdapter(model.dim, config.memory, config.gamma_min)
        step = lambda s: qn_precond_mala_step(s, config, model, rng, adapter)  # noqa: E731
        for t in range(config.adapt_window):
            try:
                state = step(state).state
            except ManifoldMCMCError as exc:
                raise ChainAbort(-(t + 1), exc) from exc
        adapter.freeze()
        meta["qn_pairs"] = len(adapter.pairs)
        meta["qn_metric"] = adapter.metric().matrix.tolist()
        meta["qn_fingerprint_start"] = adapter.fingerprint()
    else:
        fn = _STEP_FUNCTIONS[kernel]
        step = lambda s: fn(s, config, model, rng)  # noqa: E731

    if kernel == "decoupled_langevin" and not config.adjust:
        return _run_unadjusted(state, config, model, n_steps, rng, rng_seed)

    keys = DIAGNOSTIC_SERIES.get(kernel, ())
    states = np.empty((n_steps, model.dim))
    accepted = np.zeros(n_steps, dtype=bool)
    log_alpha = np.empty(n_steps)
    series = {k: np.full(n_steps, np.nan) for k in keys}
    initial_theta = state.theta.copy()
    for t in range(n_steps):
        try:
            out = step(state)
        except ManifoldMCMCError as exc:
            raise ChainAbort(t + 1, exc) from exc
        state = out.state
        states[t] = state.theta
        accepted[t] = out.accepted
        log_alpha[t] = out.log_accept_ratio
        for k in keys:
            series[k][t] = out.diagnostics.get(k, np.nan)

    if kernel == "qn_precond_mala":
        meta["qn_fingerprint_end"] = adapter.fingerprint()
    return Trace(
        initial=initial_theta,
        states=states,
        accepted=accepted,
        log_accept_ratio=log_alpha,
        diag=series,
        seed=rng_seed,
        fingerprint=trace_fingerprint(config, rng_seed, model),
        meta=meta,
    )
