"""Target distributions exposing log-density, gradient and metric capabilities."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import lapack
from scipy.special import expit

from manifold_mcmc.errors import DimensionMismatch, InvalidDof, ValidationError
from manifold_mcmc.geometry import MetricTensor
from manifold_mcmc.verification import fingerprint as _fingerprint
from manifold_mcmc.verification import quadrature_moments

DEFAULT_PRIOR_VARIANCE = 100.0
DEFAULT_WISHART_DOF = 10.0


class SampledMetric(NamedTuple):
    """One draw of an estimated metric, with derivative estimates if available."""

    metric: MetricTensor
    derivs: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TargetModel:
    """Capability bundle for a target density.

    ``log_density`` is the unnormalized log target. The optional capabilities
    are ``metric`` (returns a :class:`MetricTensor`), ``metric_derivs``
    (returns a ``(D, D, D)`` array whose ``i``-th slice is the derivative of
    the metric in the ``i``-th coordinate) and ``sample_metric`` (draws a
    :class:`SampledMetric` given a position and a generator). No density of
    the metric draws is ever exposed.
    """

    dim: int
    log_density: Callable[[np.ndarray], float]
    grad_log_density: Callable[[np.ndarray], np.ndarray]
    metric: Optional[Callable[[np.ndarray], MetricTensor]] = None
    metric_derivs: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sample_metric: Optional[Callable[[np.ndarray, np.random.Generator], SampledMetric]] = None
    constant_metric: bool = False
    log_density_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    cdf: Optional[Callable] = None
    name: str = "target"
    fingerprint: str = ""

    def has(self, capability: str) -> bool:
        return getattr(self, capability) is not None


def _as_vector(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise DimensionMismatch(f"expected position of shape ({dim},), got {theta.shape}")
    return theta


def make_gaussian(mean, cov) -> TargetModel:
    """Multivariate normal target whose metric is the constant precision."""
    mean = np.array(mean, dtype=float).ravel()
    cov_m = MetricTensor(cov)
    dim = mean.size
    if cov_m.dim != dim:
        raise DimensionMismatch("mean and covariance sizes differ")
    prec = MetricTensor(cov_m.inv)
    prec_mat = prec.matrix
    const = -0.5 * (dim * np.log(2 * np.pi) + cov_m.logdet)
    zeros = np.zeros((dim, dim, dim))
    zeros.flags.writeable = False

    def log_density(theta):
        r = theta - mean
        return const - 0.5 * float(r @ (prec_mat @ r))

    def grad(theta):
        return -(prec_mat @ (theta - mean))

    def log_density_batch(thetas):
        r = thetas - mean
        return const - 0.5 * np.einsum("ci,ij,cj->c", r, prec_mat, r)

    return TargetModel(
        dim=dim,
        log_density=log_density,
        grad_log_density=grad,
        metric=lambda theta: prec,
        metric_derivs=lambda theta: zeros,
        constant_metric=True,
        log_density_batch=log_density_batch,
        name="gaussian",
        fingerprint=_fingerprint({"model": "gaussian", "mean": mean, "cov": cov_m.matrix}),
    )


_QUARTIC_QUAD = None


def quartic_quadrature():
    global _QUARTIC_QUAD
    if _QUARTIC_QUAD is None:
        _QUARTIC_QUAD = quadrature_moments(lambda x: -x**4)
    return _QUARTIC_QUAD


def make_quartic() -> TargetModel:
    """The 1-D target with density proportional to ``exp(-x^4)``."""
    unit = MetricTensor.identity(1)
    zeros = np.zeros((1, 1, 1))
    zeros.flags.writeable = False

    def cdf(x):
        return quartic_quadrature().cdf(x)

    def log_density(x):
        sq = float(x[0]) * float(x[0])
        return -sq * sq  # overflows to -inf rather than raising

    return TargetModel(
        dim=1,
        log_density=log_density,
        grad_log_density=lambda x: -4.0 * x**3,
        metric=lambda x: unit,
        metric_derivs=lambda x: zeros,
        constant_metric=True,
        log_density_batch=lambda xs: -xs[:, 0] ** 4,
        cdf=cdf,
        name="quartic",
        fingerprint=_fingerprint({"model": "quartic"}),
    )


@dataclass(frozen=True)
class LogisticRegressionData:
    X: np.ndarray
    y: np.ndarray
    prior_variance: float = DEFAULT_PRIOR_VARIANCE

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValidationError("X", "needs at least one row and one column")
        if y.shape[0] != X.shape[0]:
            raise ValidationError("y", f"{y.shape[0]} labels for {X.shape[0]} rows")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValidationError("y", "labels must be 0 or 1")
        if not self.prior_variance > 0:
            raise ValidationError("prior_variance", "must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def synthetic_logistic_data(n: int = 100, dim: int = 5, seed: int = 7,
                            prior_variance: float = DEFAULT_PRIOR_VARIANCE) -> LogisticRegressionData:
    """Standard-normal design, coefficients from ``N(0, I)``, labels drawn from the model."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    theta = rng.standard_normal(dim)
    y = (rng.random(n) < expit(X @ theta)).astype(float)
    return LogisticRegressionData(X, y, prior_variance)


def load_logistic_csv(path, prior_variance: float = DEFAULT_PRIOR_VARIANCE) -> LogisticRegressionData:
    """Read ``x1..xD,y`` columns (with header) from a CSV file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [row for row in reader if row]
    dim = len(header) - 1
    expected = [f"x{i + 1}" for i in range(dim)] + ["y"]
    if dim < 1 or header != expected:
        raise ValidationError("csv", f"header must be {','.join(expected) or 'x1,...,xD,y'}, got {','.join(header)}")
    try:
        values = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError("csv", str(exc)) from None
    if values.ndim != 2 or values.shape[1] != dim + 1:
        raise ValidationError("csv", "ragged rows")
    return LogisticRegressionData(values[:, :dim], values[:, dim], prior_variance)


def make_logistic(data: LogisticRegressionData) -> TargetModel:
    """Bayesian logistic regression with a ``N(0, alpha I)`` prior.

    The metric is the expected Fisher information plus the prior precision,
    ``X^T diag(mu (1 - mu)) X + I / alpha``.
    """
    X, y, alpha = data.X, data.y, data.prior_variance
    dim = data.dim
    outer = X[:, :, None] * X[:, None, :]  # (n, D, D)
    prior_prec = np.eye(dim) / alpha

    def log_density(theta):
        eta = X @ _as_vector(theta, dim)
        return float(y @ eta - np.logaddexp(0.0, eta).sum() - theta @ theta / (2 * alpha))

    def grad(theta):
        theta = _as_vector(theta, dim)
        mu = expit(X @ theta)
        return X.T @ (y - mu) - theta / alpha

    def metric(theta):
        mu = expit(X @ _as_vector(theta, dim))
        lam = mu * (1 - mu)
        return MetricTensor(np.tensordot(lam, outer, axes=1) + prior_prec)

    def metric_derivs(theta):
        mu = expit(X @ _as_vector(theta, dim))
        w = mu * (1 - mu) * (1 - 2 * mu)
        return np.tensordot(w[:, None] * X, outer, axes=(0, 0))

    def log_density_batch(thetas):
        eta = thetas @ X.T
        return eta @ y - np.logaddexp(0.0, eta).sum(axis=1) - np.einsum("ci,ci->c", thetas, thetas) / (2 * alpha)

    return TargetModel(
        dim=dim,
        log_density=log_density,
        grad_log_density=grad,
        metric=metric,
        metric_derivs=metric_derivs,
        log_density_batch=log_density_batch,
        name="logistic",
        fingerprint=_fingerprint({"model": "logistic", "X": X, "y": y, "alpha": alpha}),
    )


def _bartlett_factor(dim: int, dof: float, rng: np.random.Generator) -> np.ndarray:
    """Lower factor ``C`` with ``C C^T ~ Wishart(dof, I)``."""
    c = np.diag(np.sqrt(rng.chisquare(dof - np.arange(dim))))
    if dim > 1:
        c[np.tril_indices(dim, -1)] = rng.standard_normal(dim * (dim - 1) // 2)
    return c


def wrap_noisy_metric(inner: TargetModel, wishart_dof: float = DEFAULT_WISHART_DOF) -> TargetModel:
    """Add a ``sample_metric`` capability drawing ``Wishart(dof, G / dof)``.

    The draws have mean ``G(theta)``. With ``G = L L^T`` and Bartlett factor
    ``C`` the draw is ``M G M^T`` for ``M = L C L^{-1} / sqrt(dof)``; when the
    inner model has metric derivatives the same ``M`` is applied to each of
    them. ``wishart_dof=inf`` returns the exact metric (zero noise).
    """
    if not inner.has("metric"):
        raise ValidationError("model", "noisy metric wrapper needs a model with a metric")
    dim = inner.dim
    if not wishart_dof > dim - 1:
        raise InvalidDof(f"Wishart degrees of freedom must exceed {dim - 1}, got {wishart_dof}")
    has_derivs = inner.has("metric_derivs")
    exact = np.isinf(wishart_dof)

    def sample_metric(theta, rng):
        g = inner.metric(theta)
        derivs = inner.metric_derivs(theta) if has_derivs else None
        if exact:
            return SampledMetric(g, derivs)
        f = g.chol @ _bartlett_factor(dim, wishart_dof, rng) / np.sqrt(wishart_dof)
        ghat = MetricTensor(f @ f.T, chol=f)
        if derivs is not None:
            mt, _ = lapack.dtrtrs(g.chol, f.T, lower=1, trans=1)  # (f L^{-1})^T
            derivs = mt.T @ derivs @ mt
        return SampledMetric(ghat, derivs)

    return dataclasses.replace(
        inner,
        sample_metric=sample_metric,
        name=f"{inner.name}+wishart",
        fingerprint=_fingerprint({"inner": inner.fingerprint, "dof": str(wishart_dof)}),
    )


def with_metric(model: TargetModel, metric, metric_derivs=None) -> TargetModel:
    """Copy of ``model`` using a different metric (zero derivatives if omitted)."""
    if metric_derivs is None:
        zeros = np.zeros((model.dim,) * 3)
        zeros.flags.writeable = False
        metric_derivs = lambda theta: zeros  # noqa: E731
        constant = True
    else:
        constant = False
    return dataclasses.replace(model, metric=metric, metric_derivs=metric_derivs,
                               constant_metric=constant, sample_metric=None)


def identity_metric(model: TargetModel) -> TargetModel:
    unit = MetricTensor.identity(model.dim)
    return with_metric(model, lambda theta: unit)
