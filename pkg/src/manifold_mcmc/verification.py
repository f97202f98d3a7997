"""Independent oracles used to check the samplers.

Nothing in here calls the transition kernels. The oracles are quadrature for
1-D densities, finite differences for derivatives, an exact rejection sampler
for the quartic target and a batched long random-walk reference run. Results
that are expensive to recompute go through :class:`OracleCache`.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from manifold_mcmc.errors import NonIntegrable

QUAD_LO, QUAD_HI = -8.0, 8.0
CDF_POINTS = 4096
TAIL_TOL = 1e-10
FD_STEP = 1e-5

QUARTIC_ENVELOPE_SD = 0.75


@dataclass(frozen=True)
class QuadratureResult:
    normalizer: float
    mean: float
    variance: float
    grid: np.ndarray = field(repr=False)
    cdf_table: np.ndarray = field(repr=False)

    def cdf(self, x):
        return np.interp(x, self.grid, self.cdf_table, left=0.0, right=1.0)


def _composite_gauss(f, lo, hi, n_panels, nodes, weights):
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w, f(x)


def quadrature_moments(log_density_1d: Callable, order: int = 64) -> QuadratureResult:
    """Normalizer, mean, variance and CDF table of a 1-D unnormalized density.

    ``log_density_1d`` must accept and return numpy arrays elementwise.
    Composite Gauss-Legendre with ``order`` nodes per panel on ``[-8, 8]``;
    the panel count doubles until the normalizer is stable to 1e-14.

    Raises:
        NonIntegrable: if the mass in the outer 1/32 of the domain exceeds
            ``TAIL_TOL`` of the total.
    """
    if order < 64:
        raise ValueError("order must be at least 64")
    nodes, weights = leggauss(order)

    prev = None
    for n_panels in (16, 32, 64, 128, 256, 512):
        x, w, logf = _composite_gauss(log_density_1d, QUAD_LO, QUAD_HI, n_panels, nodes, weights)
        logf = np.asarray(logf, dtype=float)
        if not np.isfinite(logf).any():
            raise NonIntegrable("log-density is not finite anywhere on the domain")
        shift = np.max(logf[np.isfinite(logf)])
        dens = np.exp(logf - shift)
        z = float(w @ dens)
        if prev is not None and abs(z - prev) <= 1e-14 * abs(z):
            break
        prev = z
    if not np.isfinite(z) or z <= 0:
        raise NonIntegrable("normalizer is not a positive finite number")

    mean = float(w @ (x * dens)) / z
    var = float(w @ ((x - mean) ** 2 * dens)) / z

    edge = (QUAD_HI - QUAD_LO) / 32
    tail = float(w @ (dens * ((x < QUAD_LO + edge) | (x > QUAD_HI - edge)))) / z
    if tail > TAIL_TOL:
        raise NonIntegrable(f"tail mass estimate {tail:.3e} exceeds {TAIL_TOL}")

    grid = np.linspace(QUAD_LO, QUAD_HI, CDF_POINTS)
    cn, cw = leggauss(16)
    _, cell_w, cell_logf = _composite_gauss(log_density_1d, QUAD_LO, QUAD_HI, CDF_POINTS - 1, cn, cw)
    cell_mass = (cell_w * np.exp(np.asarray(cell_logf, dtype=float) - shift)).reshape(-1, 16).sum(axis=1)
    cdf_table = np.concatenate([[0.0], np.cumsum(cell_mass)])
    cdf_table /= cdf_table[-1]

    return QuadratureResult(z * np.exp(shift), mean, var, grid, cdf_table)


def finite_difference_check(f, grad_f, points, h: float = FD_STEP, *, absolute: bool = False,
                            floor: float = 1e-8) -> float:
    """Worst disagreement between ``grad_f`` and centered differences of ``f``.

    ``grad_f(x)[i]`` must be the derivative of ``f(x)`` (scalar or array)
    with respect to ``x[i]``. The relative error of each entry is measured
    against ``max(|analytic|, |numeric|, floor)``; with ``absolute=True``
    the raw entrywise difference is returned instead.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4]")
    worst = 0.0
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        analytic = np.asarray(grad_f(x), dtype=float)
        numeric = np.empty_like(analytic)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            numeric[i] = (np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2 * h)
        err = np.abs(analytic - numeric)
        if not absolute:
            err = err / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(err)))
    return worst


def quartic_envelope_constant(quad: QuadratureResult | None = None) -> float:
    """``sup f(x) / g(x)`` for ``f`` the normalized quartic density and ``g``
    the ``N(0, 0.75^2)`` envelope, located on a dense grid."""
    if quad is None:
        quad = quadrature_moments(lambda x: -x**4)
    s = QUARTIC_ENVELOPE_SD
    x = np.linspace(-3, 3, 600001)
    log_ratio = (-x**4 - np.log(quad.normalizer)) - (-0.5 * (x / s) ** 2 - np.log(s * np.sqrt(2 * np.pi)))
    # small safety margin over the grid maximum
    return float(np.exp(log_ratio.max())) * (1 + 1e-9)


def rejection_sampler_quartic(n: int, rng: np.random.Generator, *, return_rate: bool = False):
    """Exact draws from the density proportional to ``exp(-x^4)``."""
    if n < 1:
        raise ValueError("n must be positive")
    quad = quadrature_moments(lambda x: -x**4)
    m = quartic_envelope_constant(quad)
    s = QUARTIC_ENVELOPE_SD
    log_norm_f = np.log(quad.normalizer)
    log_norm_g = np.log(s * np.sqrt(2 * np.pi))
    out = []
    have = proposed = 0
    while have < n:
        batch = max(1024, int(1.3 * m * (n - have)))
        x = s * rng.standard_normal(batch)
        u = rng.random(batch)
        log_accept = (-x**4 - log_norm_f) - (-0.5 * (x / s) ** 2 - log_norm_g) - np.log(m)
        keep = x[np.log(u) < log_accept]
        proposed += batch
        have += keep.size
        out.append(keep)
    samples = np.concatenate(out)
    # trim to n and count proposals as if sampling had stopped at the n-th acceptance
    samples = samples[:n]
    if return_rate:
        return samples, have / proposed
    return samples


def batched_rwm_reference(log_density_batch: Callable, start: np.ndarray, proposal_chol: np.ndarray,
                          n_steps: int, rng: np.random.Generator, burn_in: int = 1000):
    """Many independent random-walk Metropolis chains advanced in lockstep.

    Args:
        log_density_batch: maps a ``(C, D)`` array of positions to ``C``
            log-densities.
        start: ``(C, D)`` initial positions, one row per chain.
        proposal_chol: lower Cholesky factor of the fixed Gaussian proposal
            covariance.

    Returns:
        ``(chain_means, acceptance_rate)`` where ``chain_means`` is ``(C, D)``.
    """
    theta = np.array(start, dtype=float)
    n_chains, dim = theta.shape
    logp = log_density_batch(theta)
    total = np.zeros_like(theta)
    accepted = 0
    for t in range(burn_in + n_steps):
        prop = theta + rng.standard_normal((n_chains, dim)) @ proposal_chol.T
        logp_prop = log_density_batch(prop)
        acc = np.log(rng.random(n_chains)) < logp_prop - logp
        theta[acc] = prop[acc]
        logp[acc] = logp_prop[acc]
        if t >= burn_in:
            total += theta
            accepted += int(acc.sum())
    return total / n_steps, accepted / (n_chains * n_steps)


def fingerprint(inputs: dict[str, Any]) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return hashlib.sha256(np.ascontiguousarray(o).tobytes()).hexdigest()
        raise TypeError(f"cannot fingerprint {type(o)}")

    blob = json.dumps(inputs, sort_keys=True, default=default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Oracle:
    name: str
    descriptor: str
    result: dict[str, Any]
    provenance: str


class OracleCache:
    """Directory of JSON oracle records keyed by name and input fingerprint.

    Writes go to a temporary file in the same directory and are renamed into
    place, so concurrent writers never leave a partial record behind.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        if root is None:
            root = os.environ.get("MANIFOLD_MCMC_ORACLE_CACHE",
                                  Path.home() / ".cache" / "manifold_mcmc" / "oracles")
        self.root = Path(root)

    def _path(self, name: str, key: str) -> Path:
        return self.root / f"{name}-{key}.json"

    def get(self, name: str, key: str) -> Oracle | None:
        path = self._path(name, key)
        if not path.exists():
            return None
        with open(path) as fh:
            rec = json.load(fh)
        return Oracle(rec["name"], rec["descriptor"], rec["result"], rec["provenance"])

    def put(self, oracle: Oracle, key: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump({"name": oracle.name, "descriptor": oracle.descriptor, "key": key,
                       "result": oracle.result, "provenance": oracle.provenance}, fh, indent=2)
        os.replace(tmp, self._path(oracle.name, key))

    def compute(self, name: str, descriptor: str, inputs: dict[str, Any],
                fn: Callable[[], dict[str, Any]], provenance: str = "") -> Oracle:
        key = fingerprint(inputs)
        hit = self.get(name, key)
        if hit is not None:
            return hit
        oracle = Oracle(name, descriptor, fn(), provenance)
        self.put(oracle, key)
        return oracle


def reference_posterior_mean(model, *, n_chains: int = 200, n_steps: int = 50_000, seed: int = 0,
                             cache: OracleCache | None = None) -> dict[str, Any]:
    """Posterior mean of ``model`` from ``n_chains * n_steps`` random-walk draws.

    The proposal covariance is ``2.38^2 / D`` times the inverse metric at the
    mode (found by Fisher scoring), a fixed Gaussian random walk. Chains start
    at independent draws from the matching Laplace approximation. The MCSE
    comes from the spread of the independent per-chain means.
    """
    if model.log_density_batch is None or model.metric is None:
        raise ValueError("reference runs need a batched log-density and a metric")
    cache = cache or OracleCache()

    def run():
        mode = np.zeros(model.dim)
        for _ in range(100):
            g = model.metric(mode)
            step = g.solve(model.grad_log_density(mode))
            mode = mode + step
            if np.max(np.abs(step)) < 1e-12:
                break
        g = model.metric(mode)
        cov = g.inv
        rng = np.random.default_rng(seed)
        start = mode + rng.standard_normal((n_chains, model.dim)) @ np.linalg.cholesky(cov).T
        scale = 2.38 / np.sqrt(model.dim)
        chain_means, rate = batched_rwm_reference(
            model.log_density_batch, start, scale * np.linalg.cholesky(cov), n_steps, rng)
        return {
            "mean": chain_means.mean(axis=0).tolist(),
            "mcse": (chain_means.std(axis=0, ddof=1) / np.sqrt(n_chains)).tolist(),
            "mode": mode.tolist(),
            "acceptance_rate": rate,
            "draws": n_chains * n_steps,
        }

    inputs = {"model": model.fingerprint, "n_chains": n_chains, "n_steps": n_steps, "seed": seed}
    return cache.compute("reference_mean", "batched random-walk Metropolis posterior mean", inputs, run,
                         provenance=f"{n_chains} chains x {n_steps} steps, seed {seed}").result
