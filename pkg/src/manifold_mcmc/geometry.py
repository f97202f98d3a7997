"""Dense symmetric positive-definite linear algebra.

Every metric-aware kernel goes through :class:`MetricTensor`, which wraps a
symmetric matrix together with a lazily computed, cached Cholesky factor.
Factorizations and triangular solves call LAPACK directly: for the small
matrices used here the wrapper overhead of the higher level routines
dominates the cost of a step.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from manifold_mcmc.errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

SYMMETRY_TOL = 1e-12


def cholesky(m) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric matrix.

    Raises:
        NotPositiveDefinite: with the (0-based) row of the first
            non-positive pivot.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NotPositiveDefinite(0)
    chol, info = lapack.dpotrf(m, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf argument {-info} invalid")
    return chol


class MetricTensor:
    """Immutable SPD matrix with cached factorization.

    The input is symmetrized as ``(M + M.T) / 2`` when its asymmetry is
    within ``SYMMETRY_TOL``; larger asymmetry is rejected.

    Args:
        matrix: ``(D, D)`` symmetric matrix.
        chol: optional precomputed lower Cholesky factor. Callers passing
            this are responsible for it matching ``matrix``.
    """

    __slots__ = ("matrix", "_chol", "_inv", "_logdet")

    def __init__(self, matrix, chol=None):
        m = np.array(matrix, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        if m.shape[0] > 1:
            asym = np.max(np.abs(m - m.T))
            if asym > SYMMETRY_TOL:
                raise NotSymmetric(f"matrix asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")
            if asym > 0:
                m = 0.5 * (m + m.T)
        m.flags.writeable = False
        self.matrix = m
        if chol is not None:
            chol = np.asarray(chol, dtype=float)
            chol.flags.writeable = False
        self._chol = chol
        self._inv = None
        self._logdet = None

    @classmethod
    def identity(cls, dim: int) -> MetricTensor:
        return cls(np.eye(dim), chol=np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            chol = cholesky(self.matrix)
            chol.flags.writeable = False
            self._chol = chol
        return self._chol

    @property
    def logdet(self) -> float:
        if self._logdet is None:
            self._logdet = 2.0 * float(np.sum(np.log(np.diagonal(self.chol))))
        return self._logdet

    @property
    def inv(self) -> np.ndarray:
        """Explicit inverse, computed once from the Cholesky factor."""
        if self._inv is None:
            inv = self.solve(np.eye(self.dim))
            inv = 0.5 * (inv + inv.T)
            inv.flags.writeable = False
            self._inv = inv
        return self._inv

    def solve(self, v) -> np.ndarray:
        return spd_solve(self, v)

    def quad_form_inv(self, p) -> float:
        """``p^T M^{-1} p`` via a single triangular solve."""
        w, info = lapack.dtrtrs(self.chol, p, lower=1)
        return float(w @ w)

    def inv_sqrt_t(self, z) -> np.ndarray:
        """``L^{-T} z``; maps a standard normal draw to ``N(0, M^{-1})``."""
        x, info = lapack.dtrtrs(self.chol, z, lower=1, trans=1)
        return x

    def __repr__(self) -> str:
        return f"MetricTensor({self.matrix.tolist()!r})"


def spd_solve(m: MetricTensor, v) -> np.ndarray:
    """Solve ``m x = v`` using the cached Cholesky factor of ``m``."""
    x, info = lapack.dpotrs(m.chol, v, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs argument {-info} invalid")
    return x


def log_det(m: MetricTensor) -> float:
    return m.logdet


def sample_gaussian_cov(m: MetricTensor, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``N(0, m)`` as ``L z`` with ``z`` standard normal."""
    z = rng.standard_normal(m.dim)
    return m.chol @ z


def sample_gaussian_precision(m: MetricTensor, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``N(0, m^{-1})`` as ``L^{-T} z``."""
    return m.inv_sqrt_t(rng.standard_normal(m.dim))
