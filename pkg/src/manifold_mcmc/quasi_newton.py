"""Curvature estimates from chain history for quasi-Newton preconditioned MALA."""

from __future__ import annotations

import hashlib
from collections import deque

import numpy as np

from manifold_mcmc.geometry import MetricTensor

DEFAULT_GAMMA_MIN = 1e-6


class QuasiNewtonAdapter:
    """Limited-memory secant approximation ``B`` of the negative Hessian.

    Pairs ``s = theta_new - theta_old`` and ``y = -(grad_new - grad_old)``
    are collected from consecutive distinct chain states; pairs with
    ``s^T y <= 0`` are skipped. ``B`` is the block BFGS update of the base
    ``delta I`` with the most recent ``min(memory, D)`` pairs,

        B = delta (I - S (S^T S)^{-1} S^T) + Y (S^T Y)^{-1} Y^T,

    which satisfies ``B S = Y`` whenever ``S^T Y`` is symmetric (exactly the
    case for a quadratic log-density). ``delta`` is the reciprocal of the
    Barzilai-Borwein step ``s^T y / y^T y`` of the latest pair, floored at
    ``gamma_min``; with no usable pairs ``B = gamma_min I``. Pairs are
    dropped oldest-first until the symmetrized ``S^T Y`` is positive
    definite.

    The adapter is owned by exactly one chain. Once :meth:`freeze` is called
    the metric never changes again.
    """

    def __init__(self, dim: int, memory: int = 5, gamma_min: float = DEFAULT_GAMMA_MIN):
        if memory < 1:
            raise ValueError("memory must be at least 1")
        self.dim = dim
        self.memory = memory
        self.gamma_min = gamma_min
        self.pairs: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=memory)
        self.n_skipped = 0
        self.n_observed = 0
        self.frozen = False
        self._metric: MetricTensor | None = None

    def observe(self, theta_old, grad_old, theta_new, grad_new) -> None:
        if self.frozen:
            raise RuntimeError("adapter is frozen")
        s = np.asarray(theta_new, dtype=float) - theta_old
        if not np.any(s):
            return
        y = -(np.asarray(grad_new, dtype=float) - grad_old)
        self.n_observed += 1
        sy = float(s @ y)
        if not sy > 0 or not np.isfinite(sy):
            self.n_skipped += 1
            return
        self.pairs.append((s, y))
        self._metric = None

    def base_scale(self) -> float:
        if not self.pairs:
            return self.gamma_min
        s, y = self.pairs[-1]
        gamma = float(s @ y) / float(y @ y)
        return max(1.0 / gamma, self.gamma_min)

    def matrix(self) -> np.ndarray:
        delta = self.base_scale()
        b = delta * np.eye(self.dim)
        recent = list(self.pairs)[-min(self.memory, self.dim):]
        while recent:
            S = np.column_stack([s for s, _ in recent])
            Y = np.column_stack([y for _, y in recent])
            sty = S.T @ Y
            sty = 0.5 * (sty + sty.T)
            sts = S.T @ S
            if np.linalg.cond(sts) < 1e12 and np.all(np.linalg.eigvalsh(sty) > 0):
                proj = S @ np.linalg.solve(sts, S.T)
                b = delta * (np.eye(self.dim) - proj) + Y @ np.linalg.solve(sty, Y.T)
                break
            recent = recent[1:]
        return 0.5 * (b + b.T)

    def metric(self) -> MetricTensor:
        if self._metric is None:
            self._metric = MetricTensor(self.matrix())
        return self._metric

    def freeze(self) -> MetricTensor:
        m = self.metric()
        self.frozen = True
        return m

    def fingerprint(self) -> str:
        return hashlib.sha256(self.metric().matrix.tobytes()).hexdigest()[:16]
