"""Chain traces and summaries: ESS, moments with MCSE, KS distance, energy errors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from manifold_mcmc.errors import DimensionMismatch, MissingSeries, TraceTooShort

DEFAULT_BURN_IN = 0.25
MIN_LENGTH = 100


@dataclass
class Trace:
    """Record of one chain.

    ``states[t]`` is the position after step ``t + 1``; ``initial`` is the
    starting position. ``accepted``, ``log_accept_ratio`` and every entry of
    ``diag`` have one value per step.
    """

    initial: np.ndarray
    states: np.ndarray
    accepted: np.ndarray
    log_accept_ratio: np.ndarray | None = None
    diag: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    fingerprint: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.states)
        lengths = [len(self.accepted)] + [len(v) for v in self.diag.values()]
        if self.log_accept_ratio is not None:
            lengths.append(len(self.log_accept_ratio))
        if any(m != n for m in lengths):
            raise ValueError("all trace series must share the same length")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    def post_burn_in(self, burn_in: float = DEFAULT_BURN_IN) -> np.ndarray:
        if not 0 <= burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        return self.states[int(burn_in * len(self.states)):]

    def write_csv(self, path, thinning: int = 1) -> None:
        """Write ``step,accepted,theta_1..theta_D[,dH,fp_iters,j]`` rows.

        Floats are written with 17 significant digits so they round-trip.
        """
        keys = [k for k in ("dH", "fp_iters", "j") if k in self.diag]
        header = ["step", "accepted"] + [f"theta_{i + 1}" for i in range(self.dim)] + keys
        fmt = "{:.17g}".format
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in range(thinning - 1, len(self), thinning):
                row = [str(t + 1), "1" if self.accepted[t] else "0"]
                row += [fmt(x) for x in self.states[t]]
                for k in keys:
                    v = self.diag[k][t]
                    row.append(fmt(v) if k == "dH" else ("" if np.isnan(v) else str(int(v))))
                w.writerow(row)

    @classmethod
    def read_csv(cls, path) -> Trace:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        theta_cols = [i for i, h in enumerate(header) if h.startswith("theta_")]
        states = np.array([[float(r[i]) for i in theta_cols] for r in rows]).reshape(len(rows), len(theta_cols))
        accepted = np.array([r[1] == "1" for r in rows], dtype=bool)
        diag = {}
        for k in ("dH", "fp_iters", "j"):
            if k in header:
                i = header.index(k)
                diag[k] = np.array([float(r[i]) if r[i] else np.nan for r in rows])
        initial = states[0] if len(states) else np.empty(len(theta_cols))
        return cls(initial=initial, states=states, accepted=accepted, diag=diag,
                   meta={"steps": [int(r[0]) for r in rows]})


def _as_series(trace, coord: int | None = None) -> np.ndarray:
    if isinstance(trace, Trace):
        trace = trace.states
    x = np.asarray(trace, dtype=float)
    if x.ndim == 2:
        x = x[:, 0 if coord is None else coord]
    return x


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation at all lags, by FFT."""
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    return acov / acov[0]


def ess(trace, coord: int = 0) -> float:
    """Effective sample size of one coordinate.

    ``N / (1 + 2 sum_t rho_t)`` where the sum over lags ``t >= 1`` stops at
    the first ``t`` with ``rho_t + rho_{t+1} <= 0``. A constant series has
    ESS 0. The estimate is capped at ``N``.
    """
    x = _as_series(trace, coord)
    n = len(x)
    if n < MIN_LENGTH:
        raise TraceTooShort(f"need at least {MIN_LENGTH} draws, got {n}")
    if np.ptp(x) == 0:
        return 0.0
    rho = autocorrelation(x)
    stops = np.flatnonzero(rho[1:-1] + rho[2:] <= 0)
    stop = stops[0] + 1 if stops.size else n - 1
    total = float(np.sum(rho[1:stop]))
    return float(min(n / (1.0 + 2.0 * total), n))


class Moments(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    mcse: np.ndarray
    ess: np.ndarray


def moments(trace, burn_in: float = DEFAULT_BURN_IN) -> Moments:
    """Post-burn-in mean, covariance and per-coordinate MCSE (``sd / sqrt(ESS)``)."""
    x = trace.post_burn_in(burn_in) if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    if not isinstance(trace, Trace):
        if x.ndim == 1:
            x = x[:, None]
        if not 0 <= burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        x = x[int(burn_in * len(x)):]
    if len(x) < MIN_LENGTH:
        raise TraceTooShort(f"need at least {MIN_LENGTH} post-burn-in draws, got {len(x)}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    sd = np.sqrt(np.diag(cov))
    ess_vals = np.array([ess(x, i) for i in range(x.shape[1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        mcse = np.where(sd > 0, sd / np.sqrt(ess_vals), 0.0)
    return Moments(mean, cov, mcse, ess_vals)


def ks_statistic_1d(trace, cdf: Callable, burn_in: float = DEFAULT_BURN_IN) -> float:
    """Sup distance between the empirical CDF of the draws and ``cdf``."""
    if isinstance(trace, Trace):
        if trace.dim != 1:
            raise DimensionMismatch("KS statistic needs a 1-D trace")
        x = trace.post_burn_in(burn_in)[:, 0]
    else:
        x = np.asarray(trace, dtype=float)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise DimensionMismatch("KS statistic needs a 1-D trace")
            x = x[:, 0]
        x = x[int(burn_in * len(x)):]
    x = np.sort(x)
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(n) / n
    return float(min(1.0, max(upper.max(), lower.max(), 0.0)))


class EnergyStats(NamedTuple):
    mean_abs_dH: float
    max_abs_dH: float
    divergences: int


def energy_stats(trace: Trace) -> EnergyStats:
    if "dH" not in trace.diag:
        raise MissingSeries("trace has no dH series")
    dh = np.abs(trace.diag["dH"])
    finite = dh[np.isfinite(dh)]
    if "divergent" in trace.diag:
        divergences = int(np.nansum(trace.diag["divergent"]))
    else:
        divergences = int(np.sum(~np.isfinite(dh)))
    if finite.size == 0:
        return EnergyStats(float("nan"), float("nan"), divergences)
    return EnergyStats(float(finite.mean()), float(finite.max()), divergences)
