"""Batch experiments: build model and kernel from a config, run seeded chains, write outputs."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from manifold_mcmc.config import ExperimentConfig, validate_config
from manifold_mcmc.diagnostics import energy_stats, ks_statistic_1d, moments
from manifold_mcmc.errors import ChainAbort
from manifold_mcmc.samplers import SamplerConfig, run_chain
from manifold_mcmc.targets import (
    identity_metric,
    load_logistic_csv,
    make_gaussian,
    make_logistic,
    make_quartic,
    synthetic_logistic_data,
    wrap_noisy_metric,
)

logger = logging.getLogger(__name__)

THREADS_ENV = "MANIFOLD_MCMC_THREADS"
_MASK64 = (1 << 64) - 1

RHO9 = [[1.0, 0.9], [0.9, 1.0]]

PRESETS: dict[str, list[dict[str, Any]]] = {
    "figure1": [
        {
            "name": f"ula-tau2-{label}",
            "model": {"name": "quartic"},
            "kernel": {"name": "decoupled_langevin", "noise_scale": tau, "drift_scale": 0.5 * tau * tau,
                       "adjust": False, "step_size": tau},
            "n_steps": 100_000,
            "seed": 1,
            "initial": [0.0],
        }
        for label, tau in (("1e-2", 0.1), ("1e-4", 0.01))
    ],
    "logistic-compare": [
        {
            "name": name,
            "model": {"name": "logistic", "n": 100, "dim": 5, "data_seed": 7},
            "kernel": kernel,
            "n_steps": 20_000,
            "seed": 7,
        }
        for name, kernel in (
            ("mala", {"name": "mala", "step_size": 0.1}),
            ("simplified-mmala", {"name": "simplified_mmala", "step_size": 1.0}),
            ("full-mmala", {"name": "full_mmala", "step_size": 1.0}),
            ("rmhmc", {"name": "rmhmc", "step_size": 0.5, "leapfrog_steps": 4}),
        )
    ],
    "noisy-metric-validate": [
        {
            "name": "extended-noisy-cc",
            "model": {"name": "gaussian", "mean": [0.0, 0.0], "cov": RHO9, "wishart_dof": 10},
            "kernel": {"name": "extended_noisy_cc", "step_size": 1.0},
            "n_steps": 266_667,
            "seed": 1,
        }
    ],
    "multipotential-demo": [
        {
            "name": "fisher-and-identity",
            "model": {"name": "gaussian", "mean": [0.0, 0.0], "cov": RHO9},
            "kernel": {"name": "multipotential_rmhmc", "step_size": 0.3, "leapfrog_steps": 3,
                       "metrics": ["model", "identity"]},
            "n_steps": 20_000,
            "seed": 1,
        }
    ],
}


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def chain_seed(master: int, chain: int) -> int:
    """Seed of chain ``chain``: splitmix64 applied to the master seed, then mixed with the index."""
    return splitmix64(splitmix64(master) ^ chain)


def build_model(spec):
    if spec.name == "gaussian":
        model = make_gaussian(spec.mean, spec.cov)
    elif spec.name == "quartic":
        model = make_quartic()
    else:
        if spec.csv is not None:
            data = load_logistic_csv(spec.csv, spec.prior_variance)
        else:
            data = synthetic_logistic_data(spec.n, spec.dim, spec.data_seed, spec.prior_variance)
        model = make_logistic(data)
    if spec.wishart_dof is not None:
        model = wrap_noisy_metric(model, spec.wishart_dof)
    return model


def sampler_config(spec) -> SamplerConfig:
    fields = spec.model_dump(exclude={"name", "metrics", "n_metrics"})
    return SamplerConfig(kernel=spec.name, n_metrics=len(spec.metric_names()), **fields)


def build_metrics(spec, model):
    out = []
    for name in spec.metric_names():
        out.append(model if name == "model" else identity_metric(model))
    return out


def _summarize(trace, model, burn_in):
    mo = moments(trace, burn_in)
    rec = {
        "acceptance_rate": trace.acceptance_rate,
        "ess": mo.ess.tolist(),
        "mean": mo.mean.tolist(),
        "cov": mo.cov.tolist(),
        "mcse": mo.mcse.tolist(),
    }
    if "dH" in trace.diag:
        es = energy_stats(trace)
        rec["energy"] = {"mean_abs_dH": es.mean_abs_dH, "max_abs_dH": es.max_abs_dH,
                         "divergences": es.divergences}
    if model.cdf is not None and model.dim == 1:
        rec["ks"] = ks_statistic_1d(trace, model.cdf, burn_in)
    if trace.meta:
        rec["meta"] = {k: v for k, v in trace.meta.items() if k != "steps"}
    return rec


def _run_one_chain(cfg: ExperimentConfig, model, config, metrics, c, out_dir: Path):
    seed = chain_seed(cfg.seed, c)
    initial = cfg.initial if cfg.initial is not None else np.zeros(model.dim)
    rec = {"chain": c, "seed": seed, "trace_file": f"chain_{c}.csv"}
    t0 = time.perf_counter()
    try:
        trace = run_chain(initial, config, model, cfg.n_steps, seed, metrics=metrics)
    except ChainAbort as exc:
        logger.error("chain %d aborted: %s", c, exc)
        rec.update(status="aborted", step=exc.step, error=str(exc.cause),
                   wall_clock_s=time.perf_counter() - t0)
        return rec
    trace.write_csv(out_dir / rec["trace_file"], cfg.thinning)
    rec.update(status="ok", **_summarize(trace, model, cfg.burn_in))
    rec["wall_clock_s"] = time.perf_counter() - t0
    return rec


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict[str, Any]:
    """Run all chains of ``cfg`` and write ``chain_<c>.csv`` files plus ``summary.json``.

    Chains run concurrently up to ``$MANIFOLD_MCMC_THREADS`` (default: one
    thread per chain). An aborted chain is recorded in the summary and does
    not stop its siblings.
    """
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.model)
    config = sampler_config(cfg.kernel)
    metrics = build_metrics(cfg.kernel, model) if config.kernel == "multipotential_rmhmc" else None

    threads = int(os.environ.get(THREADS_ENV, cfg.n_chains))
    threads = max(1, min(threads, cfg.n_chains))
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_one_chain, cfg, model, config, metrics, c, out_dir)
                   for c in range(cfg.n_chains)]
        chains = [f.result() for f in futures]

    summary = {
        "name": cfg.name,
        "model": cfg.model.model_dump(mode="json"),
        "kernel": cfg.kernel.model_dump(mode="json"),
        "n_steps": cfg.n_steps,
        "burn_in": cfg.burn_in,
        "thinning": cfg.thinning,
        "seed": cfg.seed,
        "chains": chains,
        "aborted": sum(ch["status"] == "aborted" for ch in chains),
        "wall_clock_s": time.perf_counter() - t0,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def preset_configs(name: str, overrides: list[str] | None = None) -> list[ExperimentConfig]:
    from manifold_mcmc.config import apply_overrides

    if name not in PRESETS:
        raise KeyError(name)
    return [validate_config(apply_overrides(doc, overrides)) for doc in PRESETS[name]]


def run_preset(name: str, out_dir, overrides: list[str] | None = None) -> dict[str, Any]:
    """Run every recipe of a preset into ``out_dir/<run name>`` and write a combined summary."""
    out_dir = Path(out_dir)
    runs = {}
    for cfg in preset_configs(name, overrides):
        runs[cfg.name] = run_experiment(cfg, out_dir / cfg.name)
    summary: dict[str, Any] = {"preset": name, "runs": runs}
    if name == "figure1":
        ks = {k: [ch.get("ks") for ch in v["chains"]] for k, v in runs.items()}
        summary["ks"] = ks
        big, small = ks["ula-tau2-1e-2"], ks["ula-tau2-1e-4"]
        summary["ks_ratio_small_over_large"] = [
            s / b if (s is not None and b) else None for s, b in zip(small, big)]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "preset_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
