"""Command line entry point.

    manifold-mcmc run <config.yaml | preset> [--out DIR] [--override key=value ...]
    manifold-mcmc check <config.yaml> [--override key=value ...]
    manifold-mcmc presets [--show NAME]

Exit codes: 0 success, 1 configuration error, 2 at least one chain aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from manifold_mcmc.config import parse_config
from manifold_mcmc.errors import ConfigError
from manifold_mcmc.experiment import PRESETS, preset_configs, run_experiment, run_preset

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold-mcmc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config file or a built-in preset")
    run.add_argument("config", help="path to a YAML config, or a preset name")
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    check = sub.add_parser("check", help="validate a config without running it")
    check.add_argument("config")
    check.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    presets = sub.add_parser("presets", help="list built-in recipes")
    presets.add_argument("--show", metavar="NAME", help="print the configs of one preset as YAML")
    return parser


def _print_chain_lines(summary):
    for ch in summary["chains"]:
        if ch["status"] != "ok":
            print(f"  chain {ch['chain']}: ABORTED at step {ch['step']}: {ch['error']}")
            continue
        line = (f"  chain {ch['chain']}: acceptance {ch['acceptance_rate']:.3f}  "
                f"min ESS {min(ch['ess']):.1f}  mean {[round(m, 4) for m in ch['mean']]}")
        if "ks" in ch:
            line += f"  KS {ch['ks']:.4f}"
        print(line)


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.exists() and args.config in PRESETS:
        out = args.out or Path("out") / args.config
        summary = run_preset(args.config, out, args.override)
        aborted = 0
        for name, run in summary["runs"].items():
            print(f"{name}:")
            _print_chain_lines(run)
            aborted += run["aborted"]
        if "ks_ratio_small_over_large" in summary:
            print("KS ratio (tau^2=1e-4 over tau^2=1e-2):", summary["ks_ratio_small_over_large"])
        print(f"wrote {out}")
        return EXIT_ABORT if aborted else EXIT_OK
    cfg = parse_config(path, args.override)
    summary = run_experiment(cfg, args.out)
    print(f"{cfg.name}: {cfg.kernel.name} on {cfg.model.name}, {cfg.n_chains} chain(s)")
    _print_chain_lines(summary)
    print(f"wrote {args.out or cfg.output_dir}")
    return EXIT_ABORT if summary["aborted"] else EXIT_OK


def _cmd_check(args) -> int:
    cfg = parse_config(args.config, args.override)
    print(json.dumps(cfg.model_dump(mode="json"), indent=2))
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.show:
        if args.show not in PRESETS:
            print(f"unknown preset {args.show!r}", file=sys.stderr)
            return EXIT_CONFIG
        docs = [c.model_dump(mode="json") for c in preset_configs(args.show)]
        print(yaml.safe_dump_all(docs, sort_keys=False), end="")
        return EXIT_OK
    for name, docs in PRESETS.items():
        kernels = ", ".join(d["kernel"]["name"] for d in docs)
        print(f"{name:24s} {len(docs)} run(s): {kernels}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "check": _cmd_check, "presets": _cmd_presets}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
