"""Command-line entry point: ``python -m fesynapse <experiment> [--config ...]``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("fesynapse")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fesynapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config; omitted keys take defaults")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for repeats/sweep points")
        s.add_argument("--repeats", type=int, help="override the repeat count")
        s.add_argument("--dump-config", action="store_true",
                       help="print the effective config and exit")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {"experiment": args.experiment}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    # rebuild through from_dict so overrides are validated like file values
    return ExperimentConfig.from_dict({**cfg.to_dict(), **changes})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(cfg.to_json())
        return EXIT_OK
    from .experiments import run  # deferred: keeps --help and config checks fast
    try:
        result = run(cfg, jobs=args.jobs)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report any failure with the runtime exit code
        log.debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_summary(cfg, result)
    return EXIT_OK


def _print_summary(cfg: ExperimentConfig, result: dict) -> None:
    if cfg.experiment in ("train-eval",):
        print(f"accuracy {result['mean']:.4f} +- {result['sd']:.4f}  -> {cfg.out}")
    elif cfg.experiment == "binary-fraction-sweep":
        for f, m, s, n in result["summary"]:
            print(f"fraction {f:.2f}: accuracy {m:.4f} +- {s:.4f} (n={n})")
    elif cfg.experiment == "calibrate":
        r = result["result"]
        print(f"mse {r.initial_mse:.5f} -> {r.mse:.5f} ({r.n_evals} evals, converged={r.converged})")
    elif cfg.experiment == "curves":
        print(f"mse vs target {result['mse']:.5f}  -> {cfg.out}")
    elif cfg.experiment == "domain-sweep":
        for n, k in result["table"]:
            print(f"n_domains {n:4d}: {k} plateaus")


if __name__ == "__main__":
    sys.exit(main())
