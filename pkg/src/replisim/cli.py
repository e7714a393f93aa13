"""Command-line entry point: ``replisim --config run.json [--sweep grid.json]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .cluster import MalformedTraceError
from .config import ConfigError, ExperimentConfig, format_validation_error, load_config
from .experiment import run_single, run_sweep, summary_line
from .workflow import WorkflowError

EXIT_USAGE = 2
EXIT_INPUT = 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="replisim",
                                description="Simulate replicated workflow tasks on a shared cluster.")
    p.add_argument("--config", help="experiment JSON; defaults apply when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", help="single, fixed:N, rl or rl:N")
    p.add_argument("--phi", type=float, help="workflow contingency (>= 0)")
    p.add_argument("--balancing", choices=("balanced", "current"))
    p.add_argument("--max-replicas", type=int)
    p.add_argument("--sweep", help="sweep grid JSON (axes: phi, policies, balancing, seeds)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output directory (REPLISIM_OUT overrides)")
    p.add_argument("--write-traces", action="store_true",
                   help="also write the interactive and workload traces used")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {"seed": args.seed, "policy": args.policy, "phi": args.phi,
                 "balancing": args.balancing, "max_replicas": args.max_replicas}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    out = os.environ.get("REPLISIM_OUT") or args.out
    if out:
        overrides["out"] = out
    if overrides:
        try:
            config = ExperimentConfig.model_validate({**config.model_dump(), **overrides})
        except ValidationError as exc:
            raise ConfigError(format_validation_error(exc, "command line")) from None
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.sweep:
            path = Path(args.sweep)
            if not path.exists():
                raise FileNotFoundError(f"sweep file not found: {path}")
            try:
                sweep = json.loads(path.read_text() or "{}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
            summaries = run_sweep(config, sweep, workers=args.workers)
            for s in summaries:
                print(summary_line(s))
        else:
            print(summary_line(run_single(config, write_traces=args.write_traces).summary))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, MalformedTraceError, WorkflowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
