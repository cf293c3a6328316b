"""Command line entry point: ``anderson-lab <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError
from .harness import EXIT_CONFIG, KINDS, OUT_ENV, ExperimentConfig, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anderson-lab", description="Run one experiment and write JSON/CSV results.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="JSON file: {\"params\": {...}, \"seed\": N}; 'kind' may be omitted")
        p.add_argument("--set", action="append", default=[], metavar="KEY=JSON", help="override one parameter")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./anderson_lab_out)")
        p.add_argument("--threads", type=int, help="cap BLAS threads")
    return ap


def _load(args) -> ExperimentConfig:
    data = {"kind": args.kind, "params": {}}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if loaded.get("kind", args.kind) != args.kind:
            raise ConfigError(f"config is for {loaded['kind']!r}, not {args.kind!r}")
        data.update(loaded)
        data["kind"] = args.kind
    params = dict(data.get("params", {}))
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=JSON, got {item!r}")
        try:
            params[key] = json.loads(val)
        except json.JSONDecodeError:
            params[key] = val
    data["params"] = params
    return ExperimentConfig.from_dict(data, seed=args.seed, out=args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        rec = run(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {"status": rec.status, "scalars": rec.scalars}
    if rec.error:
        summary["error"] = rec.error
    print(json.dumps(summary, indent=2, sort_keys=True))
    return rec.exit_code


if __name__ == "__main__":
    sys.exit(main())
