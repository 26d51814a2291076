"""Command line entry point: ``stochdelay {simulate,verify,gamma-norm,oracle}``.

Exit codes: 0 success or verdict PASS, 1 verdict FAIL, 2 configuration
error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, default_config, parse_config
from .scenarios import BUILDERS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("stochdelay")


def _add_common(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML scenario file")
    src.add_argument("--scenario", choices=sorted(BUILDERS), help="run a named scenario with default parameters")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: config 'out')")
    p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles (results do not depend on it)")
    p.add_argument("--levels", type=int, help="number of refinement levels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochdelay", description=__doc__.splitlines()[0])
    parser.add_argument("--list-scenarios", action="store_true", help="print scenario names and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name, text in (
        ("simulate", "ensemble of mild solutions: moments.csv, paths.csv"),
        ("verify", "weak/mild/strong residuals, lift, covariance and gamma checks"),
        ("gamma-norm", "Haar gamma-norm estimates"),
        ("oracle", "scalar Ornstein-Uhlenbeck oracle suite"),
    ):
        _add_common(sub.add_parser(name, help=text))
    return parser


def load_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.levels is not None:
        overrides["levels"] = args.levels
    if args.config:
        cfg = parse_config(args.config)
        if overrides:
            cfg = cfg.with_(**overrides)
    else:
        cfg = default_config(args.scenario or "transport", **overrides)
    if args.out:
        cfg = cfg.with_(out=args.out)
    if args.levels is not None and args.levels < 1:
        raise ConfigError("--levels must be >= 1")
    return cfg.with_(threads=max(1, args.threads))


def main(argv=None) -> int:
    from . import harness

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.list_scenarios:
        for name, (params_cls, _) in sorted(BUILDERS.items()):
            print(f"{name}: {params_cls.__doc__.strip().splitlines()[0]}")
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "simulate":
            harness.run_simulate(cfg, threads=cfg.threads)
            print(f"wrote {cfg.out}/moments.csv, paths.csv, manifest.json")
            return EXIT_OK
        if args.command == "verify":
            verdict = harness.run_verify(cfg, threads=cfg.threads, levels=args.levels)
            for name, check in verdict["checks"].items():
                print(f"{name}: {'PASS' if check.get('pass') else 'FAIL'}")
            print(f"verdict: {'PASS' if verdict['pass'] else 'FAIL'}")
            return EXIT_OK if verdict["pass"] else EXIT_FAIL
        if args.command == "gamma-norm":
            res = harness.run_gamma(cfg)
            ok = all(r.get("pass", False) for r in res.values())
            for name, r in res.items():
                print(f"{name}: {'PASS' if r.get('pass') else 'FAIL'}")
            return EXIT_OK if ok else EXIT_FAIL
        res = harness.run_oracle(cfg, threads=cfg.threads, levels=args.levels)
        print(f"oracle: {'PASS' if res['pass'] else 'FAIL'}")
        return EXIT_OK if res["pass"] else EXIT_FAIL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
