"""Weak, mild and strong residuals under bridge refinement for one scenario.

    python scripts/refinement_study.py --scenario transport --levels 4
"""
import argparse

from stochdelay.config import default_config, parse_config
from stochdelay.verify import equivalence_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="transport")
    ap.add_argument("--config")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--paths", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = parse_config(args.config) if args.config else default_config(args.scenario)
    rep = equivalence_report(cfg.problem, cfg.level_dts(args.levels), args.seed, args.paths)
    print(f"{'level':>5} {'dt':>10} {'weak':>10} {'mild':>10} {'strong':>10}")
    for s in rep.summary:
        strong = "skipped" if s["strong"] is None else f"{s['strong']:.3e}"
        print(f"{s['level']:>5} {s['dt']:>10.3e} {s['weak']:>10.3e} {s['mild']:>10.3e} {strong:>10}")
    for col, orders in rep.orders.items():
        print(f"order {col}: {', '.join(f'{o:.2f}' for o in orders)}")
    print("verdict:", "PASS" if rep.passed else "FAIL")


if __name__ == "__main__":
    main()
