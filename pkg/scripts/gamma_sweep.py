"""Haar-depth sweep of the transport gamma-norm and the tail envelope check.

    python scripts/gamma_sweep.py --depth 10 --n-mc 2000
"""
import argparse

from stochdelay.config import default_config
from stochdelay.verify import haar_depth_sweep, haar_tail_envelope


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=10)
    ap.add_argument("--n-mc", type=int, default=2000)
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pr = default_config("transport").problem()
    sweep = haar_depth_sweep(pr, 1.0, args.depth, args.n_mc, args.seed)
    for d, v, se in zip(sweep["depth"], sweep["norm"], sweep["stderr"]):
        print(f"depth {d:>2}: |R|_gamma ~ {v:.6f}  (se of square {se:.2e})")
    env = haar_tail_envelope(pr, args.depth, beta=args.beta, seed=args.seed)
    for n0, frac, e in zip(env["n0"], env["dominated_fraction"], env["envelope"]):
        print(f"n0={n0:>2}: envelope {e:.4f}, dominated fraction {frac:.3f}")


if __name__ == "__main__":
    main()
