"""Choose the numerical-delta step for a dataset by smoothed-bootstrap coverage.

    python scripts/select_epsilon.py data.csv --p 0.25 --B-outer 100 --B-inner 200

With no data file the script draws one sample of size --N from the
simulation design.
"""

import argparse
import math

from bfrontier.bootstrap import select_epsilon
from bfrontier.data import load_csv
from bfrontier.frontier import DteClaim
from bfrontier.montecarlo import McDgp, dgp_sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", nargs="?", default=None)
    ap.add_argument("--N", type=int, default=500)
    ap.add_argument("--z", type=float, default=0.0)
    ap.add_argument("--p", type=float, default=0.25)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--B-outer", type=int, default=100)
    ap.add_argument("--B-inner", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    ds = load_csv(args.input, "y", "x") if args.input else dgp_sample(McDgp(), args.N, args.seed)
    sel = select_epsilon(ds, DteClaim(args.z, args.p), args.alpha, None, args.B_outer,
                         args.B_inner, args.seed, args.threads)
    for e, cv in zip(sel.grid, sel.coverage):
        mark = "  <-" if e == sel.epsilon else ""
        print(f"ratio {e * math.sqrt(ds.n):5.2f}  epsilon {e:.5f}  coverage {cv:.3f}{mark}")


if __name__ == "__main__":
    main()
