"""Finite-n versus graphon convergence table for a graphon-mode config.

    python3 scripts/run_convergence.py configs/graphon_uniform.json --n 4 16 64
"""

import argparse
import json
from pathlib import Path

from relperf.cli import load_spec
from relperf.verify import convergence_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", type=Path)
    ap.add_argument("--n", type=int, nargs="+", default=[4, 16, 64])
    ap.add_argument("--m", type=int, default=None, help="graphon types (default: config m)")
    ap.add_argument("--self-weight", action="store_true")
    ap.add_argument("--csv", type=Path, default=None)
    args = ap.parse_args()

    spec = load_spec(json.loads(args.config.read_text()))
    rep = convergence_experiment(
        spec.family, spec.graphon, tuple(args.n), m=args.m or spec.m, rho=spec.rho,
        horizon=spec.horizon, steps=spec.steps, self_weight=args.self_weight,
    )
    cols = ("n", "max_strategy_gap", "max_value_gap", "scaled_l2", "modulus", "gamma1_root", "gamma2_root")
    print("  ".join(f"{c:>16}" for c in cols))
    for row in rep.rows:
        print("  ".join(f"{row[c]:>16.6g}" for c in cols))
    if args.csv:
        args.csv.write_text(rep.to_csv())


if __name__ == "__main__":
    main()
