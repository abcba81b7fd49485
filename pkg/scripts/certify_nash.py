"""Solve a finite game, certify the equilibrium on a strategy grid and run the martingale check.

    python3 scripts/certify_nash.py configs/state_dependent.json --points 201
"""

import argparse
import json
from pathlib import Path

from relperf.cli import load_spec
from relperf.n_agent_solver import solve_n_agent_bsde
from relperf.verify import certify_nash, check_martingale_optimality, random_perturbations


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", type=Path)
    ap.add_argument("--points", type=int, default=101)
    ap.add_argument("--perturb", type=float, default=0.0, help="shift every strategy by this amount")
    ap.add_argument("--perturbations", type=int, default=20)
    args = ap.parse_args()

    spec = load_spec(json.loads(args.config.read_text()))
    sol = solve_n_agent_bsde(spec)
    shifted = [[p + args.perturb for p in o.pi] for o in sol.own] if args.perturb else None
    cert = certify_nash(spec, sol, points=args.points, strategies=shifted)
    print(f"certificate {cert.status}: max gain {cert.max_gain:.3e} (tolerance {cert.tolerance:g})")
    for i, gain in enumerate(cert.gains):
        rep = check_martingale_optimality(spec, sol, i, random_perturbations(sol, i, args.perturbations, seed=i))
        print(
            f"  agent {i}: gain {gain:.3e}, martingale residual {rep.martingale_residual:.2e},"
            f" worst direction {rep.worst_direction:.2e}, {'ok' if rep.passed else 'FAILED'}"
        )


if __name__ == "__main__":
    main()
