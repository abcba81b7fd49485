"""Measured common-noise fixed-point rates against the contraction bound as rho varies.

    python3 scripts/gmap_contraction.py configs/common_noise.json
"""

import argparse
import json
from pathlib import Path

import numpy as np

from relperf.cli import load_spec
from relperf.graphon_solver import GMapRefused, gmap_bound, solve_graphon_bsde_common_noise


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", type=Path)
    ap.add_argument("--rhos", type=float, nargs="+", default=list(np.linspace(0.0, 1.0, 11)))
    args = ap.parse_args()

    spec = load_spec(json.loads(args.config.read_text()))
    print(f"{'rho':>6}  {'rate':>12}  {'bound':>12}")
    for rho in args.rhos:
        s = spec.with_overrides(rho=float(rho))
        bound = gmap_bound(s, s.rho)
        try:
            rate = f"{solve_graphon_bsde_common_noise(s).contraction_rate:12.4g}"
        except GMapRefused:
            rate = f"{'refused':>12}"
        print(f"{rho:6.2f}  {rate}  {bound:12.4g}")


if __name__ == "__main__":
    main()
