"""Command-line front end.

    relperf <command> --spec game.json [--out DIR] [--seed N] [--set key=value ...]

Commands: solve-n, solve-graphon, closed-form, verify-nash, converge, g-map.
Artifacts are written as ``<command>-<stamp>.*`` into ``--out``; their content
depends only on the spec, overrides and seed.  Exit codes: 0 success,
2 invalid input, 3 solver non-convergence, 4 unsupported projection.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LatticeCapError
from .model import GameSpec, NonConvergence, SpecError, agent_coefficients, require_valid
from .projection import InvalidSet, UnsupportedProjection

COMMANDS = ("solve-n", "solve-graphon", "closed-form", "verify-nash", "converge", "g-map")
EXIT_OK, EXIT_INVALID, EXIT_NONCONV, EXIT_PROJ = 0, 2, 3, 4
EXTRA_KEYS = ("verify", "converge", "scheme")


@dataclass
class RunConfig:
    command: str
    spec_path: Path
    out_dir: Path = Path(".")
    overrides: list = field(default_factory=list)
    seed: int | None = None
    stamp: str | None = None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(obj: dict, overrides) -> dict:
    """Apply ``a.b.0.c=value`` assignments to a parsed JSON document."""
    for item in overrides:
        if "=" not in item:
            raise SpecError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = obj
        for p in parts[:-1]:
            node = node[int(p)] if isinstance(node, list) else node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(text)
        else:
            node[last] = _parse_value(text)
    return obj


def load_document(cfg: RunConfig) -> dict:
    try:
        doc = json.loads(Path(cfg.spec_path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SpecError(f"spec file not found: {cfg.spec_path}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    try:
        apply_overrides(doc, cfg.overrides)
    except (KeyError, IndexError, ValueError) as exc:
        raise SpecError(f"bad override: {exc}") from exc
    if cfg.seed is not None:
        doc["seed"] = cfg.seed
    return doc


def load_spec(doc: dict) -> GameSpec:
    try:
        spec = GameSpec.from_json({k: v for k, v in doc.items() if k not in EXTRA_KEYS})
    except (KeyError, TypeError) as exc:
        raise SpecError(f"spec is missing or mistyped field: {exc}") from exc
    require_valid(spec)
    return spec


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=lambda o: np.asarray(o).tolist()) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_solve_n(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .n_agent_solver import solution_csv, solve_n_agent_bsde

    scheme = doc.get("scheme", "explicit")
    sol = solve_n_agent_bsde(spec, scheme=scheme)
    _write(out, f"{base}.json", _dump({"Y0": sol.Y0, "values": sol.values, "scheme": scheme, "iterations": sol.iterations, "trace": sol.trace}))
    for i in range(spec.n):
        _write(out, f"{base}-agent{i}.csv", solution_csv(sol, i))
    return f"solve-n: n={spec.n} V0 in [{_fmt(sol.values.min())}, {_fmt(sol.values.max())}]"


def cmd_solve_graphon(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .graphon_solver import solve_graphon

    sol = solve_graphon(spec)
    _write(
        out,
        f"{base}.json",
        _dump({"u": sol.u, "Y0": sol.Y0, "values": sol.values, "trace": sol.trace, "gmap_rates": sol.gmap_rates}),
    )
    _write(out, f"{base}-aggregate.csv", sol.aggregate.to_csv())
    lines = ["type,step,node,Y,pi"]
    for k in range(sol.m):
        s = sol.sweeps[k]
        for t, p in enumerate(s.pi):
            for n in range(p.shape[0]):
                lines.append(f"{k},{t},{n},{float(s.Y[t][n])!r},{';'.join(repr(float(v)) for v in p[n])}")
    _write(out, f"{base}-types.csv", "\n".join(lines) + "\n")
    return (
        f"solve-graphon: m={sol.m} V0 in [{_fmt(sol.values.min())}, {_fmt(sol.values.max())}]"
        f" contraction rate {_fmt(sol.contraction_rate)}"
    )


def cmd_closed_form(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .closed_form import prop_gap_bound, prop_graphon_strategy, prop_n_agent_strategy

    if not all(a.deterministic for a in spec.agents):
        raise SpecError("closed-form needs deterministic coefficients")
    rows = []
    gt = spec.gamma_tilde
    for i, a in enumerate(spec.agents):
        th = agent_coefficients(spec, a).theta_img(0)[0]
        if spec.mode == "finite":
            lam = spec.lam_n[i, i] if spec.allow_self_weight else 0.0
            sp = prop_n_agent_strategy(th, a.gamma, spec.rho, lam)
            bound = prop_gap_bound(th, a.gamma, gt, spec.rho, lam)
        else:
            sp, bound = prop_graphon_strategy(th, a.gamma), 0.0
        rows.append({"agent": i, "sigma_pi": sp, "gap_bound": bound})
    _write(out, f"{base}.json", _dump(rows))
    body = "; ".join(f"{r['agent']}: {np.array2string(np.asarray(r['sigma_pi']), precision=6)}" for r in rows)
    return f"closed-form: sigma*pi {body}; max gap bound {_fmt(max(r['gap_bound'] for r in rows))}"


def cmd_verify_nash(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .n_agent_solver import solve_n_agent_bsde
    from .verify import certify_nash, check_martingale_optimality, random_perturbations

    opts = doc.get("verify", {})
    sol = solve_n_agent_bsde(spec)
    shift = float(opts.get("perturb", 0.0))
    strategies = [[p + shift for p in o.pi] for o in sol.own] if shift else None
    cert = certify_nash(spec, sol, points=int(opts.get("grid_points", 101)), strategies=strategies, tolerance=float(opts.get("tolerance", 1e-3)))
    count = int(opts.get("perturbations", 20))
    mart = [
        check_martingale_optimality(spec, sol, i, random_perturbations(sol, i, count, seed=spec.seed + i)).__dict__
        for i in range(spec.n)
    ]
    _write(out, f"{base}.json", _dump({"certificate": json.loads(cert.to_json()), "martingale": mart, "perturb": shift}))
    return f"verify-nash: certificate {cert.status} max deviation gain {_fmt(cert.max_gain)}"


def cmd_converge(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .verify import convergence_experiment

    if spec.family is None or spec.graphon is None:
        raise SpecError("converge needs a graphon-mode spec with a family and a graphon")
    opts = doc.get("converge", {})
    rep = convergence_experiment(
        spec.family,
        spec.graphon,
        tuple(opts.get("n_list", (4, 16, 64))),
        m=int(opts.get("m", spec.m)),
        rho=spec.rho,
        horizon=spec.horizon,
        steps=spec.steps,
        self_weight=bool(opts.get("self_weight", False)),
    )
    _write(out, f"{base}.csv", rep.to_csv())
    _write(out, f"{base}.json", rep.to_json() + "\n")
    last = rep.rows[-1]
    return (
        f"converge: n={last['n']} strategy gap {_fmt(last['max_strategy_gap'])}"
        f" value gap {_fmt(last['max_value_gap'])}"
    )


def cmd_g_map(spec: GameSpec, doc: dict, out: Path, base: str) -> str:
    from .graphon_solver import gmap_bound, solve_graphon_bsde_common_noise

    sol = solve_graphon_bsde_common_noise(spec)
    bound = gmap_bound(spec, spec.rho)
    _write(out, f"{base}.json", _dump({"rates": sol.gmap_rates, "iterations": sol.trace, "bound": bound, "values": sol.values}))
    return f"g-map: measured contraction rate {_fmt(sol.contraction_rate)} (bound {_fmt(bound)})"


HANDLERS = {
    "solve-n": cmd_solve_n,
    "solve-graphon": cmd_solve_graphon,
    "closed-form": cmd_closed_form,
    "verify-nash": cmd_verify_nash,
    "converge": cmd_converge,
    "g-map": cmd_g_map,
}


def run(cfg: RunConfig) -> tuple[int, str]:
    """Execute one command; returns ``(exit code, summary or error line)``."""
    from .graphon_solver import GMapRefused

    module = cfg.command
    try:
        doc = load_document(cfg)
        spec = load_spec(doc)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stamp = cfg.stamp or time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        summary = HANDLERS[cfg.command](spec, doc, out, f"{cfg.command}-{stamp}")
        return EXIT_OK, summary
    except UnsupportedProjection as exc:
        return EXIT_PROJ, f"{module}: projection: {exc}"
    except NonConvergence as exc:
        where = f" (iteration {exc.iteration})" if getattr(exc, "iteration", None) else ""
        return EXIT_NONCONV, f"{module}: solver{where}: {exc}"
    except (SpecError, GMapRefused, InvalidSet, LatticeCapError) as exc:
        return EXIT_INVALID, f"{module}: validation: {exc}"
    except OSError as exc:
        return EXIT_INVALID, f"{module}: io: {exc}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relperf", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--spec", required=True, type=Path, help="GameSpec JSON file")
    ap.add_argument("--out", default=Path("."), type=Path, help="artifact directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="dotted override")
    ap.add_argument("--stamp", default=None, help="artifact name suffix (default: UTC time)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    code, line = run(RunConfig(args.command, args.spec, args.out, args.overrides, args.seed, args.stamp))
    print(line, file=sys.stdout if code == 0 else sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
