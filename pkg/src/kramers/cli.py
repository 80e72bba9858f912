"""Command-line interface.

Subcommands: models, instanton, landscape, rate, mc-exit, mc-committor,
validate.  Structured results go to stdout as JSON with canonical key
order and 17-significant-digit floats (so emitted reports re-serialize
byte-identically); diagnostics go to stderr.  Exit codes: 0 success,
1 usage error, 2 assumption failure (non-smooth quasipotential), 3
numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import dynamics, landscape, montecarlo, saddle
from .errors import KramersError, ModelNotFound, NonSmoothQuasipotential
from .models import ResolvedModel, builtin_models, resolve_model
from .validate import validate_suite

__all__ = ["main", "canonical_json"]


def _canonical(obj):
    """Convert to plain JSON types with floats formatted at 17 significant
    digits (round-trip exact)."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.17g}")
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, indent=2)


def _emit(payload):
    sys.stdout.write(canonical_json(payload) + "\n")


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad point {text!r}") from exc


def _parse_grid(text: str):
    """Parse a sweep spec `x1:lo:hi:n,x2:lo:hi:n` into per-axis grids."""
    axes = []
    for part in text.split(","):
        fields = part.split(":")
        if len(fields) != 4:
            raise argparse.ArgumentTypeError(f"bad grid axis {part!r}")
        _, lo, hi, num = fields
        axes.append(np.linspace(float(lo), float(hi), int(num)))
    return axes


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kramers",
        description="Transition rates for metastable diffusions, with "
        "Monte Carlo validation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, model=True):
        if model:
            p.add_argument("--model", required=True,
                           help="model string, e.g. 'dw2d-shear(kappa=0.5)'")
        p.add_argument("--tol", type=float, default=1e-7,
                       help="truncation tolerance for instanton endpoints")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("models", help="list registered models or show one")
    p.add_argument("action", nargs="?", default="list", choices=["list", "show"])
    p.add_argument("--model", help="model string (for 'show')")

    p = sub.add_parser("instanton", help="compute the instanton and its action")
    add_common(p)
    p.add_argument("--emit-instanton", metavar="PATH",
                   help="write the instanton path as CSV")

    p = sub.add_parser("landscape", help="quasipotential / prefactor queries")
    add_common(p)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--point", action="append", type=_parse_point, default=[],
                   help="query point 'x1,x2,...' (repeatable)")
    p.add_argument("--grid", type=_parse_grid,
                   help="CSV sweep 'x1:lo:hi:n,x2:lo:hi:n'")

    p = sub.add_parser("rate", help="irreversible Eyring-Kramers rate")
    add_common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--emit-instanton", metavar="PATH",
                   help="write the instanton path as CSV")

    p = sub.add_parser("mc-exit", help="Monte Carlo first-passage sampling")
    add_common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stop-radius", type=float, default=0.2)
    p.add_argument("--max-steps", type=int, default=100_000_000)
    p.add_argument("--dump-times", metavar="PATH",
                   help="write one passage time per line")

    p = sub.add_parser("mc-committor", help="empirical committor near the saddle")
    add_common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--point", type=_parse_point,
                   help="start point (default: saddle offset by -0.5*sqrt(eps) "
                   "along the unstable direction)")
    p.add_argument("--z-cap", type=float, default=None,
                   help="stopping level for the unstable coordinate")

    p = sub.add_parser("validate", help="run the full invariant suite")
    add_common(p)
    return parser


def _resolve_or_fail(text: str) -> ResolvedModel:
    return resolve_model(text)


def _config_echo(args, keys):
    return {k.replace("_", "-"): getattr(args, k) for k in keys
            if getattr(args, k, None) is not None}


def _require_attractors(resolved: ResolvedModel):
    if resolved.facts.attractors is None:
        raise ModelNotFound(
            f"model {resolved.name!r} has no registered attractor pair")
    return resolved.facts.attractors


def _cmd_models(args) -> int:
    if args.action == "list":
        _emit({"models": [
            {"name": r.name, "parameters": r.parameters,
             "description": r.description}
            for r in builtin_models()]})
        return 0
    if not args.model:
        raise ModelNotFound("models show requires --model")
    res = _resolve_or_fail(args.model)
    facts = res.facts
    _emit({
        "config": {"command": "models show", "model": args.model},
        "name": res.name,
        "parameters": res.parameters,
        "dim": res.spec.dim,
        "has_transverse": res.spec.has_transverse,
        "domain_lo": res.spec.domain_lo,
        "domain_hi": res.spec.domain_hi,
        "known_facts": {
            "attractors": None if facts.attractors is None
            else [a for a in facts.attractors],
            "saddle": facts.saddle,
            "barrier": facts.barrier,
        },
    })
    return 0


def _cmd_instanton(args) -> int:
    res = _resolve_or_fail(args.model)
    x1, x2 = _require_attractors(res)
    x_star = saddle.find_saddle(res.spec, res.facts.saddle
                                if res.facts.saddle is not None
                                else 0.5 * (np.asarray(x1) + np.asarray(x2)))
    sd = saddle.saddle_geometry(res.spec, x_star, attractor=x1, toward=x2)
    inst = dynamics.compute_instanton(res.spec, sd, x1, tol=args.tol)
    if args.emit_instanton:
        with open(args.emit_instanton, "w") as fh:
            dynamics.path_to_csv(inst.path, fh)
    _emit({
        "config": _config_echo(args, ["model", "tol"]),
        "action": inst.action,
        "endpoint_gaps": list(inst.endpoint_gaps),
        "incoming_direction": inst.incoming_direction,
        "n_samples": len(inst.path.times),
        "barrier": landscape.quasipotential(res.spec, sd.x_star, x1),
    })
    return 0


def _cmd_landscape(args) -> int:
    res = _resolve_or_fail(args.model)
    x1, _ = _require_attractors(res)
    spec = res.spec
    if args.grid:
        if len(args.grid) != spec.dim:
            raise ModelNotFound(
                f"grid has {len(args.grid)} axes, model dim is {spec.dim}")
        mesh = np.meshgrid(*args.grid, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        cols = ",".join(f"x{i + 1}" for i in range(spec.dim))
        sys.stdout.write(f"{cols},V,F,Cst\n")
        for p in pts:
            v = landscape.quasipotential(spec, p, x1)
            f = landscape.f_function(spec, p)
            try:
                cst = landscape.stationary_prefactor(spec, p, x1).c_value
            except KramersError:
                cst = float("nan")
            vals = ",".join(f"{q:.17g}" for q in p)
            sys.stdout.write(f"{vals},{v:.17g},{f:.17g},{cst:.17g}\n")
        return 0
    points = args.point or [np.asarray(x1, dtype=float)]
    results = []
    for p in points:
        pref = landscape.stationary_prefactor(spec, p, x1)
        results.append({
            "x": p,
            "V": landscape.quasipotential(spec, p, x1),
            "F": landscape.f_function(spec, p),
            "C_st": pref.c_value,
            "ensemble_density": landscape.ensemble_density(
                spec, p, args.epsilon, prefactor=pref),
        })
    _emit({
        "config": _config_echo(args, ["model", "epsilon", "tol"]),
        "points": results,
    })
    return 0


def _cmd_rate(args) -> int:
    res = _resolve_or_fail(args.model)
    x1, x2 = _require_attractors(res)
    report = saddle.transition_rate(res.spec, x1, x2, args.epsilon,
                                    tol=args.tol)
    if args.emit_instanton:
        with open(args.emit_instanton, "w") as fh:
            dynamics.path_to_csv(report.instanton.path, fh)
    payload = {"config": _config_echo(args, ["model", "epsilon", "tol"])}
    payload.update(report.as_dict())
    _emit(payload)
    return 0


def _cmd_mc_exit(args) -> int:
    res = _resolve_or_fail(args.model)
    x1, x2 = _require_attractors(res)
    cfg = montecarlo.McConfig(
        epsilon=args.epsilon, dt=args.dt, n_samples=args.n, seed=args.seed,
        stop_radius=args.stop_radius, max_steps=args.max_steps,
        workers=args.workers)
    est = montecarlo.sample_transition_times(res.spec, cfg, x1, x2)
    if args.dump_times:
        with open(args.dump_times, "w") as fh:
            for t in est.times:
                fh.write(f"{t:.17g}\n")
    payload = {"config": _config_echo(
        args, ["model", "epsilon", "dt", "n", "seed", "workers",
               "stop_radius", "max_steps"])}
    payload.update(est.as_dict())
    _emit(payload)
    return 0


def _cmd_mc_committor(args) -> int:
    res = _resolve_or_fail(args.model)
    facts = res.facts
    if facts.saddle is None:
        raise ModelNotFound(f"model {res.name!r} has no registered saddle")
    attr = facts.attractors[0] if facts.attractors else None
    toward = facts.attractors[1] if facts.attractors else None
    x_star = saddle.find_saddle(res.spec, facts.saddle)
    sd = saddle.saddle_geometry(res.spec, x_star, attractor=attr, toward=toward)
    y = args.point if args.point is not None else (
        sd.x_star - 0.5 * np.sqrt(args.epsilon) * sd.v_plus)
    z_cap = args.z_cap if args.z_cap is not None else (
        8.0 * np.sqrt(args.epsilon) + 2.0 * abs(saddle.zeta_plus(sd, y)))
    cfg = montecarlo.McConfig(epsilon=args.epsilon, dt=args.dt,
                              n_samples=args.n, seed=args.seed,
                              workers=args.workers)
    est = montecarlo.empirical_committor(res.spec, sd, y, cfg, z_cap)
    payload = {"config": _config_echo(
        args, ["model", "epsilon", "dt", "n", "seed", "workers"])}
    payload["z_cap"] = z_cap
    payload["point"] = y
    payload["zeta_plus"] = saddle.zeta_plus(sd, y)
    payload["analytic"] = saddle.committor(res.spec, sd, y, args.epsilon)
    payload.update(est.as_dict())
    _emit(payload)
    return 0


def _cmd_validate(args) -> int:
    res = _resolve_or_fail(args.model)
    report = validate_suite(res, seed=args.seed)
    payload = {"config": _config_echo(args, ["model", "seed"])}
    payload.update(report)
    _emit(payload)
    if not report["passed"]:
        failing = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"failed checks: {', '.join(failing)}", file=sys.stderr)
        return 2
    return 0


_HANDLERS = {
    "models": _cmd_models,
    "instanton": _cmd_instanton,
    "landscape": _cmd_landscape,
    "rate": _cmd_rate,
    "mc-exit": _cmd_mc_exit,
    "mc-committor": _cmd_mc_committor,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _HANDLERS[args.command](args)
    except (ModelNotFound, argparse.ArgumentTypeError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NonSmoothQuasipotential as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return 2
    except (KramersError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
