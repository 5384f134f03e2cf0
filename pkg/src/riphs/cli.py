"""Command line front end.

Subcommands:

  run         solve one experiment config; writes a trajectory CSV, a JSON
              report, and SVG panels (states, co-energy, brackets, control)
  sweep       solve a config over a list of growing horizons
  equilibria  sample the steady-set rank of a built-in system
  list        built-in systems and bundled experiment configs
  describe    show a system's defaults or a config's content

Configs are JSON, validated against a closed schema (unknown keys are
rejected).  A config argument is first tried as a file path, then as the
name of a bundled experiment.

Exit codes: 0 success, 2 configuration or usage error, 3 solver finished
without reaching its tolerances, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:    # pragma: no cover
    jsonschema = None

from . import __version__
from ._svg import LinePlot
from .diagnostics import horizon_sweep, output_set_distances, turnpike_metrics
from .equilibria import manifold_dimension
from .integrate import HorizonSpec, IntegrationError
from .model import (DomainError, ModelError, balance_residuals)
from .ocp import (ControlBounds, CostWeights, OCPSpec, OutputSpec,
                  SolverOptions, TerminalSpec, solve_ocp)
from .systems import BUILTIN_SYSTEMS, make_system


class ConfigError(Exception):
    pass


_number_array = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "system", "initial_state", "horizon", "cost",
                 "control_bounds"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"type": "string", "enum": sorted(BUILTIN_SYSTEMS)},
                "params": {
                    "type": "object",
                    "additionalProperties": {"type": ["number", "null"]},
                },
            },
        },
        "initial_state": _number_array,
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_f", "dt"],
            "properties": {
                "t_f": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha1", "alpha2"],
            "properties": {
                "alpha1": {"type": "number", "minimum": 0},
                "alpha2": {"type": "number", "minimum": 0},
                "T0": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "control_bounds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lower", "upper"],
            "properties": {"lower": _number_array, "upper": _number_array},
        },
        "terminal": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["free", "point", "componentwise"]},
                "values": _number_array,
                "indices": {"type": "array", "minItems": 1,
                            "items": {"type": "integer", "minimum": 0}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["C", "y_ref"],
            "properties": {
                "C": {"type": "array", "items": _number_array, "minItems": 1},
                "y_ref": _number_array,
                "weight": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "feasibility_tol": {"type": "number", "exclusiveMinimum": 0},
                "optimality_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_outer": {"type": "integer", "minimum": 1},
                "max_inner": {"type": "integer", "minimum": 1},
                "penalty_init": {"type": "number", "exclusiveMinimum": 0},
                "tikhonov": {"type": ["number", "null"], "minimum": 0},
                "state_bound_pad": {"type": "number", "exclusiveMinimum": 0},
                "verbose": {"type": "boolean"},
            },
        },
    },
}


def _bundled_config_names():
    root = resources.files("riphs").joinpath("experiments")
    try:
        return sorted(p.name[:-5] for p in root.iterdir()
                      if p.name.endswith(".json"))
    except FileNotFoundError:
        return []


def load_config(ref: str):
    """Read and validate a config, from a path or a bundled name."""
    path = Path(ref)
    if path.exists() and path.is_file():
        text = path.read_text(encoding="utf-8")
        source = str(path)
    else:
        res = resources.files("riphs").joinpath("experiments", ref + ".json")
        if not res.is_file():
            known = ", ".join(_bundled_config_names()) or "(none)"
            raise ConfigError(f"no config file {ref!r} and no bundled "
                              f"experiment of that name; bundled: {known}")
        text = res.read_text(encoding="utf-8")
        source = f"bundled:{ref}"
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON: {exc}") from exc
    if jsonschema is None:    # pragma: no cover
        raise ConfigError("jsonschema is required to validate configs")
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise ConfigError(f"{source}: {exc.message} (at {loc})") from exc
    return cfg, source


def build_spec(cfg: dict):
    """Config dict to problem objects: (OCPSpec, equilibria, system kind)."""
    sys_cfg = cfg["system"]
    try:
        model, params, eq_set = make_system(sys_cfg["kind"],
                                            sys_cfg.get("params"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc

    term_cfg = cfg.get("terminal", {"kind": "free"})
    kind = term_cfg["kind"]
    try:
        if kind == "free":
            terminal = TerminalSpec.free()
        elif kind == "point":
            if "values" not in term_cfg:
                raise ConfigError("terminal kind 'point' needs values")
            terminal = TerminalSpec.point(term_cfg["values"])
        else:
            if "indices" not in term_cfg or "values" not in term_cfg:
                raise ConfigError("terminal kind 'componentwise' needs "
                                  "indices and values")
            terminal = TerminalSpec.componentwise(term_cfg["indices"],
                                                  term_cfg["values"])

        output = None
        if "output" in cfg:
            out_cfg = cfg["output"]
            output = OutputSpec(C=np.array(out_cfg["C"], dtype=float),
                                y_ref=np.array(out_cfg["y_ref"], dtype=float),
                                weight=out_cfg.get("weight", 1.0))

        cost_cfg = cfg["cost"]
        spec = OCPSpec(
            model=model,
            x0=np.array(cfg["initial_state"], dtype=float),
            horizon=HorizonSpec(cfg["horizon"]["t_f"], cfg["horizon"]["dt"]),
            weights=CostWeights(cost_cfg["alpha1"], cost_cfg["alpha2"],
                                cost_cfg.get("T0", 1.0)),
            bounds=ControlBounds(np.array(cfg["control_bounds"]["lower"]),
                                 np.array(cfg["control_bounds"]["upper"])),
            terminal=terminal,
            output=output,
            solver=SolverOptions(**cfg.get("solver", {})),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec, eq_set, sys_cfg["kind"], params


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n",
                    encoding="utf-8")


def _g17(v) -> str:
    return f"{float(v):.17g}"


def _write_trajectory_csv(path: Path, model, sol, eq_set, spec):
    X, U, grid = sol.states, sol.controls, sol.time_grid
    n, m = model.state_dim, model.input_dim
    HX = model.gradient_batch(X.T)
    n_irr = model.n_irreversible
    bk = np.empty((n_irr, X.shape[0]))
    for k in range(n_irr):
        bk[k] = model.entropy_vector @ (model.irr_structures[k] @ HX) \
            if not callable(model.irr_structures[k]) else [
                float(model.entropy_vector
                      @ (model.irr_structures[k](x) @ HX[:, j]))
                for j, x in enumerate(X)]
    dist = eq_set.distance_batch(X.T)
    out_dist = None
    if spec.output is not None:
        out_dist = output_set_distances(spec.output, X)

    # cumulative physical cost at the nodes, integrand at the midpoints to
    # match the transcription quadrature
    from .ocp import _supply_weights
    Mc = (0.5 * (X[:-1] + X[1:])).T
    q = _supply_weights(model, spec.weights, Mc)
    stage = np.sum(q * U.T, axis=0)
    if spec.output is not None:
        E = spec.output.C @ Mc - spec.output.y_ref[:, None]
        stage = stage + spec.output.weight * np.sum(E * E, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(stage * sol.step_sizes())])

    header = (["t"]
              + [f"x{i + 1}" for i in range(n)]
              + [f"Hx{i + 1}" for i in range(n)]
              + [f"u{j + 1}" for j in range(m)]
              + [f"b{k + 1}" for k in range(n_irr)]
              + ["sigma", "dist_steady"]
              + (["dist_output"] if out_dist is not None else [])
              + ["cum_cost"])
    lines = [",".join(header)]
    K = U.shape[0]
    for i in range(X.shape[0]):
        row = [_g17(grid[i])]
        row += [_g17(v) for v in X[i]]
        row += [_g17(v) for v in HX[:, i]]
        row += [_g17(U[i, j]) if i < K else "" for j in range(m)]
        row += [_g17(bk[k, i]) for k in range(n_irr)]
        row += [_g17(sol.entropy_production[i]), _g17(dist[i])]
        if out_dist is not None:
            row.append(_g17(out_dist[i]))
        row.append(_g17(cum[i]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_panels(outdir: Path, stem: str, model, sol):
    grid = sol.time_grid
    X, U = sol.states, sol.controls
    HX = model.gradient_batch(X.T)
    files = {}

    p = LinePlot(title=f"{stem}: states", xlabel="t", ylabel="x")
    for i in range(X.shape[1]):
        p.add_series(grid, X[:, i], label=f"x{i + 1}")
    files["states"] = outdir / f"{stem}_states.svg"
    p.save(files["states"])

    p = LinePlot(title=f"{stem}: co-energy", xlabel="t", ylabel="dH/dx")
    for i in range(HX.shape[0]):
        p.add_series(grid, HX[i], label=f"Hx{i + 1}")
    files["coenergy"] = outdir / f"{stem}_coenergy.svg"
    p.save(files["coenergy"])

    if model.n_irreversible:
        p = LinePlot(title=f"{stem}: interface brackets", xlabel="t",
                     ylabel="b")
        for k in range(model.n_irreversible):
            Jk = model.irr_structures[k]
            if callable(Jk):
                b = [float(model.entropy_vector @ (Jk(x) @ HX[:, j]))
                     for j, x in enumerate(X)]
            else:
                b = model.entropy_vector @ (Jk @ HX)
            p.add_series(grid, b, label=f"b{k + 1}")
        files["brackets"] = outdir / f"{stem}_brackets.svg"
        p.save(files["brackets"])

    p = LinePlot(title=f"{stem}: control", xlabel="t", ylabel="u")
    for j in range(U.shape[1]):
        p.add_series(grid, np.append(U[:, j], U[-1, j]), label=f"u{j + 1}")
    files["control"] = outdir / f"{stem}_control.svg"
    p.save(files["control"])
    return files


def cmd_run(args) -> int:
    cfg, source = load_config(args.config)
    spec, eq_set, kind, params = build_spec(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = cfg["name"]

    sol = solve_ocp(spec)
    report = turnpike_metrics(spec.model, sol, eq_set, output=spec.output,
                              epsilon=args.epsilon)
    e_res, s_res = balance_residuals(spec.model, sol)

    csv_path = outdir / f"{stem}_trajectory.csv"
    _write_trajectory_csv(csv_path, spec.model, sol, eq_set, spec)
    panel_files = _write_panels(outdir, stem, spec.model, sol)

    meta = sol.solver_metadata
    payload = {
        "name": stem,
        "config_source": source,
        "system": kind,
        "params": dataclasses.asdict(params),
        "horizon": {"t_f": spec.horizon.t_f, "dt": spec.horizon.dt,
                    "n_steps": spec.horizon.n_steps},
        "solver": meta["solver"],
        "objective": meta["objective"],
        "identity_residual": meta["identity_residual"],
        "balance_residuals": {"energy": e_res, "entropy": s_res},
        "turnpike": {
            "epsilon": report.epsilon,
            "fraction_near": report.fraction_near,
            "integral_sq_distance": report.integral_sq_distance,
            "central_window": report.central_window,
            "central_max_distance": report.central_max_distance,
            "central_max_velocity_inf": report.central_max_velocity_inf,
            "entropy_production_integral": report.entropy_production_integral,
            "integral_sq_output_distance": report.integral_sq_output_distance,
            "target_intersection_empty": report.target_intersection_empty,
        },
        "state_box_active": meta["state_box_active"],
        "bounding_box": meta["bounding_box"],
        "files": {"trajectory": str(csv_path),
                  **{k: str(v) for k, v in panel_files.items()}},
        "config": cfg,
    }
    json_path = outdir / f"{stem}_report.json"
    _write_json(json_path, payload)

    conv = meta["solver"]["converged"]
    print(f"{stem}: {kind}, K={spec.horizon.n_steps}, "
          f"{'converged' if conv else 'NOT converged'} "
          f"(|c|={meta['solver']['feasibility_inf']:.2e}, "
          f"pg={meta['solver']['projected_gradient_inf']:.2e})")
    print(f"  cost: physical {meta['objective']['physical']:+.6e} "
          f"(supply {meta['objective']['supply']:+.6e}, "
          f"tracking {meta['objective']['tracking']:.6e}), "
          f"tikhonov {meta['objective']['tikhonov']:.2e}")
    print(f"  supply identity residual: {meta['identity_residual']:.2e}")
    print(f"  near steady set ({args.epsilon:g}): "
          f"{100 * report.fraction_near:.1f}% of nodes")
    print(f"  wrote {json_path}, {csv_path} and "
          f"{len(panel_files)} SVG panels in {outdir}")
    return 0 if conv else 3


def cmd_sweep(args) -> int:
    cfg, source = load_config(args.config)
    spec, eq_set, kind, params = build_spec(cfg)
    try:
        horizons = [float(t) for t in args.horizons.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --horizons: {exc}") from exc
    if len(horizons) < 2:
        raise ConfigError("--horizons needs at least two values")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigError("--horizons must be strictly increasing")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = cfg["name"]

    result = horizon_sweep(spec, horizons, eq_set=eq_set,
                           warm_start=not args.cold, epsilon=args.epsilon,
                           n_threads=args.threads)

    rows = []
    plot = LinePlot(title=f"{stem}: distance to steady set", xlabel="t",
                    ylabel="dist")
    for entry in result.entries:
        meta = entry.solution.solver_metadata
        rows.append({
            "t_f": entry.t_f,
            "converged": entry.converged,
            "physical_cost": meta["objective"]["physical"],
            "integral_sq_distance": entry.report.integral_sq_distance,
            "fraction_near": entry.report.fraction_near,
            "entropy_production_integral":
                entry.report.entropy_production_integral,
        })
        plot.add_series(entry.report.time_grid, entry.report.distances,
                        label=f"t_f={entry.t_f:g}")
    svg_path = outdir / f"{stem}_sweep_distances.svg"
    plot.save(svg_path)

    ratios = result.integral_ratios
    payload = {
        "name": stem, "config_source": source, "system": kind,
        "warm_start": not args.cold,
        "entries": rows,
        "integral_ratios": ratios,
        "all_converged": result.all_converged,
        "config": cfg,
    }
    json_path = outdir / f"{stem}_sweep.json"
    _write_json(json_path, payload)

    csv_lines = ["t_f,converged,physical_cost,integral_sq_distance,"
                 "fraction_near,entropy_production_integral"]
    for r in rows:
        csv_lines.append(",".join([
            _g17(r["t_f"]), str(int(r["converged"])),
            _g17(r["physical_cost"]), _g17(r["integral_sq_distance"]),
            _g17(r["fraction_near"]),
            _g17(r["entropy_production_integral"])]))
    csv_path = outdir / f"{stem}_sweep.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    print(f"{stem}: swept t_f = {', '.join(f'{t:g}' for t in horizons)} "
          f"({'warm' if not args.cold else 'cold'} starts)")
    for r, entry in zip(rows, result.entries):
        print(f"  t_f={r['t_f']:g}: cost {r['physical_cost']:+.6e}, "
              f"int dist^2 {r['integral_sq_distance']:.4e}, "
              f"{'ok' if r['converged'] else 'NOT CONVERGED'}")
    with np.printoptions(precision=3):
        print(f"  consecutive dist^2-integral ratios: {np.asarray(ratios)}")
    print(f"  wrote {json_path}, {csv_path}, {svg_path}")
    return 0 if result.all_converged else 3


def cmd_equilibria(args) -> int:
    params = json.loads(args.params) if args.params else None
    try:
        model, p, eq_set = make_system(args.system, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(args.seed)
    rep = manifold_dimension(model, n_samples=args.samples, rng=rng)
    payload = {
        "system": args.system,
        "params": dataclasses.asdict(p),
        "state_dim": model.state_dim,
        "force_rank": rep.rank,
        "steady_set_dimension": rep.dimension,
        "regular": rep.regular,
        "samples_checked": rep.samples_checked,
        "min_rank_margin": rep.min_rank_margin,
        "set_kind": eq_set.kind,
    }
    if args.json:
        print(json.dumps(_jsonable(payload), indent=2))
    else:
        print(f"{args.system}: n={model.state_dim}, "
              f"force rank {rep.rank} over {rep.samples_checked} samples "
              f"(margin {rep.min_rank_margin:.2e})")
        print(f"  steady set: dimension {rep.dimension}, "
              f"{'regular' if rep.regular else 'NOT regular'}, "
              f"{eq_set.kind} description available")
    return 0


def cmd_list(args) -> int:
    print("systems:")
    for name, spec in sorted(BUILTIN_SYSTEMS.items()):
        p = spec.default_params()
        model = spec.factory(p)
        print(f"  {name:15s} n={model.state_dim} m={model.input_dim}  "
              f"{spec.description}")
    names = _bundled_config_names()
    print("bundled experiments:")
    for n in names or ["(none)"]:
        print(f"  {n}")
    return 0


def cmd_describe(args) -> int:
    if args.name in BUILTIN_SYSTEMS:
        spec = BUILTIN_SYSTEMS[args.name]
        p = spec.default_params()
        model = spec.factory(p)
        print(f"{args.name}: {spec.description}")
        print(f"  state_dim {model.state_dim}, input_dim {model.input_dim}, "
              f"irreversible interfaces {model.n_irreversible}")
        print(f"  default params: {dataclasses.asdict(p)}")
        print(f"  default control box: {list(spec.control_lower)} .. "
              f"{list(spec.control_upper)}")
        return 0
    cfg, source = load_config(args.name)
    print(f"# {source}")
    print(json.dumps(cfg, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="riphs",
        description="optimal supply problems for coupled reversible-"
                    "irreversible port-Hamiltonian systems")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve one experiment config")
    p.add_argument("config", help="config path or bundled experiment name")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--epsilon", type=float, default=0.1,
                   help="near-steady threshold for the report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="solve over growing horizons")
    p.add_argument("config")
    p.add_argument("--horizons", required=True,
                   help="comma-separated final times, ascending")
    p.add_argument("--cold", action="store_true",
                   help="independent solves (parallel with RIPHS_THREADS)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("equilibria", help="sample steady-set rank/dimension")
    p.add_argument("system", choices=sorted(BUILTIN_SYSTEMS))
    p.add_argument("--params", help="JSON object of parameter overrides")
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_equilibria)

    p = sub.add_parser("list", help="systems and bundled experiments")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("describe", help="system defaults or config content")
    p.add_argument("name")
    p.set_defaults(func=cmd_describe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, DomainError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":    # pragma: no cover
    sys.exit(main())
