"""Batch entry point: ``parasys <command> --config <path> [--out <dir>] [--seed <n>]``.

Exit codes: 0 success, 2 validation error (nothing written), 3 solver failure
(``error.json`` with the diagnostic is written).  Every report is JSON with
sorted keys; trajectories go to CSV.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile

import numpy as np
import pydantic

from . import chemotaxis, extrapolation, geometry, parabolic, quasilinear, tensors
from .elliptic import FESpace, assemble, garding_constant
from .errors import ParasysError, SolverError, ValidationError
from .schema import PARAMS, ScenarioConfig

COMMANDS = tuple(PARAMS)


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


# --- builders ---------------------------------------------------------------


def build_domain(spec):
    if isinstance(spec, str):
        return {"unit_square": geometry.unit_square, "l_shape": geometry.l_shape,
                "slit_square": geometry.slit_square}[spec]()
    return geometry.Domain(tuple(map(tuple, spec.polygon)),
                           tuple(spec.segment_names) if spec.segment_names else None,
                           tuple(tuple(map(tuple, s)) for s in spec.slits),
                           tuple(spec.slit_names) if spec.slit_names else None)


def build_mesh(spec):
    return geometry.build_mesh(build_domain(spec.domain), spec.h, spec.dirichlet)


def build_family(spec, T, m, rng):
    if spec.mode == "constant":
        if spec.tensor is None:
            raise ValidationError("constant family needs a tensor", reason="family")
        return tensors.TensorFamily.constant(tensors.CoefficientTensor.from_dict(spec.tensor), T)
    if spec.mode == "tabulated":
        if not spec.table:
            raise ValidationError("tabulated family needs a table", reason="family")
        return tensors.TensorFamily.from_dict({"mode": "tabulated", "table": spec.table})
    return tensors.random_tabulated_family(rng, spec.nodes, T, m, spec.gamma, spec.M)


def build_forcing(spec, space, grid, rng):
    if spec.kind == "zero":
        return None
    if spec.kind == "constant":
        load = space.load_vector(lambda x: np.full((len(x), space.m), spec.value))
        return np.tile(load, (grid.N, 1))
    return (space.mass @ rng.standard_normal((space.ndof, grid.N))).T


def build_initial(spec, space):
    X = space.mesh.vertices
    if spec.kind == "zero":
        vals = np.zeros(len(X))
    elif spec.kind == "constant":
        vals = np.full(len(X), spec.value)
    elif spec.kind == "sine":
        vals = spec.value * np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1])
    else:
        vals = spec.value * tensors.bump(X, (0.5, 0.5), 0.3)
    return space.restrict(np.tile(vals, space.m))


# --- commands -------------------------------------------------------------------


def cmd_analyze_tensor(p, rng):
    T = tensors.CoefficientTensor.from_dict(p.tensor)
    report = tensors.analyze(T, eta_grid_size=p.eta_grid_size,
                             dirichlet_everywhere=p.dirichlet_everywhere)
    if p.mesh is not None:
        mesh = build_mesh(p.mesh)
        if mesh.num_components != T.m:
            mesh = mesh.with_dirichlet([mesh.dirichlet_parts[0]] * T.m)
        report.gamma_garding = garding_constant(assemble(FESpace(mesh), T), p.lam)
        report.lambda_used = p.lam
        report.flags["garding_ok"] = report.gamma_garding > 0
    return {"report.json": report.to_dict()}


def cmd_sneiberg(p, rng):
    out = {}
    if p.theta is not None or p.beta is not None or p.gamma is not None:
        if None in (p.theta, p.beta, p.gamma):
            raise ValidationError("sneiberg needs theta, beta and gamma together")
        w = extrapolation.sneiberg_window(p.theta, p.beta, p.gamma)
        out.update({"radius": w.radius, "inverse_bound": w.inverse_bound,
                    "window": list(w.window), "theta_center": w.theta_center})
    if p.intervals is not None:
        keys = {"lambda", "gamma", "M", "Lambda", "delta"}
        extra = set(p.intervals) - keys
        if extra:
            raise ValidationError(f"unknown interval keys {sorted(extra)}")
        iv = p.intervals
        est = extrapolation.estimate_intervals(iv.get("lambda", 0.0), iv["gamma"], iv["M"],
                                               iv["Lambda"], iv.get("delta"))
        out["intervals"] = est.to_dict()
    if not out:
        raise ValidationError("sneiberg needs (theta, beta, gamma) or intervals")
    return {"report.json": out}


def cmd_lions(p, rng):
    mesh = build_mesh(p.mesh)
    space = FESpace(mesh)
    grid = parabolic.TimeGrid(p.grid.T, p.grid.N)
    fam = build_family(p.family, grid.T, mesh.num_components, rng)
    f = build_forcing(p.forcing, space, grid, rng)
    rep = parabolic.lions_verify(fam, p.Lambda, f, space, grid, p.lam, p.gamma, p.M, p.tol)
    return {"report.json": rep.to_dict()}


def cmd_solve_parabolic(p, rng):
    mesh = build_mesh(p.mesh)
    space = FESpace(mesh)
    grid = parabolic.TimeGrid(p.grid.T, p.grid.N)
    fam = build_family(p.family, grid.T, mesh.num_components, rng)
    f = build_forcing(p.forcing, space, grid, rng)
    u = parabolic.step_solve(fam, p.Lambda, f, build_initial(p.u0, space), grid, space)
    summary = json.loads(parabolic.summary_json(u, space))
    return {"report.json": summary, "trajectory.csv": u.to_csv()}


def cmd_solve_quasilinear(p, rng):
    mesh = build_mesh(p.mesh)
    space = FESpace(mesh)
    grid = parabolic.TimeGrid(p.grid.T, p.grid.N)
    A_map = quasilinear.make_map("coefficient", p.coefficient_map.name, p.coefficient_map.params)
    Phi = quasilinear.make_map("rhs", p.rhs.name, p.rhs.params)
    u0 = build_initial(p.u0, space)
    if p.mode == "picard":
        cfg = None
        if p.cutoff_eps is not None:
            A0 = A_map.evaluate(u0[None], space, grid.nodes[:1])[0]
            cfg = quasilinear.CutoffConfig(p.cutoff_eps, A0)
        u, info = quasilinear.picard_solve(A_map, Phi, u0, (0.0, grid.T), space, grid, cfg=cfg,
                                           tol=p.tol, max_iter=p.max_iter, return_info=True)
        report = {"mode": "picard", "picard": info.to_dict(),
                  "maxreg_norm": parabolic.maxreg_norm(u, 2, 2, space),
                  "interval_solved": [0.0, grid.T], "global": True}
    else:
        c = p.continuation
        rep = quasilinear.continuation_solve(A_map, Phi, u0, space, grid, c.lam, c.gamma, c.M,
                                             c.Lambda, c.C_Phi, c.s, C_E=c.C_E, tol=p.tol,
                                             max_iter=p.max_iter)
        u = rep.trajectory
        report = {"mode": "continuation", **rep.to_dict()}
    return {"report.json": report, "trajectory.csv": u.to_csv()}


def cmd_chemotaxis(p, rng):
    params = chemotaxis.ChemotaxisParams.from_dict(p.params)
    mesh = build_mesh(p.mesh)
    grid = parabolic.TimeGrid(p.grid.T, p.grid.N)
    res = chemotaxis.simulate(params, p.mode, mesh, grid, p.tol, p.max_iter)
    out = {"summary.json": res.summary(), "conditions.json": res.report.to_dict()}
    for k, tr in res.fields.items():
        out[f"{k}.csv"] = tr.to_csv()
    return out


def cmd_geometry_check(p, rng):
    mesh = build_mesh(p.mesh)
    rep = geometry.check_geometry(mesh, p.radii, p.samples)
    return {"report.json": rep.to_dict(), "mesh.json": json.loads(mesh.to_json())}


HANDLERS = {
    "analyze-tensor": cmd_analyze_tensor,
    "sneiberg": cmd_sneiberg,
    "lions": cmd_lions,
    "solve-parabolic": cmd_solve_parabolic,
    "solve-quasilinear": cmd_solve_quasilinear,
    "chemotaxis": cmd_chemotaxis,
    "geometry-check": cmd_geometry_check,
}


# --- driver ---------------------------------------------------------------------


def load_config(path, command, seed=None, out=None):
    """Parse and validate a scenario file; raises ValidationError."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}", reason="config_unreadable") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}", reason="config_syntax") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object", reason="config_schema")
    raw.setdefault("command", command)
    try:
        cfg = ScenarioConfig.model_validate(raw)
        if cfg.command != command:
            raise ValidationError(f"config is for {cfg.command!r}, not {command!r}",
                                  reason="command_mismatch")
        params = PARAMS[command].model_validate(cfg.params)
    except pydantic.ValidationError as exc:
        raise ValidationError(f"config schema violation: {exc.errors(include_url=False)}",
                              reason="config_schema") from exc
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = out
    return cfg, params


def _write_atomic(outdir, files):
    """Write all artifacts into a temp directory, then move them into place."""
    os.makedirs(outdir, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".parasys-", dir=outdir)
    try:
        for name, content in files.items():
            text = content if isinstance(content, str) else dumps(content)
            with open(os.path.join(tmp, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for name in files:
            os.replace(os.path.join(tmp, name), os.path.join(outdir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def run(command, config_path, out=None, seed=None, stream=sys.stdout):
    """Run one command; returns the exit code."""
    try:
        cfg, params = load_config(config_path, command, seed, out)
    except ValidationError as exc:
        stream.write(dumps({"status": "error", **exc.to_dict()}))
        return 2
    outdir = cfg.output_dir or "."
    rng = np.random.default_rng(cfg.seed)
    try:
        files = HANDLERS[command](params, rng)
    except ValidationError as exc:
        stream.write(dumps({"status": "error", **exc.to_dict()}))
        return 2
    except (SolverError, ParasysError) as exc:
        err = {"status": "error", "command": command, "seed": cfg.seed, **exc.to_dict()}
        _write_atomic(outdir, {"error.json": err})
        stream.write(dumps(err))
        return 3
    for name in ("report.json", "summary.json"):
        if name in files:
            files[name] = {**files[name], "command": command, "seed": cfg.seed}
    _write_atomic(outdir, files)
    main_report = files.get("report.json") or files.get("summary.json")
    stream.write(dumps({"status": "ok", "command": command, "output_dir": outdir,
                        "artifacts": sorted(files), "report": main_report}))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="parasys", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario JSON file")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="seed for randomized runs (overrides seed)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
