"""Command-line front end: ``kornlab <command> [options]``.

Every command writes one JSON report ``{version, command, input_digest,
results, timing_ms}``. Reports are byte-identical for identical inputs
except for ``timing_ms``. Exit status is 0 on success, 1 for invalid input
and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .calculus import PolyField, check_identity, laplacian_identity_residual
from .elasticity import export_displacement_csv, manufactured_load, rigid_projection, solve_equilibrium
from .errors import KornLabError, NoAxisError, NumericalError, SchemaError, ValidationError
from .fem import assemble, interpolate
from .flow import export_trace_csv, integrate_flow, invariance_report
from .geometry import (BALL, BOX, CYLINDER_SECTOR, DISK, DOMAINS, AnalyticBoundary, DomainSpec, generate_mesh,
                       load_mesh, save_mesh)
from .rigid import DEFAULT_TOL, RigidMotion, classify_mixed, compute_kernel_K, detect_axis
from .spectra import ESTIMATORS

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
IDENTITY_TOL = 1e-12
SOLVE_TOL = 1e-8

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "command", "input_digest", "results", "timing_ms"],
    "additionalProperties": False,
    "properties": {
        "version": {"type": "string"},
        "command": {"type": "array", "items": {"type": "string"}},
        "input_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "results": {"type": "object"},
        "timing_ms": {"type": "number", "minimum": 0},
    },
}


# ---------------------------------------------------------------------------
# small parsers
# ---------------------------------------------------------------------------

def _vector(text: str, what: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ValidationError(f"{what}: cannot parse {text!r} as a comma-separated vector") from None
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{what}: non-finite entry in {text!r}")
    return v


def _keyvals(body: str, what: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in body.split(";"))):
        key, sep, val = part.partition("=")
        if not sep:
            raise ValidationError(f"{what}: expected key=value, got {part!r}")
        out[key.strip()] = val.strip()
    return out


def parse_field(text: str) -> RigidMotion:
    """``rot:sigma=x,y,z;b=x,y,z;omega=w`` (3D), ``rot:omega=w;b=x,y`` (2D) or ``const:x,y[,z]``."""
    kind, _, body = text.partition(":")
    if kind == "const":
        a = _vector(body, "field")
        if a.size not in (2, 3):
            raise ValidationError(f"field: constant must have 2 or 3 components, got {a.size}")
        return RigidMotion(np.zeros(1 if a.size == 2 else 3), a)
    if kind != "rot":
        raise ValidationError(f"field: unknown kind {kind!r}; use 'rot:' or 'const:'")
    kv = _keyvals(body, "field")
    unknown = set(kv) - {"sigma", "b", "omega"}
    if unknown:
        raise ValidationError(f"field: unknown keys {sorted(unknown)}")
    try:
        omega = float(kv.get("omega", "1"))
    except ValueError:
        raise ValidationError(f"field: omega {kv['omega']!r} is not a number") from None
    if "b" not in kv:
        raise ValidationError("field: 'b' is required")
    b = _vector(kv["b"], "field b")
    if b.size == 2:
        if "sigma" in kv:
            raise ValidationError("field: sigma is only meaningful in 3D")
        return RigidMotion(np.array([omega]), b)
    if b.size != 3:
        raise ValidationError(f"field: b must have 2 or 3 components, got {b.size}")
    sigma = _vector(kv.get("sigma", "0,0,1"), "field sigma")
    if sigma.size != 3 or np.linalg.norm(sigma) == 0:
        raise ValidationError("field: sigma must be a nonzero 3-vector")
    return RigidMotion.from_axis_form(omega, sigma / np.linalg.norm(sigma), b)


def parse_boundary(text: str) -> AnalyticBoundary:
    """``disk:center=..;radius=..``, ``ball:..``, ``box:lo=..;hi=..`` or ``sector:phi1=..;phi2=..;radius=..;height=..``."""
    kind, _, body = text.partition(":")
    kv = _keyvals(body, "boundary")
    kinds = {"disk": DISK, "ball": BALL, "box": BOX, "sector": CYLINDER_SECTOR}
    if kind not in kinds:
        raise ValidationError(f"boundary: unknown kind {kind!r}; expected one of {sorted(kinds)}")
    vec_keys = {"center", "lo", "hi"}
    params = {}
    for k, v in kv.items():
        if k in vec_keys:
            params[k] = _vector(v, f"boundary {k}").tolist()
        else:
            try:
                params[k] = float(v)
            except ValueError:
                raise ValidationError(f"boundary: {k}={v!r} is not a number") from None
    try:
        return AnalyticBoundary(kinds[kind], params)
    except KeyError as exc:
        raise ValidationError(f"boundary: missing parameter {exc.args[0]!r} for {kind}") from None


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """Convert numpy types to JSON values; non-finite numbers become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x + 0.0 if math.isfinite(x) else None
    return obj


def _motion_record(r: RigidMotion) -> dict:
    return {"S_entries": r.skew, "a": r.a}


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_mesh(path: str):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read mesh file {path!r}: {exc.strerror}") from None
    try:
        return load_mesh(raw.decode("utf-8")), raw
    except UnicodeDecodeError:
        raise SchemaError(f"mesh file {path!r} is not UTF-8 text") from None


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    return "" if x is None or not math.isfinite(x) else format(float(x), ".17g")


# ---------------------------------------------------------------------------
# commands; each returns (results, digest_bytes, exit_code)
# ---------------------------------------------------------------------------

def cmd_mesh_gen(args):
    spec = DomainSpec(args.domain, args.n, args.labels, phi1=args.phi1, phi2=args.phi2,
                      radius=args.radius, height=args.height)
    mesh = generate_mesh(spec)
    text = save_mesh(mesh)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    results = {"domain": args.domain, "n": args.n, "labels": args.labels, "dim": mesh.dim,
               "vertices": len(mesh.vertices), "cells": len(mesh.cells),
               "boundary_facets": len(mesh.boundary_facets), "volume": mesh.volume}
    return results, text.encode(), EXIT_OK


def cmd_constants(args):
    est = ESTIMATORS[args.which]
    records, digests, rows = [], [], []
    for path in args.mesh:
        mesh, raw = _read_mesh(path)
        digests.append(raw)
        kwargs = {"method": args.method, "seed": args.seed}
        if args.which in ("korn1", "poincare"):
            kwargs["tol"] = args.tol
        res = est(mesh, **kwargs)
        rec = {"mesh": path, "vertices": len(mesh.vertices), "lambda": res.lam, "constant": res.constant,
               "residual": res.residual, "iterations": res.iterations, "details": res.details}
        records.append(rec)
        rows.append([path, len(mesh.vertices), args.which, _num(res.lam), _num(res.constant), _num(res.residual)])
    if args.csv:
        _write_csv(args.csv, ["mesh", "vertices", "which", "lambda", "constant", "residual"], rows)
    return {"which": args.which, "runs": records}, b"".join(digests), EXIT_OK


def _planar_center(r: RigidMotion) -> Optional[np.ndarray]:
    if not np.any(r.skew):
        return None
    return -np.linalg.solve(r.S, r.a)


def cmd_kernel(args):
    mesh, raw = _read_mesh(args.mesh)
    rep = compute_kernel_K(mesh, args.tol)
    results = {
        "kernel_dim": rep.dim,
        "motion_dim": rep.motion_dim,
        "basis": [_motion_record(r) for r in rep.basis],
        "gradient_basis": [np.asarray(T) for T in rep.gradient_basis],
        "singular_values": rep.singular_values,
        "tolerance": rep.tolerance,
        "constant_kernel": rep.constants,
        "constant_kernel_dim": len(rep.constants),
        "axes": [],
    }
    rows = []
    if rep.dim >= 1:
        rotations = [r for r in rep.basis if not r.is_constant]
        for idx, r in enumerate(rotations):
            entry = {"motion": idx}
            if mesh.dim == 2:
                entry["center"] = _planar_center(r)
            else:
                try:
                    ax = detect_axis(r)
                except NoAxisError:
                    continue
                cls = classify_mixed(mesh, r)
                entry.update(direction=ax.direction, point=ax.point, valid=ax.valid,
                             classification={"passed": cls.passed, "failed_facets": [v.facet for v in cls.failed()],
                                             "max_residual": max((v.residual for v in cls.facets), default=0.0)})
                rows += [[idx, v.facet, v.label, int(v.passed), _num(v.residual)] for v in cls.facets]
            results["axes"].append(entry)
    if args.csv:
        _write_csv(args.csv, ["motion", "facet", "label", "passed", "residual"], rows)
    return results, raw, EXIT_OK


def cmd_flow(args):
    r = parse_field(args.field)
    p = _vector(args.start, "start")
    if p.size != r.dim:
        raise ValidationError(f"start point has {p.size} coordinates but the field is {r.dim}D")
    boundary = parse_boundary(args.boundary) if args.boundary else None
    trace = integrate_flow(r, p, args.T, args.dt)
    results = {"endpoint": trace.endpoint, "steps": len(trace.times) - 1, "closure_error": trace.closure_error}
    code = EXIT_OK
    if boundary is not None:
        inv = invariance_report(trace, boundary, args.tol)
        results.update(max_deviation=inv.max_deviation, time_of_max=inv.time_of_max, tol=inv.tol, passed=inv.passed)
    if args.csv:
        Path(args.csv).write_text(export_trace_csv(trace))
    echo = json.dumps([args.field, args.start, args.T, args.dt, args.boundary]).encode()
    return results, echo, code


def cmd_identity(args):
    if args.dim not in (2, 3):
        raise ValidationError(f"dimension must be 2 or 3, got {args.dim}")
    if args.trials < 1:
        raise ValidationError("trials must be positive")
    rng = np.random.default_rng(args.seed)
    worst = lap = 0.0
    for _ in range(args.trials):
        f = PolyField.random(args.dim, args.degree, rng)
        worst = max(worst, check_identity(f))
        lap = max(lap, laplacian_identity_residual(f))
    passed = worst <= IDENTITY_TOL and lap <= IDENTITY_TOL
    results = {"dim": args.dim, "degree": args.degree, "trials": args.trials, "seed": args.seed,
               "max_residual": worst, "laplacian_max_residual": lap, "tol": IDENTITY_TOL, "passed": passed}
    echo = json.dumps([args.dim, args.degree, args.trials, args.seed]).encode()
    return results, echo, EXIT_OK if passed else EXIT_NUMERICAL


def _smooth_field(seed: int):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, 3, 3))

    def w(x):
        N = x.shape[-1]
        return np.sin(x @ A[:N, :N] + B[0, :N]) + (x @ B[:N, :N]) ** 2 / 4

    return w


def cmd_solve(args):
    mesh, raw = _read_mesh(args.mesh)
    forms = assemble(mesh)
    kind, _, body = args.load.partition(":")
    n = mesh.dim * len(mesh.vertices)
    target = None
    if kind in ("const", "rot"):
        r = parse_field(args.load)
        if r.dim != mesh.dim:
            raise ValidationError(f"load field is {r.dim}D but the mesh is {mesh.dim}D")
        f = r(mesh.vertices).reshape(-1)
    elif kind in ("manufactured", "random"):
        kv = _keyvals(body, "load")
        try:
            seed = int(kv.get("seed", "0"))
        except ValueError:
            raise ValidationError(f"load: seed {kv['seed']!r} is not an integer") from None
        if kind == "random":
            f = np.random.default_rng(seed).standard_normal(n)
        else:
            w = interpolate(mesh, _smooth_field(seed))
            target = w - rigid_projection(mesh, w, forms)(mesh.vertices).reshape(-1)
            f = manufactured_load(mesh, target, forms)
    else:
        raise ValidationError(f"load: unknown kind {kind!r}; use const, rot, manufactured or random")
    sol = solve_equilibrium(mesh, f, forms=forms)
    results = {"energy": sol.energy, "residual": sol.residual, "removed_rigid": _motion_record(sol.removed_rigid),
               "max_displacement": float(np.max(np.abs(sol.displacement))), "tol": SOLVE_TOL}
    if target is not None:
        e = target - sol.displacement
        results["recovery_error"] = math.sqrt(max(e @ forms.A_sym @ e, 0.0) / (target @ forms.A_sym @ target))
    if args.export:
        Path(args.export).write_text(export_displacement_csv(mesh, sol))
    code = EXIT_OK if sol.residual <= SOLVE_TOL else EXIT_NUMERICAL
    return results, raw + args.load.encode(), code


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kornlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"kornlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = msub.add_parser("gen", help="generate a catalog mesh")
    gen.add_argument("--domain", required=True, choices=DOMAINS)
    gen.add_argument("--n", type=int, default=1)
    gen.add_argument("--labels", default="all-t", choices=["all-t", "all-n", "top-bottom-t", "sides-t"])
    gen.add_argument("--phi1", type=float, default=-math.pi / 2)
    gen.add_argument("--phi2", type=float, default=math.pi / 2)
    gen.add_argument("--radius", type=float, default=1.0)
    gen.add_argument("--height", type=float, default=1.0)
    gen.add_argument("-o", "--output", help="mesh file (stdout if omitted)")
    gen.add_argument("--report", help="report file (not written if omitted)")
    gen.set_defaults(func=cmd_mesh_gen)

    c = sub.add_parser("constants", help="estimate an inequality constant")
    c.add_argument("--mesh", required=True, action="append", help="mesh file; repeat for a refinement table")
    c.add_argument("--which", required=True, choices=sorted(ESTIMATORS))
    c.add_argument("--tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--method", choices=["dense", "inverse"], default="dense")
    c.add_argument("--csv", help="write one row per mesh")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_constants)

    k = sub.add_parser("kernel", help="rigid-motion kernel, axes and mixed-boundary classification")
    k.add_argument("--mesh", required=True)
    k.add_argument("--tol", type=float, default=DEFAULT_TOL)
    k.add_argument("--csv", help="write one row per facet verdict")
    k.add_argument("-o", "--output")
    k.set_defaults(func=cmd_kernel)

    f = sub.add_parser("flow", help="integrate a rigid-motion flow")
    f.add_argument("--field", required=True)
    f.add_argument("--start", required=True)
    f.add_argument("--T", type=float, required=True)
    f.add_argument("--dt", type=float, required=True)
    f.add_argument("--boundary")
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--csv", help="write the sampled trajectory")
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_flow)

    i = sub.add_parser("identity", help="check the second-derivative identity on random polynomials")
    i.add_argument("--dim", type=int, required=True)
    i.add_argument("--degree", type=int, required=True)
    i.add_argument("--trials", type=int, default=10)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("-o", "--output")
    i.set_defaults(func=cmd_identity)

    s = sub.add_parser("solve", help="solve the elastic problem on the rigid-motion complement")
    s.add_argument("--mesh", required=True)
    s.add_argument("--load", required=True, help="const:.., rot:.., manufactured:seed=k or random:seed=k")
    s.add_argument("--export", help="write the displacement table")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)
    return ap


def make_report(command: Sequence[str], digest_bytes: bytes, results: dict, timing_ms: float) -> dict:
    report = _clean({"version": __version__, "command": list(command), "input_digest": _digest(digest_bytes),
                     "results": results, "timing_ms": round(timing_ms, 3)})
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; usage is invalid input
        return EXIT_INVALID if exc.code else EXIT_OK
    t0 = time.perf_counter()
    try:
        results, digest_bytes, code = args.func(args)
    except ValidationError as exc:
        print(f"kornlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"kornlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KornLabError as exc:
        print(f"kornlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = make_report(argv, digest_bytes, results, 1000.0 * (time.perf_counter() - t0))
    text = dump_report(report)
    out = getattr(args, "report", None) if args.command == "mesh" else args.output
    if out:
        Path(out).write_text(text)
    elif args.command != "mesh":
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
