"""Command-line front end.

Subcommands::

    rmdpg run --config CFG.json [--out-dir DIR] [--threads N]
    rmdpg verify [--seed S] [--inject-sign-flip]
    rmdpg plotdata RESULTS.csv [--slope -0.5] [--output FILE]
    rmdpg mesh-info (--config CFG.json | --mesh FILE) [--refine L] [--write FILE]

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
The thread count for BLAS-backed kernels comes from ``--threads`` or the
``RMDPG_THREADS`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("rmdpg")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
PROBLEMS = ("poly", "kirchhoff", "lshape")
RATE_COLUMNS = ("err_u_H1", "err_psi_L2", "err_M_L2", "eta")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- config
@dataclass
class RunConfig:
    """Validated contents of a JSON run configuration (see ``docs/config.md``)."""

    problem: str
    t: float
    n_refinements: int = 0
    adaptive: bool = False
    theta: float = 0.5
    n_terms: int = 100
    initial_n: int | None = None
    quadrature_degrees: dict = field(default_factory=lambda: {"dpg": 6, "error": 14})
    solver: dict = field(default_factory=lambda: {"method": "direct", "tol": 1e-10})
    material: dict = field(default_factory=lambda: {"mode": "Identity"})
    bc: dict | None = None
    output: dict = field(default_factory=lambda: {"csv": "results.csv"})
    seed: int = 0
    domain_scale: float = 1.0

    @property
    def name(self) -> str:
        return Path(self.output.get("csv", "results.csv")).stem


_ALLOWED = {
    "quadrature_degrees": {"dpg", "error"},
    "solver": {"method", "tol"},
    "material": {"mode", "E", "nu"},
    "output": {"csv", "estimator_dump", "solution"},
}


def _require(cond, msg):
    if not cond:
        raise UsageError(msg)


def parse_run_config(data: dict) -> RunConfig:
    """Validate a decoded JSON object; unknown keys are rejected."""
    _require(isinstance(data, dict), "config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    _require(not unknown, f"unknown config keys: {', '.join(unknown)}")
    for key in ("problem", "t"):
        _require(key in data, f"missing required key {key!r}")
    cfg = RunConfig(**{k: data[k] for k in data if k not in _ALLOWED})
    for key, allowed in _ALLOWED.items():
        if key in data:
            _require(isinstance(data[key], dict), f"{key!r} must be an object")
            bad = sorted(set(data[key]) - allowed)
            _require(not bad, f"unknown keys in {key!r}: {', '.join(bad)}")
            merged = dict(getattr(cfg, key))
            merged.update(data[key])
            setattr(cfg, key, merged)
    _require(cfg.problem in PROBLEMS, f"problem must be one of {PROBLEMS}")
    _require(isinstance(cfg.t, (int, float)) and 0 < cfg.t <= 1, "t must lie in (0, 1]")
    _require(isinstance(cfg.n_refinements, int) and cfg.n_refinements >= 0,
             "n_refinements must be a non-negative integer")
    _require(isinstance(cfg.adaptive, bool), "adaptive must be true or false")
    _require(isinstance(cfg.theta, (int, float)) and 0 < cfg.theta <= 1, "theta must lie in (0, 1]")
    _require(isinstance(cfg.n_terms, int) and cfg.n_terms >= 1, "n_terms must be a positive integer")
    _require(cfg.initial_n is None or (isinstance(cfg.initial_n, int) and cfg.initial_n >= 1),
             "initial_n must be a positive integer")
    _require(cfg.solver["method"] in ("direct", "cg"), "solver.method must be 'direct' or 'cg'")
    _require(float(cfg.solver["tol"]) > 0, "solver.tol must be positive")
    qd = cfg.quadrature_degrees
    _require(all(isinstance(qd[k], int) and 1 <= qd[k] <= 20 for k in qd),
             "quadrature degrees must be integers in 1..20")
    _require(qd["dpg"] >= 6, "quadrature_degrees.dpg below 6 does not integrate the DPG forms exactly")
    _require(cfg.domain_scale == 1.0, "domain_scale is reserved and must be 1")
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from None
    return parse_run_config(data)


def build_problem(cfg: RunConfig):
    from .mesh import BCKind
    from .model import MaterialTensor, ModelConfig, Problem, example3_lshape, problem_kirchhoff, problem_poly

    mat = cfg.material
    try:
        material = (MaterialTensor.identity() if mat["mode"] == "Identity"
                    else MaterialTensor.plane_stress(float(mat["E"]), float(mat["nu"])))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid material: {exc}") from None
    if cfg.problem == "poly":
        pb = problem_poly(cfg.t, cfg.initial_n or 4)
    elif cfg.problem == "kirchhoff":
        pb = problem_kirchhoff(cfg.t, cfg.n_terms, cfg.initial_n or 4)
    else:
        pb = example3_lshape(cfg.t, cfg.initial_n or 1)
    bc = dict(pb.config.bc)
    mesh = pb.mesh
    if cfg.bc:
        unknown = sorted(set(cfg.bc) - set(bc))
        _require(not unknown, f"unknown boundary segments: {', '.join(unknown)}")
        try:
            bc.update({k: BCKind.parse(v) for k, v in cfg.bc.items()})
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        mesh = mesh.with_bc(bc)
    try:
        config = ModelConfig(cfg.t, bc, pb.config.load, material, cfg.domain_scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    exact = pb.exact
    if exact is not None and (cfg.bc or material.mode != "Identity"):
        exact = None  # the manufactured solutions assume their own data
    return Problem(pb.name, mesh, config, exact)


# ---------------------------------------------------------------- threading
def thread_limit(threads):
    """Context manager limiting BLAS threads (no-op when ``threads`` is None)."""
    from contextlib import nullcontext

    if threads is None:
        env = os.environ.get("RMDPG_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise UsageError("thread count must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


# ----------------------------------------------------------------- commands
def rate_table(records) -> list[str]:
    from .stages import convergence_rate

    if len(records) < 2:
        return []
    n = [r.n_triangles for r in records]
    rows = []
    for col in RATE_COLUMNS:
        vals = [r.errors.get(col) if col.startswith("err") else r.eta[col] for r in records]
        if any(v is None or not np.isfinite(v) or v <= 0 for v in vals[-3:]):
            continue
        rows.append(f"rate {col:12s} {convergence_rate(n, vals):+.3f}")
    return rows


def cmd_run(args) -> int:
    from .stages import records_to_csv, run_pipeline, timings_to_csv

    cfg = load_run_config(args.config)
    problem = build_problem(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / cfg.output.get("csv", "results.csv")

    def progress(rec):
        log.info("level %d: #T=%d dofs=%d eta=%.3e", rec.level, rec.n_triangles, rec.dofs, rec.eta["eta"])

    with thread_limit(args.threads):
        records, final = run_pipeline(
            problem, cfg.n_refinements, adaptive=cfg.adaptive, theta=cfg.theta,
            solver=cfg.solver["method"], tol=float(cfg.solver["tol"]),
            degree=cfg.quadrature_degrees["error"], dpg_degree=cfg.quadrature_degrees["dpg"],
            callback=progress,
        )
    csv_path.write_text(records_to_csv(records))
    csv_path.with_name(csv_path.stem + ".timings.csv").write_text(timings_to_csv(records))
    dump = cfg.output.get("estimator_dump")
    if dump:
        (out_dir / dump).write_text(final.estimates.dump())
    if cfg.output.get("solution"):
        save_solution(final, out_dir / cfg.output["solution"])
    print(f"wrote {csv_path}")
    for line in rate_table(records):
        print(line)
    return EXIT_OK


def save_solution(sol, path) -> None:
    """Write the final mesh and all stage unknowns to a compressed ``.npz`` archive."""
    fields = sol.stage2.fields
    np.savez_compressed(
        path, vertices=sol.mesh.vertices, triangles=sol.mesh.triangles,
        r_h=sol.r_h, u_h=sol.u_h, u_frak_h=sol.u_frak_h,
        psi_h=fields["psi"], eta_h=fields["eta"], M_h=fields["M"], p_h=fields["p"],
        eta1=sol.estimates.eta1, eta2=sol.estimates.eta2, eta3=sol.estimates.eta3,
    )


def cmd_verify(args) -> int:
    from . import dpg_core
    from .verify import run_checks

    with thread_limit(args.threads):
        if args.inject_sign_flip:
            with dpg_core.inject_trace_sign_flip():
                results = run_checks(seed=args.seed)
        else:
            results = run_checks(seed=args.seed)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_NUMERIC


def read_results_csv(path) -> tuple[list[str], list[list[float]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or "n_triangles" not in rows[0]:
        raise UsageError(f"{path} is not a results CSV")
    header = rows[0]
    try:
        data = [[float(x) for x in r] for r in rows[1:] if r]
    except ValueError:
        raise UsageError(f"{path} contains non-numeric entries") from None
    if any(len(r) != len(header) for r in data):
        raise UsageError(f"{path} has rows of inconsistent length")
    return header, data


def plot_series(header, data, slope: float = -0.5) -> str:
    """Columnar series for log-log plots plus guide lines through the last point.

    Blocks are separated by two blank lines so gnuplot can address them with
    ``index``; each block starts with a comment naming the series.
    """
    n_col = header.index("n_triangles")
    blocks = []
    for col in header:
        if not (col.startswith("err_") or col.startswith("eta")):
            continue
        j = header.index(col)
        pts = [(r[n_col], r[j]) for r in data if np.isfinite(r[j]) and r[j] > 0]
        if not pts:
            continue
        lines = [f"# series {col}"] + [f"{n:.17g} {v:.17g}" for n, v in pts]
        blocks.append("\n".join(lines))
        n_last, v_last = pts[-1]
        guide = [f"# guide {col} slope {slope:g}"]
        guide += [f"{n:.17g} {v_last * (n / n_last) ** slope:.17g}" for n, _ in pts]
        blocks.append("\n".join(guide))
    return "\n\n\n".join(blocks) + "\n"


def cmd_plotdata(args) -> int:
    header, data = read_results_csv(args.csv)
    text = plot_series(header, data, args.slope)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    from .mesh import read_mesh, refine_uniform, write_mesh

    if bool(args.config) == bool(args.mesh):
        raise UsageError("give exactly one of --config or --mesh")
    if args.config:
        mesh = build_problem(load_run_config(args.config)).mesh
    else:
        try:
            mesh = read_mesh(args.mesh)
        except OSError as exc:
            raise UsageError(f"cannot read mesh {args.mesh}: {exc.strerror}") from None
    if args.refine:
        mesh = refine_uniform(mesh, args.refine)
    mesh.check()
    counts = {}
    for b in mesh.edge_bc:
        if b is not None:
            counts[b.value] = counts.get(b.value, 0) + 1
    print(f"vertices {mesh.n_vertices}")
    print(f"triangles {mesh.n_triangles}")
    print(f"edges {mesh.n_edges}")
    print(f"boundary_edges {int(mesh.is_boundary_edge.sum())}")
    print(f"area {mesh.areas.sum():.17g}")
    print(f"h_max {mesh.diameters.max():.17g}")
    print(f"min_angle_deg {np.degrees(mesh.min_angles().min()):.17g}")
    for kind in sorted(counts):
        print(f"bc {kind} {counts[kind]}")
    if args.write:
        write_mesh(mesh, args.write)
        print(f"wrote {args.write}")
    return EXIT_OK


# --------------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmdpg", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a convergence experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="accepted for symmetry; runs are deterministic")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--inject-sign-flip", action="store_true",
                   help="debug hook: corrupt one trace term to exercise the checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="emit log-log series with guide lines from a results CSV")
    p.add_argument("csv")
    p.add_argument("--slope", type=float, default=-0.5)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("mesh-info", help="summarize (and optionally write) a mesh")
    p.add_argument("--config", default=None)
    p.add_argument("--mesh", default=None)
    p.add_argument("--refine", type=int, default=0)
    p.add_argument("--write", default=None)
    p.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
