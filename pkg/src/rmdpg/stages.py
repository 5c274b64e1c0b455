"""The three-stage solver: Poisson for ``r``, DPG for the plate unknowns, Poisson for ``u``.

Stage 1 solves ``(grad r_h, grad dr) = (f, dr)`` and stage 3 solves
``(grad u_h, grad du) = t^2 (f, du) + (psi_h, grad du)``, both with
continuous P1 elements vanishing on the clamped-deflection boundary part.
Stage 2 is the DPG scheme of :mod:`rmdpg.dpg_core` with load ``-(grad r_h, chi)``.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dpg_core
from .estimator import EstimateField, combine, doerfler_mark, poisson_estimator
from .mesh import Mesh, refine_nvb, refine_uniform
from .model import ExactSolution, ModelConfig, Problem
from .quadrature import map_to_mesh, rule_for_degree

ERROR_DEGREE = 14
CSV_COLUMNS = ("level", "n_triangles", "dofs", "t", "err_u_H1", "err_psi_L2", "err_M_L2",
               "eta1", "eta2", "eta3", "eta")
TIMING_COLUMNS = ("level", "stage1_s", "stage2_s", "stage3_s", "estimate_s")


class ConfigError(ValueError):
    """Problem setup that cannot produce a well-posed discrete system."""


# --------------------------------------------------------------- P1 Poisson
def p1_gradients(mesh: Mesh) -> np.ndarray:
    """(M, 3, 2) physical gradients of the barycentric functions."""
    Jinv_T = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.einsum("mab,vb->mva", Jinv_T, ref)


def p1_stiffness(mesh: Mesh) -> sp.csr_matrix:
    G = p1_gradients(mesh)
    K = mesh.areas[:, None, None] * np.einsum("mva,mwa->mvw", G, G)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def p1_load(mesh: Mesh, f, degree: int = ERROR_DEGREE) -> np.ndarray:
    """``(f, lambda_i)`` for every vertex basis function."""
    const = getattr(f, "constant_value", None)
    if const is not None:
        loc = np.repeat((const * mesh.areas / 3.0)[:, None], 3, axis=1)
    else:
        rule = rule_for_degree(degree)
        pts, w = map_to_mesh(rule, mesh)
        fv = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
        loc = np.einsum("mq,mq,qv->mv", w, fv, rule.barycentric)
    return np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_vertices)


def clamped_vertices(mesh: Mesh) -> np.ndarray:
    """Vertices on the clamped-deflection boundary part."""
    edges = np.flatnonzero([b is not None and b.clamps_deflection for b in mesh.edge_bc])
    return mesh.vertices_of_edges(edges)


def solve_p1_dirichlet(mesh: Mesh, rhs: np.ndarray, fixed: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve the P1 stiffness system with homogeneous values on ``fixed`` vertices."""
    if fixed.size == 0:
        raise ConfigError("Poisson stage needs a non-empty clamped-deflection boundary")
    A = p1_stiffness(mesh)
    free = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    x = np.zeros(mesh.n_vertices)
    if free.size:
        Aff = A[free][:, free].tocsc()
        x[free] = spla.spsolve(Aff, rhs[free], permc_spec="MMD_AT_PLUS_A")
        res = np.linalg.norm(Aff @ x[free] - rhs[free])
        scale = np.linalg.norm(rhs[free])
        return x, float(res / scale) if scale > 0 else float(res)
    return x, 0.0


def solve_stage1(mesh: Mesh, config: ModelConfig, degree: int = ERROR_DEGREE) -> np.ndarray:
    r, _ = solve_p1_dirichlet(mesh, p1_load(mesh, config.load, degree), clamped_vertices(mesh))
    return r


def stage3_rhs(mesh: Mesh, config: ModelConfig, psi_h: np.ndarray, degree: int = ERROR_DEGREE):
    G = p1_gradients(mesh)
    loc = mesh.areas[:, None] * np.einsum("mva,ma->mv", G, psi_h)
    rhs = np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_vertices)
    return rhs + config.t**2 * p1_load(mesh, config.load, degree)


def solve_stage3(mesh: Mesh, config: ModelConfig, psi_h: np.ndarray,
                 degree: int = ERROR_DEGREE) -> np.ndarray:
    u, _ = solve_p1_dirichlet(mesh, stage3_rhs(mesh, config, psi_h, degree), clamped_vertices(mesh))
    return u


# ------------------------------------------------------------------ stage 2
@dataclass
class Stage2Result:
    u_full: np.ndarray
    layout: dpg_core.DofLayout
    kernels: dpg_core.ElementKernels
    info: dpg_core.SolveInfo

    @property
    def fields(self) -> dict:
        return self.layout.field_values(self.u_full)

    @property
    def traces(self) -> dict:
        return self.layout.trace_values(self.u_full)


def solve_stage2(mesh: Mesh, config: ModelConfig, r_h: np.ndarray, *, k: int = 3,
                 solver: str = "direct", tol: float = 1e-10, condense: bool = True,
                 dpg_degree: int | None = None) -> Stage2Result:
    """Solve the DPG normal equations and return all trial blocks.

    In quotient mode the constant mode of ``p`` is fixed by a rank-one term
    during the solve and then shifted so that ``(p_h, 1) = 0``.
    """
    kernels = dpg_core.ElementKernels(mesh, config, k, degree=dpg_degree)
    layout = dpg_core.DofLayout(mesh, config)
    ne = dpg_core.assemble_normal_equations(mesh, config, r_h, k=k, condense=condense,
                                            kernels=kernels, layout=layout)
    x, info = dpg_core.solve_spd(ne.A, ne.rhs, solver, tol)
    if condense:
        trace = layout.trace_prolongation @ x
        grad_r = dpg_core._p1_gradients(mesh, r_h)
        fields = dpg_core.recover_fields(kernels, layout, trace, grad_r)
        u_full = np.concatenate([fields.ravel(), trace])
    else:
        u_full = layout.prolongation @ x
    if config.quotient_mode:
        F = u_full[: layout.n_fields].reshape(-1, 8)
        shift = np.dot(F[:, 7], mesh.areas) / mesh.areas.sum()
        F[:, 7] -= shift
        o = layout.offsets["p"]
        u_full[o:o + mesh.n_vertices] -= shift
    return Stage2Result(u_full, layout, kernels, info)


# ------------------------------------------------------------------- errors
def _chunked_points(mesh: Mesh, degree: int, chunk: int = 2048):
    rule = rule_for_degree(degree)
    for start in range(0, mesh.n_triangles, chunk):
        sub = slice(start, min(start + chunk, mesh.n_triangles))
        p0 = mesh.vertices[mesh.triangles[sub, 0]]
        pts = p0[:, None, :] + np.einsum("mij,qj->mqi", mesh.jacobians[sub], rule.points)
        w = (2.0 * mesh.areas[sub])[:, None] * rule.weights[None, :]
        yield sub, rule, pts, w


def error_norms(mesh: Mesh, exact: ExactSolution, u_h: np.ndarray, psi_h: np.ndarray,
                M_h: np.ndarray, degree: int = ERROR_DEGREE) -> dict:
    """``||u - u_h||_1`` (full H1), ``||psi - psi_h||`` and ``||M - M_h||`` (Frobenius)."""
    G = p1_gradients(mesh)
    grad_uh = np.einsum("mva,mv->ma", G, u_h[mesh.triangles])
    eu = epsi = eM = 0.0
    for sub, rule, pts, w in _chunked_points(mesh, degree):
        x, y = pts[..., 0], pts[..., 1]
        uh = np.einsum("qv,mv->mq", rule.barycentric, u_h[mesh.triangles[sub]])
        du = exact.u(x, y) - uh
        dg = exact.grad_u(x, y) - grad_uh[sub][:, None, :]
        eu += np.sum(w * (du**2 + np.sum(dg**2, axis=-1)))
        dp = exact.psi(x, y) - psi_h[sub][:, None, :]
        epsi += np.sum(w * np.sum(dp**2, axis=-1))
        dM = exact.M(x, y) - M_h[sub][:, None, :, :]
        eM += np.sum(w * np.sum(dM**2, axis=(-1, -2)))
    return {"err_u_H1": np.sqrt(eu), "err_psi_L2": np.sqrt(epsi), "err_M_L2": np.sqrt(eM)}


# ----------------------------------------------------------------- pipeline
@dataclass
class StageSolution:
    """All stage outputs on one mesh level plus diagnostics."""

    mesh: Mesh
    config: ModelConfig
    r_h: np.ndarray
    stage2: Stage2Result
    u_h: np.ndarray
    estimates: EstimateField
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def u_frak_h(self) -> np.ndarray:
        return self.stage2.u_full

    @property
    def psi_h(self) -> np.ndarray:
        return self.stage2.fields["psi"]

    @property
    def M_h(self) -> np.ndarray:
        return self.stage2.fields["M"]

    @property
    def dofs(self) -> int:
        return self.stage2.layout.n_free


@dataclass(frozen=True)
class LevelRecord:
    level: int
    n_triangles: int
    dofs: int
    t: float
    errors: dict
    eta: dict
    timings: dict

    def row(self) -> list:
        e = [self.errors.get(k, float("nan")) for k in ("err_u_H1", "err_psi_L2", "err_M_L2")]
        return [self.level, self.n_triangles, self.dofs, self.t, *e,
                self.eta["eta1"], self.eta["eta2"], self.eta["eta3"], self.eta["eta"]]


def solve_level(mesh: Mesh, config: ModelConfig, exact: Optional[ExactSolution] = None, *,
                solver: str = "direct", tol: float = 1e-10, degree: int = ERROR_DEGREE,
                k: int = 3, dpg_degree: int | None = None) -> StageSolution:
    times = {}
    t0 = time.perf_counter()
    r_h = solve_stage1(mesh, config, degree)
    times["stage1_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    s2 = solve_stage2(mesh, config, r_h, k=k, solver=solver, tol=tol, dpg_degree=dpg_degree)
    times["stage2_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    psi_h = s2.fields["psi"]
    u_h = solve_stage3(mesh, config, psi_h, degree)
    times["stage3_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fixed = clamped_vertices(mesh)
    eta1 = poisson_estimator(mesh, r_h, config.load, fixed_vertices=fixed, degree=degree)
    eta2 = dpg_core.residual_norms(s2.kernels, s2.layout, s2.u_full, r_h)
    eta3 = poisson_estimator(mesh, u_h, config.load, correction=psi_h, load_scale=config.t**2,
                             fixed_vertices=fixed, degree=degree)
    est = combine(eta1, eta2, eta3)
    times["estimate_s"] = time.perf_counter() - t0
    errors = {}
    if exact is not None:
        errors = error_norms(mesh, exact, u_h, psi_h, s2.fields["M"], degree)
    return StageSolution(mesh, config, r_h, s2, u_h, est, errors, times)


def run_pipeline(problem: Problem, n_refinements: int = 0, *, adaptive: bool = False,
                 theta: float = 0.5, solver: str = "direct", tol: float = 1e-10,
                 degree: int = ERROR_DEGREE, dpg_degree: int | None = None,
                 callback=None) -> tuple[list, StageSolution]:
    """Solve on a sequence of meshes; returns the level records and the final solution.

    Uniform mode refines every triangle between levels; adaptive mode marks
    with the bulk criterion on the combined estimator and refines by NVB.
    """
    if n_refinements < 0:
        raise ConfigError("n_refinements must be non-negative")
    mesh = problem.mesh
    records = []
    sol = None
    for level in range(n_refinements + 1):
        sol = solve_level(mesh, problem.config, problem.exact, solver=solver, tol=tol,
                          degree=degree, dpg_degree=dpg_degree)
        rec = LevelRecord(level, mesh.n_triangles, sol.dofs, problem.config.t, sol.errors,
                          sol.estimates.totals(), sol.timings)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if level == n_refinements:
            break
        if adaptive:
            marked = doerfler_mark(sol.estimates.combined, theta)
            mesh = refine_nvb(mesh, marked)
        else:
            mesh = refine_uniform(mesh, 1)
    return records, sol


# ---------------------------------------------------------------------- CSV
def format_float(x: float) -> str:
    return repr(float(x)) if np.isnan(x) else f"{float(x):.17g}"


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([v if isinstance(v, (int, np.integer)) else format_float(v) for v in rec.row()])
    return buf.getvalue()


def timings_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for rec in records:
        w.writerow([rec.level] + [f"{rec.timings.get(c, 0.0):.6f}" for c in TIMING_COLUMNS[1:]])
    return buf.getvalue()


def convergence_rate(n_triangles, values, last: int = 3) -> float:
    """Least-squares slope of ``log(value)`` against ``log(#T)`` over the last levels."""
    n = np.asarray(n_triangles, dtype=float)[-last:]
    v = np.asarray(values, dtype=float)[-last:]
    if n.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(n), np.log(v), 1)[0])
