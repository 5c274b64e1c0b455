"""Lowest-order conforming spaces and broken polynomial test spaces.

Conventions
-----------
* P1c dofs are vertex values. Vector P1c dofs are interleaved, ``2*v + c``.
* RT0 dof on edge ``E`` is the normal component along the global edge
  normal. On triangle ``T`` with ``E`` opposite vertex ``a_E`` the basis
  function is ``s_E |E| / (2|T|) (x - a_E)`` where ``s_E`` is the
  orientation sign of ``E`` seen from ``T``.
* ND0 is the RT0 basis rotated counter-clockwise by 90 degrees, so its dof
  is the tangential component along the global edge tangent.
* Row-wise RT0 tensors use dof ``2*e + r`` for row ``r`` of edge ``e``.
* Broken spaces are element blocked; symmetric tensors are stored as the
  three scalar fields ``(xx, yy, xy)``.

Boundary conditions are encoded as per-entity linear constraints and
turned into a prolongation matrix ``P`` with ``u_full = P @ u_free``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import BCKind, Mesh
from .quadrature import monomial_integral


class SpaceKind(enum.Enum):
    P0_SCALAR = "P0scalar"
    P0_VECTOR = "P0vector"
    P0_SYMTENSOR = "P0symtensor"
    P1C_SCALAR = "P1cScalar"
    P1C_VECTOR = "P1cVector"
    RT0 = "RT0"
    RT0_ROWS_TENSOR = "RT0rowsTensor"
    ND0 = "ND0"
    BROKEN_PK = "BrokenPk"


class BoundaryConditionError(ValueError):
    pass


U_KINDS = (
    BCKind.HARD_CLAMPED,
    BCKind.SOFT_CLAMPED,
    BCKind.HARD_SIMPLE_SUPPORT,
    BCKind.SOFT_SIMPLE_SUPPORT,
)


# --------------------------------------------------------------- reference P_k
def monomial_exponents(k: int) -> list[tuple[int, int]]:
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


@lru_cache(maxsize=None)
def _orthonormal_coefficients(k: int) -> np.ndarray:
    """Columns give an L2(reference)-orthonormal basis in monomial coordinates."""
    exps = monomial_exponents(k)
    mass = np.array(
        [[monomial_integral(a1 + a2, b1 + b2) for a2, b2 in exps] for a1, b1 in exps]
    )
    L = np.linalg.cholesky(mass)
    coeffs = np.linalg.inv(L).T
    coeffs.setflags(write=False)
    return coeffs


class ScalarPkBasis:
    """Orthonormal basis of P_k on the reference triangle."""

    def __init__(self, k: int):
        if k < 0:
            raise ValueError("polynomial degree must be non-negative")
        self.k = k
        self.exponents = monomial_exponents(k)
        self.coeffs = _orthonormal_coefficients(k)

    @property
    def size(self) -> int:
        return len(self.exponents)

    def _monomials(self, xhat: np.ndarray):
        x, y = np.asarray(xhat, dtype=float).T
        vals, dx, dy = [], [], []
        for a, b in self.exponents:
            vals.append(x**a * y**b)
            dx.append(a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x))
            dy.append(b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x))
        return np.array(vals).T, np.array(dx).T, np.array(dy).T

    def eval(self, xhat: np.ndarray):
        """Values ``(n, size)`` and reference gradients ``(n, size, 2)``."""
        m, mx, my = self._monomials(xhat)
        C = self.coeffs
        return m @ C, np.stack([mx @ C, my @ C], axis=2)

    def integrals(self) -> np.ndarray:
        """Reference integrals of the basis functions."""
        mom = np.array([monomial_integral(a, b) for a, b in self.exponents])
        return mom @ self.coeffs


def reference_coordinates(mesh: Mesh, element: int, points) -> np.ndarray:
    J = mesh.jacobians[element]
    p0 = mesh.vertices[mesh.triangles[element, 0]]
    return np.linalg.solve(J, (np.asarray(points, dtype=float) - p0).T).T


# ------------------------------------------------------------------ spaces
@dataclass(frozen=True, eq=False)
class Constraint:
    """Linear constraints ``directions @ u[dofs] = 0`` on one mesh entity."""

    dofs: tuple
    directions: np.ndarray


@dataclass(frozen=True, eq=False)
class FeSpace:
    kind: SpaceKind
    mesh: Mesh
    dof_count: int
    dof_map: np.ndarray  # (M, n_local)
    constraints: tuple = ()
    degree: int = 0
    components: int = 1

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        return prolongation_from_constraints(self.dof_count, self.constraints)

    @cached_property
    def constrained_dofs(self) -> np.ndarray:
        P = self.prolongation
        return np.flatnonzero(np.diff(P.indptr) == 0)

    @property
    def free_count(self) -> int:
        return self.prolongation.shape[1]

    @property
    def local_size(self) -> int:
        return self.dof_map.shape[1]


def _complement(directions: np.ndarray, size: int) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of ``directions``."""
    if directions.size == 0:
        return np.eye(size)
    _, s, vt = np.linalg.svd(np.atleast_2d(directions))
    rank = int(np.sum(s > 1e-10 * s.max()))
    null = vt[rank:].T
    null[np.abs(null) < 1e-14] = 0.0
    for j in range(null.shape[1]):
        col = null[:, j]
        big = np.argmax(np.abs(col))
        if col[big] < 0:
            null[:, j] = -col
        if np.count_nonzero(col) == 1:
            null[:, j] = np.sign(null[:, j])
    return null


def prolongation_from_constraints(n: int, constraints) -> sp.csr_matrix:
    """Sparse ``P`` whose columns span the dofs satisfying all constraints.

    Free dofs keep their natural order; each partially constrained entity
    contributes its complement directions at the position of its first dof.
    """
    grouped: dict[tuple, list] = {}
    for c in constraints:
        grouped.setdefault(tuple(c.dofs), []).append(np.atleast_2d(c.directions))
    owner = {}
    for dofs in grouped:
        for d in dofs:
            if d in owner and owner[d] != dofs:
                raise BoundaryConditionError("overlapping constraint groups")
            owner[d] = dofs
    rows, cols, vals = [], [], []
    col = 0
    done = set()
    for i in range(n):
        if i not in owner:
            rows.append(i)
            cols.append(col)
            vals.append(1.0)
            col += 1
            continue
        dofs = owner[i]
        if dofs in done:
            continue
        done.add(dofs)
        null = _complement(np.vstack(grouped[dofs]), len(dofs))
        for j in range(null.shape[1]):
            for r, d in enumerate(dofs):
                if null[r, j] != 0.0:
                    rows.append(d)
                    cols.append(col)
                    vals.append(null[r, j])
            col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, col))


# ------------------------------------------------------------- constraints
def _vertex_zero(vertices, ncomp=1):
    return tuple(
        Constraint(tuple(ncomp * v + c for c in range(ncomp)), np.eye(ncomp)) for v in vertices
    )


def _edge_kinds(mesh: Mesh, kinds) -> np.ndarray:
    return mesh.edges_of_kind(*kinds)


def _resolve_kinds(mesh: Mesh, bc_spec) -> tuple:
    if bc_spec in ("all", "dirichlet"):
        return tuple(BCKind)
    return tuple(BCKind.parse(b) for b in bc_spec)


def _p1_scalar_constraints(mesh: Mesh, bc_spec):
    if bc_spec is None:
        return ()
    if bc_spec == "u":
        edges = _edge_kinds(mesh, U_KINDS)
    elif bc_spec == "p":
        edges = _edge_kinds(mesh, (BCKind.FREE,))
    elif isinstance(bc_spec, str) and bc_spec not in ("all", "dirichlet"):
        raise BoundaryConditionError(f"P1cScalar does not accept bc {bc_spec!r}")
    else:
        edges = _edge_kinds(mesh, _resolve_kinds(mesh, bc_spec))
    return _vertex_zero(mesh.vertices_of_edges(edges))


def _rotation_directions(kind: BCKind, n: np.ndarray, t: np.ndarray):
    if kind is BCKind.HARD_CLAMPED:
        return [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    if kind is BCKind.SOFT_CLAMPED:
        return [n]
    if kind is BCKind.HARD_SIMPLE_SUPPORT:
        return [t]
    return []


def _p1_vector_constraints(mesh: Mesh, bc_spec):
    if bc_spec is None:
        return ()
    if bc_spec != "psi":
        if isinstance(bc_spec, str) and bc_spec not in ("all", "dirichlet"):
            raise BoundaryConditionError(f"P1cVector does not accept bc {bc_spec!r}")
        verts = mesh.vertices_of_edges(_edge_kinds(mesh, _resolve_kinds(mesh, bc_spec)))
        return _vertex_zero(verts, 2)
    per_vertex: dict[int, list] = {}
    for e in np.flatnonzero(mesh.is_boundary_edge):
        kind = mesh.edge_bc[e]
        dirs = _rotation_directions(kind, mesh.edge_normals[e], mesh.edge_tangents[e])
        for v in mesh.edges[e]:
            per_vertex.setdefault(int(v), []).extend(dirs)
    out = []
    for v in sorted(per_vertex):
        dirs = per_vertex[v]
        if dirs:
            out.append(Constraint((2 * v, 2 * v + 1), np.array(dirs)))
    return tuple(out)


def _nd0_constraints(mesh: Mesh, bc_spec):
    """Zero tangential dofs; role ``eta`` covers segments where psi_t is clamped."""
    if bc_spec is None:
        return ()
    if bc_spec == "eta":
        edges = _edge_kinds(mesh, (BCKind.HARD_CLAMPED, BCKind.HARD_SIMPLE_SUPPORT))
    elif isinstance(bc_spec, str) and bc_spec not in ("all", "dirichlet"):
        raise BoundaryConditionError(f"ND0 does not accept bc {bc_spec!r}")
    else:
        edges = _edge_kinds(mesh, _resolve_kinds(mesh, bc_spec))
    return tuple(Constraint((int(e),), np.eye(1)) for e in edges)


def _rt0_constraints(mesh: Mesh, bc_spec):
    if bc_spec is None:
        return ()
    if isinstance(bc_spec, str) and bc_spec not in ("all", "dirichlet"):
        raise BoundaryConditionError(f"RT0 does not accept bc {bc_spec!r}")
    edges = _edge_kinds(mesh, _resolve_kinds(mesh, bc_spec))
    return tuple(Constraint((int(e),), np.eye(1)) for e in edges)


def _moment_directions(kind: BCKind, n: np.ndarray, t: np.ndarray):
    if kind is BCKind.SOFT_CLAMPED:
        return [t]
    if kind is BCKind.HARD_SIMPLE_SUPPORT:
        return [n]
    if kind in (BCKind.SOFT_SIMPLE_SUPPORT, BCKind.FREE):
        return [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    return []


def _rt0_rows_constraints(mesh: Mesh, bc_spec):
    """Constraints on ``(M n)`` per boundary edge; dofs ``2e, 2e+1`` are its rows."""
    if bc_spec is None:
        return ()
    if bc_spec != "moment":
        if isinstance(bc_spec, str) and bc_spec not in ("all", "dirichlet"):
            raise BoundaryConditionError(f"RT0rowsTensor does not accept bc {bc_spec!r}")
        edges = _edge_kinds(mesh, _resolve_kinds(mesh, bc_spec))
        return tuple(Constraint((2 * int(e), 2 * int(e) + 1), np.eye(2)) for e in edges)
    out = []
    for e in np.flatnonzero(mesh.is_boundary_edge):
        dirs = _moment_directions(mesh.edge_bc[e], mesh.edge_normals[e], mesh.edge_tangents[e])
        if dirs:
            out.append(Constraint((2 * int(e), 2 * int(e) + 1), np.array(dirs)))
    return tuple(out)


def build_space(kind, mesh: Mesh, bc_spec=None, degree: int = 3) -> FeSpace:
    """Build a finite element space with deterministic dof numbering.

    ``bc_spec`` is ``None``, ``"all"``, an iterable of :class:`BCKind` whose
    boundary entities are zeroed, or one of the plate roles ``"u"`` (zero on
    the clamped-deflection part), ``"p"`` (zero on the free part), ``"psi"``,
    ``"eta"`` and ``"moment"``.
    """
    kind = SpaceKind(kind) if not isinstance(kind, SpaceKind) else kind
    M = mesh.n_triangles
    elems = np.arange(M)
    if kind in (SpaceKind.P0_SCALAR, SpaceKind.P0_VECTOR, SpaceKind.P0_SYMTENSOR, SpaceKind.BROKEN_PK):
        if bc_spec is not None:
            raise BoundaryConditionError(f"{kind.value} is discontinuous and takes no bc")
        ncomp = {SpaceKind.P0_SCALAR: 1, SpaceKind.P0_VECTOR: 2, SpaceKind.P0_SYMTENSOR: 3,
                 SpaceKind.BROKEN_PK: 1}[kind]
        nb = (degree + 1) * (degree + 2) // 2 if kind is SpaceKind.BROKEN_PK else 1
        nloc = ncomp * nb
        dof_map = elems[:, None] * nloc + np.arange(nloc)[None, :]
        return FeSpace(kind, mesh, M * nloc, dof_map, (),
                       degree if kind is SpaceKind.BROKEN_PK else 0, ncomp)
    if kind is SpaceKind.P1C_SCALAR:
        return FeSpace(kind, mesh, mesh.n_vertices, mesh.triangles.copy(),
                       _p1_scalar_constraints(mesh, bc_spec), 1, 1)
    if kind is SpaceKind.P1C_VECTOR:
        t = mesh.triangles
        dof_map = np.stack([2 * t[:, k] + c for k in range(3) for c in range(2)], axis=1)
        return FeSpace(kind, mesh, 2 * mesh.n_vertices, dof_map,
                       _p1_vector_constraints(mesh, bc_spec), 1, 2)
    if kind is SpaceKind.RT0:
        return FeSpace(kind, mesh, mesh.n_edges, mesh.tri_edges.copy(),
                       _rt0_constraints(mesh, bc_spec), 1, 2)
    if kind is SpaceKind.ND0:
        return FeSpace(kind, mesh, mesh.n_edges, mesh.tri_edges.copy(),
                       _nd0_constraints(mesh, bc_spec), 1, 2)
    if kind is SpaceKind.RT0_ROWS_TENSOR:
        e = mesh.tri_edges
        dof_map = np.stack([2 * e[:, j] + r for j in range(3) for r in range(2)], axis=1)
        return FeSpace(kind, mesh, 2 * mesh.n_edges, dof_map,
                       _rt0_rows_constraints(mesh, bc_spec), 1, 4)
    raise ValueError(f"unsupported space kind {kind}")


@dataclass(frozen=True)
class BrokenTestSpace:
    """Element-local test dofs for (chi, rho, S, v); S as (xx, yy, xy)."""

    mesh: Mesh
    degree: int
    scalar: ScalarPkBasis = field(repr=False, default=None)

    COMPONENTS = ("chi_x", "chi_y", "rho_x", "rho_y", "S_xx", "S_yy", "S_xy", "v")

    @property
    def scalar_size(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2

    @property
    def local_size(self) -> int:
        return 8 * self.scalar_size

    @property
    def dof_count(self) -> int:
        return self.local_size * self.mesh.n_triangles

    def block_sizes(self) -> dict:
        nb = self.scalar_size
        return {"chi": 2 * nb, "rho": 2 * nb, "S": 3 * nb, "v": nb}

    def block_slices(self) -> dict:
        nb = self.scalar_size
        return {"chi": slice(0, 2 * nb), "rho": slice(2 * nb, 4 * nb),
                "S": slice(4 * nb, 7 * nb), "v": slice(7 * nb, 8 * nb)}


def broken_test_space(mesh: Mesh, k: int = 3) -> BrokenTestSpace:
    if k < 1:
        raise ValueError("test degree must be at least 1")
    return BrokenTestSpace(mesh, k, ScalarPkBasis(k))


# ---------------------------------------------------------------- evaluation
@dataclass(frozen=True)
class BasisEval:
    """Local basis values ``(npts, nloc, ncomp)`` and gradients ``(npts, nloc, ncomp, 2)``."""

    values: np.ndarray
    grads: np.ndarray

    @property
    def div(self) -> np.ndarray:
        return self.grads[..., 0, 0] + self.grads[..., 1, 1]

    @property
    def rot(self) -> np.ndarray:
        return self.grads[..., 1, 0] - self.grads[..., 0, 1]


def rt0_coefficients(mesh: Mesh):
    """Per-element scale ``c_j = s_j |E_j| / (2|T|)`` and opposite vertices ``a_j``."""
    c = mesh.edge_signs * mesh.local_edge_lengths / (2.0 * mesh.areas[:, None])
    a = mesh.vertices[mesh.triangles]
    return c, a


def _rt0_eval(mesh, element, points):
    c, a = rt0_coefficients(mesh)
    pts = np.asarray(points, dtype=float)
    vals = c[element][None, :, None] * (pts[:, None, :] - a[element][None, :, :])
    grads = np.zeros(vals.shape + (2,))
    for j in range(3):
        grads[:, j, 0, 0] = c[element, j]
        grads[:, j, 1, 1] = c[element, j]
    return vals, grads


def _rotate(vals, grads):
    """Counter-clockwise rotation by 90 degrees: (a, b) -> (-b, a)."""
    rv = np.stack([-vals[..., 1], vals[..., 0]], axis=-1)
    rg = np.stack([-grads[..., 1, :], grads[..., 0, :]], axis=-2)
    return rv, rg


def eval_basis(space, element: int, points) -> BasisEval:
    """Evaluate the local basis of ``space`` on ``element`` at physical points."""
    mesh = space.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts = len(pts)
    xhat = reference_coordinates(mesh, element, pts)
    Jinv_T = np.linalg.inv(mesh.jacobians[element]).T
    if isinstance(space, BrokenTestSpace):
        vals, rgrads = space.scalar.eval(xhat)
        return BasisEval(vals[:, :, None], (rgrads @ Jinv_T.T)[:, :, None, :])
    kind = space.kind
    if kind is SpaceKind.BROKEN_PK:
        basis = ScalarPkBasis(space.degree)
        vals, rgrads = basis.eval(xhat)
        return BasisEval(vals[:, :, None], (rgrads @ Jinv_T.T)[:, :, None, :])
    if kind in (SpaceKind.P0_SCALAR, SpaceKind.P0_VECTOR, SpaceKind.P0_SYMTENSOR):
        n = space.components
        vals = np.broadcast_to(np.eye(n), (npts, n, n)).copy()
        return BasisEval(vals, np.zeros((npts, n, n, 2)))
    if kind in (SpaceKind.P1C_SCALAR, SpaceKind.P1C_VECTOR):
        lam = np.column_stack([1.0 - xhat.sum(axis=1), xhat[:, 0], xhat[:, 1]])
        glam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) @ Jinv_T.T
        if kind is SpaceKind.P1C_SCALAR:
            return BasisEval(lam[:, :, None], np.broadcast_to(glam[None, :, None, :], (npts, 3, 1, 2)).copy())
        vals = np.zeros((npts, 6, 2))
        grads = np.zeros((npts, 6, 2, 2))
        for k in range(3):
            for c in range(2):
                vals[:, 2 * k + c, c] = lam[:, k]
                grads[:, 2 * k + c, c, :] = glam[k]
        return BasisEval(vals, grads)
    if kind is SpaceKind.RT0:
        return BasisEval(*_rt0_eval(mesh, element, pts))
    if kind is SpaceKind.ND0:
        return BasisEval(*_rotate(*_rt0_eval(mesh, element, pts)))
    if kind is SpaceKind.RT0_ROWS_TENSOR:
        v, g = _rt0_eval(mesh, element, pts)
        vals = np.zeros((npts, 6, 4))
        grads = np.zeros((npts, 6, 4, 2))
        for j in range(3):
            for r in range(2):
                vals[:, 2 * j + r, 2 * r:2 * r + 2] = v[:, j]
                grads[:, 2 * j + r, 2 * r:2 * r + 2] = g[:, j]
        return BasisEval(vals, grads)
    raise ValueError(f"cannot evaluate {kind}")
