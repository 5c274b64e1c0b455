"""Conforming triangular meshes with boundary tags and newest-vertex bisection.

A mesh is stored as flat index arrays:

* ``vertices``   -- ``(N, 2)`` coordinates
* ``triangles``  -- ``(M, 3)`` vertex ids, counter-clockwise
* ``ref_edge``   -- ``(M,)`` local index of the refinement edge

Local edge ``j`` of a triangle is the edge opposite local vertex ``j``,
i.e. it runs from vertex ``(j+1) % 3`` to vertex ``(j+2) % 3``. Global edges
are oriented from the lower to the higher vertex id; the global unit normal
of an edge is its tangent rotated clockwise by 90 degrees.

Boundary edges carry a segment name, and ``bc_map`` assigns a
:class:`BCKind` to every segment.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

GEOM_TOL = 1e-12


class BCKind(enum.Enum):
    """Canonical plate boundary conditions."""

    HARD_CLAMPED = "hc"
    SOFT_CLAMPED = "sc"
    HARD_SIMPLE_SUPPORT = "hss"
    SOFT_SIMPLE_SUPPORT = "sss"
    FREE = "f"

    @classmethod
    def parse(cls, value) -> "BCKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name, kind.name.lower()):
                return kind
        raise ValueError(f"unknown boundary condition {value!r}")

    @property
    def clamps_deflection(self) -> bool:
        return self is not BCKind.FREE


class MeshError(ValueError):
    pass


def _local_edge_vertices(triangles: np.ndarray) -> np.ndarray:
    """(M, 3, 2) array: local edge j runs from vertex j+1 to vertex j+2."""
    return np.stack(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
    )


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    ref_edge: np.ndarray
    boundary: dict = field(default_factory=dict)
    bc_map: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        r = np.ascontiguousarray(self.ref_edge, dtype=np.int64)
        v.setflags(write=False)
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "ref_edge", r)
        object.__setattr__(
            self, "bc_map", {k: BCKind.parse(b) for k, b in self.bc_map.items()}
        )
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if np.any(self.signed_areas <= 0):
            bad = np.flatnonzero(self.signed_areas <= 0)
            raise MeshError(f"triangles {bad[:5].tolist()} are degenerate or clockwise")

    # ------------------------------------------------------------------ basic
    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(M, 2, 2) affine maps from the reference triangle, columns v1-v0, v2-v0."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def local_edge_lengths(self) -> np.ndarray:
        p = self.vertices[_local_edge_vertices(self.triangles)]
        return np.linalg.norm(p[:, :, 1] - p[:, :, 0], axis=2)

    @property
    def diameters(self) -> np.ndarray:
        return self.local_edge_lengths.max(axis=1)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of every triangle, in radians."""
        p = self.vertices[self.triangles]
        angles = []
        for j in range(3):
            a = p[:, (j + 1) % 3] - p[:, j]
            b = p[:, (j + 2) % 3] - p[:, j]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return np.min(angles, axis=0)

    # ------------------------------------------------------------ connectivity
    @cached_property
    def _edge_data(self):
        local = np.sort(_local_edge_vertices(self.triangles), axis=2).reshape(-1, 2)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(-1, 3)
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise MeshError("edge shared by more than two triangles")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        owner = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.r_[True, sorted_edges[1:] != sorted_edges[:-1]]
        edge_tris[sorted_edges[first], 0] = owner[order[first]]
        edge_tris[sorted_edges[~first], 1] = owner[order[~first]]
        return edges, tri_edges, edge_tris

    @property
    def edges(self) -> np.ndarray:
        """(K, 2) vertex pairs, lower id first, lexicographically sorted."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(M, 3) global edge id of local edge j (opposite local vertex j)."""
        return self._edge_data[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """(K, 2) adjacent triangle ids, -1 marks the missing side of a boundary edge."""
        return self._edge_data[2]

    @cached_property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def edge_tangents(self) -> np.ndarray:
        p = self.vertices[self.edges]
        d = p[:, 1] - p[:, 0]
        return d / np.linalg.norm(d, axis=1)[:, None]

    @cached_property
    def edge_normals(self) -> np.ndarray:
        t = self.edge_tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @cached_property
    def edge_signs(self) -> np.ndarray:
        """(M, 3) +1 where the local outward normal equals the global edge normal."""
        loc = _local_edge_vertices(self.triangles)
        return np.where(loc[:, :, 0] < loc[:, :, 1], 1.0, -1.0)

    @cached_property
    def edge_segments(self) -> list:
        """Segment name per global edge (None for interior edges)."""
        names = [None] * self.n_edges
        lookup = {tuple(e): k for k, e in enumerate(self.edges.tolist())}
        for pair, seg in self.boundary.items():
            names[lookup[tuple(sorted(pair))]] = seg
        return names

    @cached_property
    def edge_bc(self) -> list:
        """BCKind per global edge (None for interior edges)."""
        return [None if s is None else self.bc_map[s] for s in self.edge_segments]

    def edges_of_kind(self, *kinds: BCKind) -> np.ndarray:
        kinds = set(kinds)
        return np.array(
            [k for k, b in enumerate(self.edge_bc) if b in kinds], dtype=np.int64
        )

    def vertices_of_edges(self, edge_ids) -> np.ndarray:
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        if edge_ids.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.edges[edge_ids].ravel())

    def check(self) -> None:
        """Raise :class:`MeshError` unless the mesh is conforming and fully tagged."""
        bnd = np.flatnonzero(self.is_boundary_edge)
        segs = self.edge_segments
        untagged = [k for k in bnd if segs[k] is None]
        if untagged:
            raise MeshError(f"{len(untagged)} boundary edges carry no tag")
        interior_tagged = [
            k for k in np.flatnonzero(~self.is_boundary_edge) if segs[k] is not None
        ]
        if interior_tagged:
            raise MeshError("interior edge carries a boundary tag")
        missing = {s for s in segs if s is not None} - set(self.bc_map)
        if missing:
            raise MeshError(f"segments without boundary condition: {sorted(missing)}")
        # hanging nodes: a vertex lying in the interior of some edge
        p = self.vertices
        for k, (a, b) in enumerate(self.edges[self.is_boundary_edge]):
            pa, pb = p[a], p[b]
            d = pb - pa
            rel = p - pa
            cross = d[0] * rel[:, 1] - d[1] * rel[:, 0]
            s = rel @ d / (d @ d)
            inside = (np.abs(cross) < GEOM_TOL * (d @ d)) & (s > GEOM_TOL) & (s < 1 - GEOM_TOL)
            if inside.any():
                raise MeshError("hanging vertex on a boundary edge")

    def with_bc(self, bc_map: dict) -> "Mesh":
        merged = dict(self.bc_map)
        merged.update(bc_map)
        return Mesh(self.vertices, self.triangles, self.ref_edge, self.boundary, merged)


# ---------------------------------------------------------------- builders
def longest_edge_index(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Refinement edge seeding: longest edge, ties go to the smallest opposite vertex id."""
    p = vertices[_local_edge_vertices(triangles)]
    lengths = np.linalg.norm(p[:, :, 1] - p[:, :, 0], axis=2)
    ref = np.empty(len(triangles), dtype=np.int64)
    for i, (tri, ell) in enumerate(zip(triangles, lengths)):
        longest = ell.max()
        cands = [j for j in range(3) if ell[j] >= longest * (1 - 1e-12)]
        ref[i] = min(cands, key=lambda j: tri[j])
    return ref


def _tag_boundary(vertices, triangles, classify) -> dict:
    local = np.sort(_local_edge_vertices(triangles), axis=2).reshape(-1, 2)
    edges, counts = np.unique(local, axis=0, return_counts=True)
    boundary = {}
    for a, b in edges[counts == 1]:
        mid = 0.5 * (vertices[a] + vertices[b])
        boundary[(int(a), int(b))] = classify(mid)
    return boundary


def _lattice_mesh(squares, n: int, classify, bc_map) -> Mesh:
    """Mesh a union of unit squares on an integer lattice, each cut into n x n cells.

    ``squares`` holds ``(x0, y0, diagonal)`` with ``diagonal`` in ``{"/", "\\"}``.
    """
    keys: dict = {}
    cells = []
    for x0, y0, diag in squares:
        for j in range(n):
            for i in range(n):
                ix, iy = x0 * n + i, y0 * n + j
                c00, c10, c01, c11 = (ix, iy), (ix + 1, iy), (ix, iy + 1), (ix + 1, iy + 1)
                for c in (c00, c10, c01, c11):
                    keys.setdefault(c, None)
                if diag == "/":
                    cells += [(c00, c10, c11), (c00, c11, c01)]
                else:
                    cells += [(c00, c10, c01), (c10, c11, c01)]
    ordered = sorted(keys, key=lambda c: (c[1], c[0]))
    index = {c: k for k, c in enumerate(ordered)}
    vertices = np.array(ordered, dtype=float) / n
    triangles = np.array([[index[c] for c in cell] for cell in cells], dtype=np.int64)
    ref = longest_edge_index(vertices, triangles)
    boundary = _tag_boundary(vertices, triangles, classify)
    mesh = Mesh(vertices, triangles, ref, boundary, bc_map)
    return mesh


def _normalize_bc_map(bc_map, sides) -> dict:
    if bc_map is None:
        bc_map = BCKind.HARD_CLAMPED
    if isinstance(bc_map, (BCKind, str)):
        return {s: BCKind.parse(bc_map) for s in sides}
    out = {s: BCKind.parse(bc_map[s]) for s in sides if s in bc_map}
    missing = [s for s in sides if s not in out]
    if missing:
        raise MeshError(f"no boundary condition given for sides {missing}")
    return out


SQUARE_SIDES = ("bottom", "right", "top", "left")
LSHAPE_SIDES = ("bottom", "right", "top", "left", "inner_horizontal", "inner_vertical")


def build_structured_square(n: int, bc_map=None) -> Mesh:
    """Unit square cut into ``n x n`` cells, each split along its (0,0)-(1,1) diagonal.

    ``bc_map`` is a single :class:`BCKind` or a dict over ``bottom/right/top/left``.
    """
    if n < 1:
        raise MeshError("n must be positive")
    bc = _normalize_bc_map(bc_map, SQUARE_SIDES)

    def classify(mid):
        x, y = mid
        if abs(y) < GEOM_TOL:
            return "bottom"
        if abs(x - 1) < GEOM_TOL:
            return "right"
        if abs(y - 1) < GEOM_TOL:
            return "top"
        if abs(x) < GEOM_TOL:
            return "left"
        raise MeshError(f"boundary edge at {mid} is not on the unit square")

    return _lattice_mesh([(0, 0, "/")], n, classify, bc)


def build_lshape(n: int, bc_map=None) -> Mesh:
    """L-shape (-1,1)^2 minus [-1,0]^2 made of three unit squares.

    Each square is split along the diagonal through the re-entrant corner.
    The segments touching the origin are ``inner_horizontal`` (y=0, x<0) and
    ``inner_vertical`` (x=0, y<0). Default tags: those two hard clamped, the
    rest free.
    """
    if n < 1:
        raise MeshError("n must be positive")
    if bc_map is None:
        bc_map = {s: BCKind.FREE for s in LSHAPE_SIDES[:4]}
        bc_map.update(inner_horizontal=BCKind.HARD_CLAMPED, inner_vertical=BCKind.HARD_CLAMPED)
    bc = _normalize_bc_map(bc_map, LSHAPE_SIDES)

    def classify(mid):
        x, y = mid
        if abs(y + 1) < GEOM_TOL:
            return "bottom"
        if abs(x - 1) < GEOM_TOL:
            return "right"
        if abs(y - 1) < GEOM_TOL:
            return "top"
        if abs(x + 1) < GEOM_TOL:
            return "left"
        if abs(y) < GEOM_TOL and x < 0:
            return "inner_horizontal"
        if abs(x) < GEOM_TOL and y < 0:
            return "inner_vertical"
        raise MeshError(f"boundary edge at {mid} is not on the L-shape")

    squares = [(0, -1, "\\"), (0, 0, "/"), (-1, 0, "\\")]
    return _lattice_mesh(squares, n, classify, bc)


# -------------------------------------------------------------- refinement
def refine_nvb(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus conforming closure.

    Marked triangles are bisected at their refinement edge; the closure
    bisects the refinement edge of every triangle that has a split edge until
    the mesh is conforming. Marking every triangle means uniform refinement:
    the two-level bisection that turns each triangle into four.
    Children of a bisected triangle ``(a, b, c)`` with refinement edge ``ab``
    are ``(c, a, m)`` and ``(b, c, m)``; their refinement edges are the ones
    opposite the new vertex ``m``. Children keep the parent's position in the
    triangle list so the output order is deterministic.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise MeshError("marked triangle id out of range")

    tri_edges = mesh.tri_edges
    rows = np.arange(mesh.n_triangles)
    ref_ids = tri_edges[rows, mesh.ref_edge]
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    if marked.size == mesh.n_triangles:
        edge_marked[:] = True
    else:
        edge_marked[ref_ids[marked]] = True
    while True:
        touched = edge_marked[tri_edges].any(axis=1)
        need = touched & ~edge_marked[ref_ids]
        if not need.any():
            break
        edge_marked[ref_ids[need]] = True

    new_ids = np.full(mesh.n_edges, -1, dtype=np.int64)
    split = np.flatnonzero(edge_marked)
    new_ids[split] = mesh.n_vertices + np.arange(split.size)
    mids = 0.5 * (mesh.vertices[mesh.edges[split, 0]] + mesh.vertices[mesh.edges[split, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    edge_index = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}

    def midpoint(a, b):
        k = edge_index.get((a, b) if a < b else (b, a))
        if k is None:
            return -1
        return new_ids[k]

    out_tris = []
    out_ref = []

    def bisect(a, b, c):
        m = midpoint(a, b)
        if m < 0:
            out_tris.append((a, b, c))
            out_ref.append(2)
            return
        bisect(c, a, m)
        bisect(b, c, m)

    triangles = mesh.triangles.tolist()
    for i, tri in enumerate(triangles):
        if not edge_marked[tri_edges[i]].any():
            out_tris.append(tuple(tri))
            out_ref.append(int(mesh.ref_edge[i]))
            continue
        j = int(mesh.ref_edge[i])
        bisect(tri[(j + 1) % 3], tri[(j + 2) % 3], tri[j])

    boundary = {}
    for (a, b), seg in mesh.boundary.items():
        m = midpoint(a, b)
        if m < 0:
            boundary[(a, b)] = seg
        else:
            boundary[tuple(sorted((a, int(m))))] = seg
            boundary[tuple(sorted((int(m), b)))] = seg

    return Mesh(vertices, np.array(out_tris, dtype=np.int64), np.array(out_ref), boundary, mesh.bc_map)


def refine_uniform(mesh: Mesh, levels: int = 1) -> Mesh:
    for _ in range(levels):
        mesh = refine_nvb(mesh, np.arange(mesh.n_triangles))
    return mesh


# ---------------------------------------------------------------- skeleton
@dataclass(frozen=True)
class Skeleton:
    """Per-triangle view of the edge skeleton.

    ``edge_ids[T, j]`` is the global edge of local edge j; ``signs[T, j]`` is
    +1 if the outward normal of T agrees with the global edge normal;
    ``normals``/``tangents`` are the outward normal and the counter-clockwise
    tangent of T on that edge.
    """

    edge_ids: np.ndarray
    signs: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    lengths: np.ndarray
    is_boundary: np.ndarray


def skeleton_edges(mesh: Mesh) -> Skeleton:
    ids = mesh.tri_edges
    signs = mesh.edge_signs
    normals = mesh.edge_normals[ids] * signs[:, :, None]
    tangents = np.stack([-normals[:, :, 1], normals[:, :, 0]], axis=2)
    return Skeleton(
        edge_ids=ids,
        signs=signs,
        normals=normals,
        tangents=tangents,
        lengths=mesh.edge_lengths[ids],
        is_boundary=mesh.is_boundary_edge[ids],
    )


# ---------------------------------------------------------------------- io
def write_mesh(mesh: Mesh, path) -> None:
    """Write the whitespace-separated text format; boundary tags are BC kinds."""
    lines = [
        f"vertices {mesh.n_vertices} / triangles {mesh.n_triangles} / edges {len(mesh.boundary)}"
    ]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    lines += [
        f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.triangles.tolist(), mesh.ref_edge.tolist())
    ]
    for (a, b), seg in sorted(mesh.boundary.items()):
        lines.append(f"{a} {b} {mesh.bc_map[seg].value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    header = tokens[0].replace("/", " ").split()
    try:
        counts = dict(zip(header[0::2], map(int, header[1::2])))
        nv, nt, ne = counts["vertices"], counts["triangles"], counts["edges"]
    except (KeyError, ValueError) as exc:
        raise MeshError(f"malformed mesh header {tokens[0]!r}") from exc
    body = [ln.split() for ln in tokens[1:] if ln.strip()]
    if len(body) != nv + nt + ne:
        raise MeshError("mesh file line count does not match header")
    vertices = np.array([[float(x), float(y)] for x, y in body[:nv]])
    tri = np.array([[int(s) for s in row] for row in body[nv:nv + nt]], dtype=np.int64)
    boundary = {}
    for a, b, tag in body[nv + nt:]:
        kind = BCKind.parse(tag)
        boundary[tuple(sorted((int(a), int(b))))] = kind.value
    bc_map = {kind.value: kind for kind in BCKind if kind.value in set(boundary.values())}
    return Mesh(vertices, tri[:, :3], tri[:, 3], boundary, bc_map)
