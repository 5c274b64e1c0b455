"""Residual-based error indicators and bulk marking for the adaptive loop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import BCKind, Mesh
from .quadrature import map_to_mesh, rule_for_degree


@dataclass(frozen=True)
class EstimateField:
    """Per-element indicators ``eta1`` (stage 1), ``eta2`` (DPG residual), ``eta3`` (stage 3)."""

    eta1: np.ndarray
    eta2: np.ndarray
    eta3: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.sqrt(self.eta1**2 + self.eta2**2 + self.eta3**2)

    def totals(self) -> dict:
        out = {name: float(np.sqrt(np.sum(getattr(self, name) ** 2)))
               for name in ("eta1", "eta2", "eta3")}
        out["eta"] = float(np.sqrt(out["eta1"] ** 2 + out["eta2"] ** 2 + out["eta3"] ** 2))
        return out

    def dump(self) -> str:
        """One line per element: ``id eta1 eta2 eta3`` with 17 significant digits."""
        lines = [f"{i} {a:.17g} {b:.17g} {c:.17g}"
                 for i, (a, b, c) in enumerate(zip(self.eta1, self.eta2, self.eta3))]
        return "\n".join(lines) + "\n"


def combine(eta1, eta2, eta3) -> EstimateField:
    arrs = [np.asarray(e, dtype=float) for e in (eta1, eta2, eta3)]
    if len({a.shape for a in arrs}) != 1:
        raise ValueError("estimator fields live on different meshes")
    if any(np.any(a < 0) for a in arrs):
        raise ValueError("estimator entries must be non-negative")
    return EstimateField(*arrs)


def poisson_estimator(mesh: Mesh, solution: np.ndarray, f, *, correction=None,
                      load_scale: float = 1.0, fixed_vertices=None,
                      degree: int = 14) -> np.ndarray:
    """Weighted residual indicator of a P1 Poisson solution.

    ``eta(T)^2 = h_T^2 ||s f||_T^2 + 1/2 sum_{interior E} h_E ||[sigma . n]||_E^2
    + sum_{free E} h_E ||sigma . n||_E^2`` with flux ``sigma = grad u_h - c``,
    ``s = load_scale`` and ``c`` the elementwise constant ``correction``
    (zero for stage 1, ``psi_h`` for stage 3). The divergence of a piecewise
    constant correction vanishes elementwise, so the volume residual is ``s f``.
    """
    from .stages import p1_gradients

    G = p1_gradients(mesh)
    sigma = np.einsum("mva,mv->ma", G, np.asarray(solution)[mesh.triangles])
    if correction is not None:
        sigma = sigma - np.asarray(correction)
    const = getattr(f, "constant_value", None)
    if const is not None:
        vol = (load_scale * const) ** 2 * mesh.areas
    else:
        rule = rule_for_degree(degree)
        pts, w = map_to_mesh(rule, mesh)
        fv = load_scale * np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
        vol = np.sum(w * fv**2, axis=1)
    eta2 = mesh.diameters**2 * vol
    et = mesh.edge_triangles
    n = mesh.edge_normals
    hE = mesh.edge_lengths
    interior = ~mesh.is_boundary_edge
    ei = np.flatnonzero(interior)
    jump = np.einsum("ea,ea->e", sigma[et[ei, 0]] - sigma[et[ei, 1]], n[ei])
    contrib = 0.5 * hE[ei] * hE[ei] * jump**2  # h_E * |E| * J^2
    np.add.at(eta2, et[ei, 0], contrib)
    np.add.at(eta2, et[ei, 1], contrib)
    free = np.array([b is BCKind.FREE for b in mesh.edge_bc], dtype=bool)
    fe = np.flatnonzero(free)
    if fe.size:
        flux = np.einsum("ea,ea->e", sigma[et[fe, 0]], n[fe])
        np.add.at(eta2, et[fe, 0], hE[fe] * hE[fe] * flux**2)
    return np.sqrt(eta2)


def doerfler_mark(estimates, theta: float = 0.5) -> np.ndarray:
    """Shortest prefix of elements sorted by ``eta(T)^2`` (descending, ties by id)
    whose squared sum reaches ``theta * eta^2``."""
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    e2 = np.asarray(estimates, dtype=float) ** 2
    if e2.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(e2.size), -e2))
    csum = np.cumsum(e2[order])
    target = theta * csum[-1]
    count = int(np.searchsorted(csum, target, side="left")) + 1
    count = min(count, e2.size)
    return np.sort(order[:count])
