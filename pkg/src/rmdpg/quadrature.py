"""Symmetric Gauss rules on the reference triangle (0,0), (1,0), (0,1).

The tables in ``data/triangle_rules.json`` are fully symmetric rules with
positive weights and interior points (Xiao--Gimbutas type), one per degree
1..20. Weights sum to the reference area 1/2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

MAX_DEGREE = 20


class UnsupportedDegreeError(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,)
    exact_degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points.T
        return np.stack([1.0 - x - y, x, y], axis=1)

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def _tables() -> dict:
    text = resources.files("rmdpg").joinpath("data/triangle_rules.json").read_text()
    return {int(k): v for k, v in json.loads(text).items()}


@lru_cache(maxsize=None)
def rule_for_degree(d: int) -> QuadratureRule:
    """Positive-weight symmetric rule integrating total degree ``d`` exactly."""
    if d < 0 or d > MAX_DEGREE:
        raise UnsupportedDegreeError(f"quadrature degree {d} outside 0..{MAX_DEGREE}")
    d = max(d, 1)
    entry = _tables()[d]
    pts = np.array(entry["points"], dtype=float)
    w = np.array(entry["weights"], dtype=float)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, d)


def map_to_physical(rule: QuadratureRule, triangle) -> tuple[np.ndarray, np.ndarray]:
    """Affine image of the rule on the triangle with the given 3 x 2 vertex array.

    Returns physical points ``(nq, 2)`` and weights scaled by ``|det J|``.
    """
    tri = np.asarray(triangle, dtype=float)
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    det = np.linalg.det(J)
    scale = np.abs(tri).max() if tri.size else 1.0
    if not np.isfinite(det) or abs(det) <= 1e-14 * max(scale, 1.0) ** 2:
        raise GeometryError("degenerate triangle")
    return tri[0] + rule.points @ J.T, rule.weights * abs(det)


def map_to_mesh(rule: QuadratureRule, mesh) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points ``(M, nq, 2)`` and weights ``(M, nq)`` on every triangle."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    pts = p0[:, None, :] + np.einsum("mij,qj->mqi", mesh.jacobians, rule.points)
    w = (2.0 * mesh.areas)[:, None] * rule.weights[None, :]
    return pts, w


@lru_cache(maxsize=None)
def gauss_legendre(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss--Legendre rule on [0, 1] exact for degree ``d`` (weights sum to 1)."""
    if d < 0 or d > MAX_DEGREE:
        raise UnsupportedDegreeError(f"edge quadrature degree {d} outside 0..{MAX_DEGREE}")
    n = d // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
