"""Built-in oracle checks run by ``rmdpg verify`` and the acceptance tests.

Each check returns ``(name, passed, detail)``. The checks are deliberately
independent of one another so a failure points at one component.
"""
from __future__ import annotations

import numpy as np

from . import dpg_core, oracles
from .mesh import BCKind, build_structured_square
from .model import MaterialTensor, ModelConfig
from .quadrature import MAX_DEGREE, monomial_integral, rule_for_degree

QUADRATURE_RTOL = 1e-13
BILINEAR_RTOL = 1e-11
LEMMA_RTOL = 1e-11
SWEEP_THICKNESS = (1.0, 1e-2, 1e-4)


def check_quadrature() -> tuple[str, bool, str]:
    """Every rule integrates all monomials up to its degree on the reference triangle."""
    worst = 0.0
    for d in range(1, MAX_DEGREE + 1):
        rule = rule_for_degree(d)
        x, y = rule.points.T
        for a in range(d + 1):
            for b in range(d + 1 - a):
                exact = monomial_integral(a, b)
                worst = max(worst, abs(rule.weights @ (x**a * y**b) - exact) / exact)
    return "quadrature monomials", worst <= QUADRATURE_RTOL, f"max rel err {worst:.2e} (degrees 1..{MAX_DEGREE})"


def bilinear_errors(n: int, pairs: int, rng: np.random.Generator, t: float = 1e-2,
                    kind: BCKind = BCKind.HARD_CLAMPED, material=None) -> np.ndarray:
    """Relative differences between ``w^T B u`` and direct quadrature of ``b(u, w)``."""
    mesh = build_structured_square(n, kind)
    config = ModelConfig(t, dict(mesh.bc_map), 1.0, material or MaterialTensor.identity())
    layout = dpg_core.DofLayout(mesh, config)
    B = dpg_core.global_b_matrix(mesh, config)
    errs = np.empty(pairs)
    for i in range(pairs):
        u = rng.standard_normal(layout.n_total)
        w = rng.standard_normal(B.shape[0])
        ref = oracles.direct_bilinear(mesh, config, u, w)
        errs[i] = abs(w @ (B @ u) - ref) / abs(ref)
    return errs


def check_bilinear(seed: int = 0, pairs: int = 50) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    # n=1 gives the 2-triangle mesh, n=4 the 32-triangle mesh
    worst = {2 * n * n: float(bilinear_errors(n, pairs, rng).max()) for n in (1, 4)}
    ok = all(v <= BILINEAR_RTOL for v in worst.values())
    detail = ", ".join(f"{nt} triangles: {v:.2e}" for nt, v in worst.items())
    return "bilinear form equivalence", ok, detail


def lemma_ratio(t: float = 1e-2) -> float:
    """Largest moment-trace pairing against conforming test generators, relative to input scale."""
    mesh = build_structured_square(1, BCKind.HARD_CLAMPED)
    config = ModelConfig(t, dict(mesh.bc_map), 1.0)
    Z, scale = oracles.lemma_pairing(mesh, config)
    return float(np.abs(Z).max() / scale)


def check_lemma() -> tuple[str, bool, str]:
    ratio = lemma_ratio()
    return "trace orthogonality", ratio <= LEMMA_RTOL, f"max |pairing| / scale {ratio:.2e}"


def gram_min_eigenvalues(n_triangles: int, rng: np.random.Generator) -> dict:
    """Smallest eigenvalue of the scaled element Gram per ``(boundary kind, t)``.

    The Gram is scaled by its diagonal, which leaves definiteness unchanged and
    keeps the dense eigensolve meaningful when ``t`` is small.
    """
    tris = oracles.random_triangles(n_triangles, rng)
    J = oracles.jacobians_of(tris)
    out = {}
    for kind in (BCKind.HARD_CLAMPED, BCKind.SOFT_CLAMPED, None):
        bc = {"bottom": BCKind.HARD_CLAMPED, "right": kind or BCKind.FREE,
              "top": kind or BCKind.FREE, "left": kind or BCKind.FREE}
        for t in SWEEP_THICKNESS:
            config = ModelConfig(t, bc, 1.0)
            G = dpg_core.gram_matrices(J, config)
            d = 1.0 / np.sqrt(np.einsum("xii->xi", G))
            Gs = G * d[:, :, None] * d[:, None, :]
            label = "free" if kind is None else kind.value
            out[(label, t)] = float(np.linalg.eigvalsh(Gs)[:, 0].min())
    return out


def check_gram(seed: int = 0, n_triangles: int = 100) -> tuple[str, bool, str]:
    mins = gram_min_eigenvalues(n_triangles, np.random.default_rng(seed))
    worst = min(mins.values())
    return "Gram positive definiteness", worst > 0, f"min scaled eigenvalue {worst:.2e} over {len(mins)} configs"


def run_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    return [check_quadrature(), check_bilinear(seed), check_lemma(), check_gram(seed)]
