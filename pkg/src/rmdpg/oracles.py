"""Independent reference computations used by the verification suite.

The bilinear form is evaluated here by plain pointwise quadrature of its
defining integrals, using basis evaluations from :mod:`rmdpg.fespaces`. This
shares no code with the channel tables of :mod:`rmdpg.dpg_core`, so
agreement between the two is a meaningful check.
"""
from __future__ import annotations

import numpy as np

from . import dpg_core
from .fespaces import SpaceKind, broken_test_space, build_space, eval_basis
from .mesh import Mesh
from .model import ModelConfig
from .quadrature import map_to_physical, rule_for_degree


def _curl(grad):
    """curl z = (dz/dy, -dz/dx) from a gradient array ``(..., 2)``."""
    return np.stack([grad[..., 1], -grad[..., 0]], axis=-1)


def _rot(grad):
    """rot q = dq_y/dx - dq_x/dy from a Jacobian array ``(..., 2, 2)`` with ``[c, a] = d_a q_c``."""
    return grad[..., 1, 0] - grad[..., 0, 1]


def _combine(ev, coeffs):
    vals = np.einsum("qic,i->qc", ev.values, coeffs)
    grads = np.einsum("qica,i->qca", ev.grads, coeffs)
    return vals, grads


def _test_fields(space, e, pts, w_loc):
    ev = eval_basis(space, e, pts)
    nb = space.scalar_size
    phi, dphi = ev.values[:, :, 0], ev.grads[:, :, 0, :]
    comps = w_loc.reshape(8, nb)
    val = phi @ comps.T  # (q, 8)
    grad = np.einsum("qia,ci->qca", dphi, comps)  # (q, 8, 2)
    return val, grad


def direct_bilinear(mesh: Mesh, config: ModelConfig, u_full: np.ndarray, w: np.ndarray,
                    k: int = 3, degree: int = 6) -> float:
    """``b(u, w)`` by elementwise quadrature of the ultraweak form.

    ``u_full`` is a full trial coefficient vector in :class:`~rmdpg.dpg_core.DofLayout`
    order, ``w`` holds ``8 (k+1)(k+2)/2`` broken test coefficients per element
    in the order ``chi_x, chi_y, rho_x, rho_y, S_xx, S_yy, S_xy, v``.
    """
    layout = dpg_core.DofLayout(mesh, config)
    test = broken_test_space(mesh, k)
    rule = rule_for_degree(degree)
    t = config.t
    o = layout.offsets
    spaces = layout.spaces
    nloc = test.local_size
    total = 0.0
    for e in range(mesh.n_triangles):
        pts, wq = map_to_physical(rule, mesh.vertices[mesh.triangles[e]])
        tv, tg = _test_fields(test, e, pts, w[e * nloc:(e + 1) * nloc])
        chi, dchi = tv[:, 0:2], tg[:, 0:2]
        rho, drho = tv[:, 2:4], tg[:, 2:4]
        Sxx, Syy, Sxy = tv[:, 4], tv[:, 5], tv[:, 6]
        S = np.stack([np.stack([Sxx, Sxy], -1), np.stack([Sxy, Syy], -1)], -2)
        divS = np.stack([tg[:, 4, 0] + tg[:, 6, 1], tg[:, 6, 0] + tg[:, 5, 1]], -1)
        v, dv = tv[:, 7], tg[:, 7]
        curl_v = _curl(dv)
        eps_chi = 0.5 * (dchi + np.swapaxes(dchi, -1, -2))
        rot_trho_chi = t * _rot(drho) + _rot(dchi)

        F = u_full[8 * e:8 * e + 8]
        psi, eta = F[0:2], F[2:4]
        M = np.array([[F[4], F[6]], [F[6], F[5]]])
        p = F[7]
        cinv_S = config.material.apply_inverse(S)
        integrand = (
            (curl_v - divS) @ psi
            + np.einsum("ab,qab->q", M, cinv_S + eps_chi)
            + (t * curl_v - rho) @ eta
            + p * rot_trho_chi
        )
        # psi/eta trace
        tpsi, dtpsi = _combine(eval_basis(spaces["psi"], e, pts),
                               u_full[o["psi"] + spaces["psi"].dof_map[e]])
        teta, dteta = _combine(eval_basis(spaces["eta"], e, pts),
                               u_full[o["eta"] + spaces["eta"].dof_map[e]])
        integrand = integrand + (
            np.einsum("qc,qc->q", tpsi, divS - curl_v)
            - t * np.einsum("qc,qc->q", teta, curl_v)
            + np.einsum("qab,qab->q", dtpsi, S)
            + (t * _rot(dteta) + _rot(dtpsi)) * v
        )
        # M/p trace
        tM, dtM = _combine(eval_basis(spaces["M"], e, pts), u_full[o["M"] + spaces["M"].dof_map[e]])
        tM = tM.reshape(-1, 2, 2)
        dtM = dtM.reshape(-1, 2, 2, 2)
        divM = np.stack([dtM[:, 0, 0, 0] + dtM[:, 0, 1, 1], dtM[:, 1, 0, 0] + dtM[:, 1, 1, 1]], -1)
        tp, dtp = _combine(eval_basis(spaces["p"], e, pts), u_full[o["p"] + spaces["p"].dof_map[e]])
        tp, curl_tp = tp[:, 0], _curl(dtp[:, 0])
        integrand = integrand - (
            np.einsum("qc,qc->q", chi, divM - curl_tp)
            - t * np.einsum("qc,qc->q", rho, curl_tp)
            + np.einsum("qab,qab->q", dchi, tM)
            + rot_trho_chi * tp
        )
        total += float(wq @ integrand)
    return total


def project_to_test(mesh: Mesh, func_vals, k: int = 3, degree: int = 8) -> np.ndarray:
    """Broken test coefficients of a vector of element fields given as ``func_vals(e, pts) -> (q, 8)``.

    Uses the orthonormality of the reference basis, which makes the
    projection exact for fields of degree ``<= k``.
    """
    test = broken_test_space(mesh, k)
    rule = rule_for_degree(degree)
    nb = test.scalar_size
    out = np.zeros(test.dof_count)
    for e in range(mesh.n_triangles):
        pts, wq = map_to_physical(rule, mesh.vertices[mesh.triangles[e]])
        phi = eval_basis(test, e, pts).values[:, :, 0]
        f = func_vals(e, pts)
        coef = (phi * wq[:, None]).T @ f / (2.0 * mesh.areas[e])
        out[e * 8 * nb:(e + 1) * 8 * nb] = coef.T.ravel()
    return out


def conforming_test_generators(mesh: Mesh, config: ModelConfig, k: int = 3) -> np.ndarray:
    """Columns: broken test coefficients of constrained conforming ``(chi, rho)`` basis functions.

    ``chi`` is continuous P1 with the rotation boundary conditions and ``rho``
    lowest-order Nedelec with vanishing tangential trace where it is clamped.
    """
    chi_space = build_space(SpaceKind.P1C_VECTOR, mesh, "psi")
    rho_space = build_space(SpaceKind.ND0, mesh, "eta")
    cols = []
    for space, offset in ((chi_space, 0), (rho_space, 2)):
        P = space.prolongation.tocsc()
        for j in range(P.shape[1]):
            coeff = P[:, j].toarray().ravel()

            def fields(e, pts, space=space, coeff=coeff, offset=offset):
                vals, _ = _combine(eval_basis(space, e, pts), coeff[space.dof_map[e]])
                out = np.zeros((len(pts), 8))
                out[:, offset:offset + 2] = vals
                return out

            cols.append(project_to_test(mesh, fields, k))
    return np.column_stack(cols)


def moment_trace_generators(layout: dpg_core.DofLayout) -> np.ndarray:
    """Columns: full trial vectors of the constrained ``(M, p)`` trace generators."""
    P = layout.prolongation.tocsr()
    touched = np.unique(P[layout.offsets["M"]:].indices)
    return P[:, touched].toarray()


def lemma_pairing(mesh: Mesh, config: ModelConfig, k: int = 3) -> tuple[np.ndarray, float]:
    """Pairings ``<trace_M(M, p), (chi, rho)>`` for all constrained generator pairs.

    Computed through the assembled global ``B`` (the production code path).
    Returns the pairing matrix and a scale ``max(|V|^T |B| |U|)`` of the inputs.
    """
    layout = dpg_core.DofLayout(mesh, config)
    B = dpg_core.global_b_matrix(mesh, config, k)
    V = conforming_test_generators(mesh, config, k)
    U = moment_trace_generators(layout)
    # b(u, w) with u a pure moment trace equals -<trace_M(M, p), (chi, rho)>
    Z = -(V.T @ (B @ U))
    scale = float(np.max(np.abs(V).T @ (abs(B) @ np.abs(U))))
    return Z, scale


def random_triangles(n: int, rng: np.random.Generator, min_angle_deg: float = 5.0) -> np.ndarray:
    """``n`` random counter-clockwise triangles ``(n, 3, 2)`` in the unit square."""
    out = []
    while len(out) < n:
        tri = rng.random((3, 2))
        d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            tri = tri[[0, 2, 1]]
        ang = []
        for i in range(3):
            a, b = tri[(i + 1) % 3] - tri[i], tri[(i + 2) % 3] - tri[i]
            ang.append(np.degrees(np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1))))
        if min(ang) >= min_angle_deg:
            out.append(tri)
    return np.array(out)


def jacobians_of(triangles: np.ndarray) -> np.ndarray:
    return np.stack([triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0]], axis=-1)
