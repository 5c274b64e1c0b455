"""Element kernels and normal equations of the ultraweak DPG scheme.

Test functions ``(chi, rho, S, v)`` live in the broken space of degree ``k``
(default 3) with an orthonormal reference basis per scalar component. Trial
unknowns per element (26 before constraints)::

    0-1   psi      P0 vector          14-16  eta trace   ND0 edges
    2-3   eta      P0 vector          17-22  M trace     RT0 rows, 2*j + r
    4-6   M        P0 sym (xx,yy,xy)  23-25  p trace     P1 vertices
    7     p        P0
    8-13  psi trace P1 vector, 2*v + c

Integrands are written as bilinear combinations of *channels* (value,
d/dx, d/dy of one scalar component). Every element quantity then follows
from a handful of reference moment tables and the element Jacobian, so
kernels are computed once per distinct Jacobian and reused.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespaces import (
    BrokenTestSpace,
    FeSpace,
    ScalarPkBasis,
    SpaceKind,
    broken_test_space,
    build_space,
    prolongation_from_constraints,
)
from .mesh import BCKind, Mesh
from .model import ModelConfig
from .quadrature import rule_for_degree

TEST_COMPONENTS = ("chi_x", "chi_y", "rho_x", "rho_y", "S_xx", "S_yy", "S_xy", "v")
TRIAL_COMPONENTS = (
    "psi_x", "psi_y", "eta_x", "eta_y", "M_xx", "M_yy", "M_xy", "p",
    "tpsi_x", "tpsi_y", "teta_x", "teta_y", "tM_11", "tM_12", "tM_21", "tM_22", "tp",
)
N_TRIAL_LOCAL = 26
FIELD_DOFS = slice(0, 8)
TRACE_DOFS = slice(8, 26)
ORIENTED_LOCAL = np.r_[14:23]  # ND0 and RT0 dofs carry the edge orientation sign
VAL, DX, DY = 0, 1, 2

_TC = {name: i for i, name in enumerate(TEST_COMPONENTS)}
_UC = {name: i for i, name in enumerate(TRIAL_COMPONENTS)}

# debug hook: sign of the (rot(t rho + chi), p) term in the moment trace pairing
_MUTATION = {"rot_p_sign": 1.0}


class SingularGramError(np.linalg.LinAlgError):
    def __init__(self, elements):
        self.elements = list(elements)
        super().__init__(f"element Gram matrix not positive definite on elements {self.elements[:10]}")


@contextlib.contextmanager
def inject_trace_sign_flip():
    """Flip one term of the moment trace pairing (mutation testing only)."""
    _MUTATION["rot_p_sign"] = -1.0
    try:
        yield
    finally:
        _MUTATION["rot_p_sign"] = 1.0


# ------------------------------------------------------------- channel forms
def _tch(name, d):
    return 3 * _TC[name] + d


def _uch(name, d):
    return 3 * _UC[name] + d


def gram_channel_matrix(t: float, t_star: float) -> np.ndarray:
    """24 x 24 matrix ``Q`` with ``(w, w')_V = sum Q[c, c'] (ch_c w, ch_c' w')``.

    The v-term carries ``t_*^2 ||v||^2``; the quotient correction is added
    separately as a rank-one term.
    """
    quantities = []

    def add(weight, **terms):
        vec = np.zeros(24)
        for key, coef in terms.items():
            name, d = key.rsplit("__", 1)
            vec[_tch(name, {"val": VAL, "dx": DX, "dy": DY}[d])] += coef
        quantities.append((weight, vec))

    for c in ("chi_x", "chi_y"):
        add(1.0, **{f"{c}__val": 1.0})
        add(1.0, **{f"{c}__dx": 1.0})
        add(1.0, **{f"{c}__dy": 1.0})
    add(1.0, rho_x__val=1.0)
    add(1.0, rho_y__val=1.0)
    # t^-2 |rot(t rho + chi)|^2 = |rot rho + rot chi / t|^2
    add(1.0, rho_y__dx=1.0, rho_x__dy=-1.0, chi_y__dx=1.0 / t, chi_x__dy=-1.0 / t)
    add(1.0, S_xx__val=1.0)
    add(1.0, S_yy__val=1.0)
    add(2.0, S_xy__val=1.0)
    add(t_star**2, v__val=1.0)
    # Div S - curl v, curl v = (dv/dy, -dv/dx)
    add(1.0, S_xx__dx=1.0, S_xy__dy=1.0, v__dy=-1.0)
    add(1.0, S_xy__dx=1.0, S_yy__dy=1.0, v__dx=1.0)
    add(t**2, v__dy=1.0)
    add(t**2, v__dx=1.0)
    Q = np.zeros((24, 24))
    for w, vec in quantities:
        Q += w * np.outer(vec, vec)
    return Q


def b_channel_matrix(t: float, cinv: np.ndarray) -> np.ndarray:
    """24 x 51 matrix ``Qb`` with ``b(u, w) = sum Qb[c, a] (ch_c w, ch_a u)``."""
    Qb = np.zeros((24, 51))

    def add(test, td, trial, ud, coef):
        Qb[_tch(test, td), _uch(trial, ud)] += coef

    # (psi, curl v - Div S)
    add("v", DY, "psi_x", VAL, 1.0)
    add("S_xx", DX, "psi_x", VAL, -1.0)
    add("S_xy", DY, "psi_x", VAL, -1.0)
    add("v", DX, "psi_y", VAL, -1.0)
    add("S_xy", DX, "psi_y", VAL, -1.0)
    add("S_yy", DY, "psi_y", VAL, -1.0)
    # (M, C^-1 S + eps chi), off-diagonal entries counted twice
    mcomp = ("M_xx", "M_yy", "M_xy")
    scomp = ("S_xx", "S_yy", "S_xy")
    mult = (1.0, 1.0, 2.0)
    for a in range(3):
        for c in range(3):
            if cinv[a, c] != 0.0:
                add(scomp[c], VAL, mcomp[a], VAL, mult[a] * cinv[a, c])
    add("chi_x", DX, "M_xx", VAL, 1.0)
    add("chi_y", DY, "M_yy", VAL, 1.0)
    add("chi_x", DY, "M_xy", VAL, 1.0)
    add("chi_y", DX, "M_xy", VAL, 1.0)
    # (eta, t curl v - rho)
    add("v", DY, "eta_x", VAL, t)
    add("rho_x", VAL, "eta_x", VAL, -1.0)
    add("v", DX, "eta_y", VAL, -t)
    add("rho_y", VAL, "eta_y", VAL, -1.0)
    # (p, rot(t rho + chi))
    add("rho_y", DX, "p", VAL, t)
    add("rho_x", DY, "p", VAL, -t)
    add("chi_y", DX, "p", VAL, 1.0)
    add("chi_x", DY, "p", VAL, -1.0)
    # + <trace_psi(tpsi, teta), (S, v)>
    add("S_xx", DX, "tpsi_x", VAL, 1.0)
    add("S_xy", DY, "tpsi_x", VAL, 1.0)
    add("v", DY, "tpsi_x", VAL, -1.0)
    add("S_xy", DX, "tpsi_y", VAL, 1.0)
    add("S_yy", DY, "tpsi_y", VAL, 1.0)
    add("v", DX, "tpsi_y", VAL, 1.0)
    add("v", DY, "teta_x", VAL, -t)
    add("v", DX, "teta_y", VAL, t)
    add("S_xx", VAL, "tpsi_x", DX, 1.0)
    add("S_xy", VAL, "tpsi_x", DY, 1.0)
    add("S_xy", VAL, "tpsi_y", DX, 1.0)
    add("S_yy", VAL, "tpsi_y", DY, 1.0)
    add("v", VAL, "teta_y", DX, t)
    add("v", VAL, "teta_x", DY, -t)
    add("v", VAL, "tpsi_y", DX, 1.0)
    add("v", VAL, "tpsi_x", DY, -1.0)
    # - <trace_M(tM, tp), (chi, rho)>
    g = _MUTATION["rot_p_sign"]
    add("chi_x", VAL, "tM_11", DX, -1.0)
    add("chi_x", VAL, "tM_12", DY, -1.0)
    add("chi_x", VAL, "tp", DY, 1.0)
    add("chi_y", VAL, "tM_21", DX, -1.0)
    add("chi_y", VAL, "tM_22", DY, -1.0)
    add("chi_y", VAL, "tp", DX, -1.0)
    add("rho_x", VAL, "tp", DY, t)
    add("rho_y", VAL, "tp", DX, -t)
    add("chi_x", DX, "tM_11", VAL, -1.0)
    add("chi_x", DY, "tM_12", VAL, -1.0)
    add("chi_y", DX, "tM_21", VAL, -1.0)
    add("chi_y", DY, "tM_22", VAL, -1.0)
    add("rho_y", DX, "tp", VAL, -g * t)
    add("rho_x", DY, "tp", VAL, g * t)
    add("chi_y", DX, "tp", VAL, -g)
    add("chi_x", DY, "tp", VAL, g)
    return Qb


# --------------------------------------------------------- reference tables
@dataclass(frozen=True)
class ReferenceTables:
    """Moments of the reference P_k basis.

    ``R[b, f, i, j] = int D_b phi_i D_f phi_j``, ``P[b, l, i] = int D_b phi_i m_l``
    with ``D_0 = id, D_1 = d/dx^, D_2 = d/dy^`` and ``m = (1, x^, y^)``;
    ``I[i] = int phi_i``.
    """

    k: int
    R: np.ndarray
    P: np.ndarray
    I: np.ndarray

    @property
    def nb(self) -> int:
        return self.I.size


@lru_cache(maxsize=None)
def reference_tables(k: int, degree: int | None = None) -> ReferenceTables:
    """Tables integrated with a rule of the given degree (default ``2k``, exact)."""
    basis = ScalarPkBasis(k)
    rule = rule_for_degree(2 * k if degree is None else degree)
    vals, grads = basis.eval(rule.points)
    D = np.stack([vals, grads[:, :, 0], grads[:, :, 1]])  # (3, nq, nb)
    w = rule.weights
    R = np.einsum("q,bqi,fqj->bfij", w, D, D)
    x, y = rule.points.T
    mono = np.stack([np.ones_like(x), x, y])
    P = np.einsum("q,bqi,lq->bli", w, D, mono)
    return ReferenceTables(k, R, P, basis.integrals())


# --------------------------------------------------------------- trial basis
def trial_channel_coefficients(J: np.ndarray) -> np.ndarray:
    """Unsigned trial basis in channel form: ``(X, 26, 51, 3)`` over monomials ``(1, x^, y^)``.

    ND0 and RT0 functions are built with orientation sign +1; multiply
    columns :data:`ORIENTED_LOCAL` by the element edge signs.
    """
    X = J.shape[0]
    C = np.zeros((X, N_TRIAL_LOCAL, 51, 3))
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    det = np.linalg.det(J)
    area = 0.5 * np.abs(det)
    # fields
    for k, name in enumerate(TRIAL_COMPONENTS[:8]):
        C[:, k, _uch(name, VAL), 0] = 1.0
    # barycentric functions and their physical gradients
    lam = np.array([[1.0, -1.0, -1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    glam = np.einsum("xab,vb->xva", Jinv_T, np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]))
    for v in range(3):
        for c, name in enumerate(("tpsi_x", "tpsi_y")):
            k = 8 + 2 * v + c
            C[:, k, _uch(name, VAL), :] = lam[v]
            C[:, k, _uch(name, DX), 0] = glam[:, v, 0]
            C[:, k, _uch(name, DY), 0] = glam[:, v, 1]
        k = 23 + v
        C[:, k, _uch("tp", VAL), :] = lam[v]
        C[:, k, _uch("tp", DX), 0] = glam[:, v, 0]
        C[:, k, _uch("tp", DY), 0] = glam[:, v, 1]
    # RT0 sigma_j = c_j (x - a_j) with x - a_j = (x0 - a_j) + J x^
    offsets = np.stack([np.zeros((X, 2)), -J[:, :, 0], -J[:, :, 1]], axis=1)  # x0 - a_j
    edge_len = np.stack([
        np.linalg.norm(J[:, :, 1] - J[:, :, 0], axis=1),
        np.linalg.norm(J[:, :, 1], axis=1),
        np.linalg.norm(J[:, :, 0], axis=1),
    ], axis=1)
    cj = edge_len / (2.0 * area[:, None])
    for j in range(3):
        c = cj[:, j]
        sig = [np.stack([c * offsets[:, j, i], c * J[:, i, 0], c * J[:, i, 1]], axis=1)
               for i in range(2)]
        # ND0: tau = (-sigma_2, sigma_1)
        k = 14 + j
        C[:, k, _uch("teta_x", VAL), :] = -sig[1]
        C[:, k, _uch("teta_x", DY), 0] = -c
        C[:, k, _uch("teta_y", VAL), :] = sig[0]
        C[:, k, _uch("teta_y", DX), 0] = c
        for r in range(2):
            k = 17 + 2 * j + r
            n1, n2 = ("tM_11", "tM_12") if r == 0 else ("tM_21", "tM_22")
            C[:, k, _uch(n1, VAL), :] = sig[0]
            C[:, k, _uch(n1, DX), 0] = c
            C[:, k, _uch(n2, VAL), :] = sig[1]
            C[:, k, _uch(n2, DY), 0] = c
    return C


def _derivative_transforms(J: np.ndarray) -> np.ndarray:
    """(X, 3, 3) maps from reference channels (val, d/dx^, d/dy^) to physical ones."""
    G = np.linalg.inv(J).transpose(0, 2, 1)
    T = np.zeros((J.shape[0], 3, 3))
    T[:, 0, 0] = 1.0
    T[:, 1:, 1:] = G
    return T


def gram_matrices(J: np.ndarray, config: ModelConfig, k: int = 3, degree: int | None = None) -> np.ndarray:
    """Element Gram matrices ``(X, 8 nb, 8 nb)`` of the test inner product."""
    tab = reference_tables(k, degree)
    nb = tab.nb
    X = J.shape[0]
    T = _derivative_transforms(J)
    detJ = np.abs(np.linalg.det(J))
    Q = gram_channel_matrix(config.t, config.t_star).reshape(8, 3, 8, 3)
    Qt = np.einsum("xdb,mdne,xef->xmnbf", T, Q, T, optimize=True)
    G = (Qt.reshape(X * 64, 9) @ tab.R.reshape(9, nb * nb)).reshape(X, 8, 8, nb, nb)
    G = G.transpose(0, 1, 3, 2, 4).reshape(X, 8 * nb, 8 * nb) * detJ[:, None, None]
    if config.quotient_mode:
        # t*^2 ||v - mean v||^2 + |T| (mean v)^2 = t*^2 ||v||^2 + (1 - t*^2) |T| (mean v)^2
        iv = slice(7 * nb, 8 * nb)
        integ = detJ[:, None] * tab.I[None, :]
        area = 0.5 * detJ
        G[:, iv, iv] += (1.0 - config.t_star**2) * np.einsum(
            "x,xi,xj->xij", 1.0 / area, integ, integ
        )
    return 0.5 * (G + G.transpose(0, 2, 1))


def b_matrices(J: np.ndarray, config: ModelConfig, k: int = 3, degree: int | None = None) -> np.ndarray:
    """Unsigned element matrices ``(X, 8 nb, 26)`` of the bilinear form."""
    tab = reference_tables(k, degree)
    nb = tab.nb
    X = J.shape[0]
    T = _derivative_transforms(J)
    detJ = np.abs(np.linalg.det(J))
    Qb = b_channel_matrix(config.t, config.material.inverse_voigt()).reshape(8, 3, 51)
    C = trial_channel_coefficients(J)
    Y = np.einsum("mda,xkal->xmdlk", Qb, C, optimize=True)
    mom = np.einsum("xdb,bli->xdli", T, tab.P) * detJ[:, None, None, None]
    B = np.einsum("xmdlk,xdli->xmik", Y, mom, optimize=True)
    return B.reshape(X, 8 * nb, N_TRIAL_LOCAL)


def load_matrices(J: np.ndarray, k: int = 3, degree: int | None = None) -> np.ndarray:
    """``(X, 8 nb, 2)``: column c is the load for ``grad r_h = e_c``."""
    tab = reference_tables(k, degree)
    nb = tab.nb
    detJ = np.abs(np.linalg.det(J))
    L = np.zeros((J.shape[0], 8 * nb, 2))
    for c in range(2):
        L[:, c * nb:(c + 1) * nb, c] = -detJ[:, None] * tab.I[None, :]
    return L


def element_signs(mesh: Mesh) -> np.ndarray:
    """(M, 26) +-1 factors applied to the unsigned local trial basis."""
    s = np.ones((mesh.n_triangles, N_TRIAL_LOCAL))
    es = mesh.edge_signs
    for j in range(3):
        s[:, 14 + j] = es[:, j]
        s[:, 17 + 2 * j] = es[:, j]
        s[:, 18 + 2 * j] = es[:, j]
    return s


# ---------------------------------------------------------- per-element API
def local_gram(mesh: Mesh, element: int, config: ModelConfig, k: int = 3) -> np.ndarray:
    return gram_matrices(mesh.jacobians[element:element + 1], config, k)[0]


def local_b(mesh: Mesh, element: int, config: ModelConfig, k: int = 3) -> np.ndarray:
    B = b_matrices(mesh.jacobians[element:element + 1], config, k)[0]
    return B * element_signs(mesh)[element][None, :]


def local_load(mesh: Mesh, element: int, grad_r_h, k: int = 3) -> np.ndarray:
    L = load_matrices(mesh.jacobians[element:element + 1], k)[0]
    return L @ np.asarray(grad_r_h, dtype=float)


def dump_element_kernels(mesh: Mesh, config: ModelConfig, elements, k: int = 3) -> str:
    """Debug text dump of element Gram and B matrices.

    Per element and matrix: a line ``element <id> <name> <rows> <cols>``
    followed by one line per row with 17-significant-digit entries.
    """
    lines = []
    for e in elements:
        for name, mat in (("gram", local_gram(mesh, e, config, k)), ("b", local_b(mesh, e, config, k))):
            lines.append(f"element {e} {name} {mat.shape[0]} {mat.shape[1]}")
            lines.extend(" ".join(f"{x:.17g}" for x in row) for row in mat)
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- kernels
class ElementKernels:
    """Optimal-test-function data per distinct element Jacobian.

    For every class: Cholesky factor ``L`` of the Gram matrix,
    ``W = L^-1 B`` and ``Y = L^-1 Lhat`` so that the element normal-equation
    block is ``S W^T W S`` and its right-hand side ``S W^T Y grad r_h``.
    """

    def __init__(self, mesh: Mesh, config: ModelConfig, k: int = 3, chunk: int = 256,
                 degree: int | None = None):
        self.mesh = mesh
        self.config = config
        self.k = k
        self.degree = degree
        J = mesh.jacobians.reshape(-1, 4)
        uniq, inverse = np.unique(J, axis=0, return_inverse=True)
        self.class_of = inverse.ravel()
        self.J = uniq.reshape(-1, 2, 2)
        self.signs = element_signs(mesh)
        X = len(self.J)
        n = 8 * reference_tables(k, degree).nb
        self.W = np.empty((X, n, N_TRIAL_LOCAL))
        self.Y = np.empty((X, n, 2))
        for start in range(0, X, chunk):
            sl = slice(start, min(start + chunk, X))
            G = gram_matrices(self.J[sl], config, k, degree)
            B = b_matrices(self.J[sl], config, k, degree)
            L, dinv = _scaled_cholesky(G, self.class_of, sl.start)
            rhs = np.concatenate([B, load_matrices(self.J[sl], k, degree)], axis=2) * dinv[:, :, None]
            sol = np.linalg.solve(L, rhs)
            self.W[sl] = sol[:, :, :N_TRIAL_LOCAL]
            self.Y[sl] = sol[:, :, N_TRIAL_LOCAL:]
        self.A_ref = np.einsum("xik,xil->xkl", self.W, self.W)
        self.R_ref = np.einsum("xik,xic->xkc", self.W, self.Y)

    @property
    def n_classes(self) -> int:
        return len(self.J)

    def members(self) -> list:
        """Element ids of every Jacobian class, ascending."""
        order = np.argsort(self.class_of, kind="stable")
        bounds = np.searchsorted(self.class_of[order], np.arange(self.n_classes + 1))
        return [order[bounds[x]:bounds[x + 1]] for x in range(self.n_classes)]

    def element_matrix(self, e: int) -> np.ndarray:
        s = self.signs[e]
        return self.A_ref[self.class_of[e]] * np.outer(s, s)

    def element_rhs(self, grad_r: np.ndarray) -> np.ndarray:
        """(M, 26) local right-hand sides for elementwise gradients ``grad_r``."""
        R = self.R_ref[self.class_of]
        return self.signs * np.einsum("mkc,mc->mk", R, grad_r)

    def residual_norms(self, u_local: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
        """Per-element ``||L^-1 (l - B u)||``, the DPG residual in the test norm."""
        out = np.empty(self.mesh.n_triangles)
        for x, els in enumerate(self.members()):
            res = grad_r[els] @ self.Y[x].T - (u_local[els] * self.signs[els]) @ self.W[x].T
            out[els] = np.sqrt(np.einsum("ei,ei->e", res, res))
        return out


def _scaled_cholesky(G, class_of, offset, rtol: float = 1e-14):
    """Cholesky factor of the diagonally equilibrated Gram matrices.

    Returns ``L`` and ``d^-1/2`` with ``D^-1/2 G D^-1/2 = L L^T``. A pivot of
    the equilibrated matrix below ``rtol`` (its diagonal is one) raises
    :class:`SingularGramError` naming the affected elements.
    """
    diag = np.einsum("xii->xi", G)
    if np.any(diag <= 0):
        bad = np.flatnonzero((diag <= 0).any(axis=1)) + offset
        raise SingularGramError(np.flatnonzero(np.isin(class_of, bad)))
    dinv = 1.0 / np.sqrt(diag)
    Gs = G * dinv[:, :, None] * dinv[:, None, :]
    try:
        L = np.linalg.cholesky(Gs)
    except np.linalg.LinAlgError:
        bad = []
        for x in range(G.shape[0]):
            try:
                np.linalg.cholesky(Gs[x])
            except np.linalg.LinAlgError:
                bad.append(x + offset)
        raise SingularGramError(np.flatnonzero(np.isin(class_of, bad))) from None
    piv = np.einsum("xii->xi", L) ** 2
    bad = np.flatnonzero(piv.min(axis=1) < rtol) + offset
    if bad.size:
        raise SingularGramError(np.flatnonzero(np.isin(class_of, bad)))
    return L, dinv


# ------------------------------------------------------------------ layout
class DofLayout:
    """Global numbering of the trial unknowns and the constraint prolongation.

    Fields come first (8 per element), then trace generators: psi (2 per
    vertex), eta (per edge), M (2 per edge), p (per vertex).
    """

    def __init__(self, mesh: Mesh, config: ModelConfig):
        self.mesh = mesh
        self.config = config
        M, V, E = mesh.n_triangles, mesh.n_vertices, mesh.n_edges
        self.n_fields = 8 * M
        self.offsets = {
            "fields": 0,
            "psi": self.n_fields,
            "eta": self.n_fields + 2 * V,
            "M": self.n_fields + 2 * V + E,
            "p": self.n_fields + 2 * V + 3 * E,
        }
        self.n_total = self.n_fields + 3 * V + 3 * E
        self.spaces = {
            "psi": build_space(SpaceKind.P1C_VECTOR, mesh, "psi"),
            "eta": build_space(SpaceKind.ND0, mesh, "eta"),
            "M": build_space(SpaceKind.RT0_ROWS_TENSOR, mesh, "moment"),
            "p": build_space(SpaceKind.P1C_SCALAR, mesh, "p"),
        }

    @cached_property
    def local_to_global(self) -> np.ndarray:
        """(M, 26) global ids of the local trial dofs."""
        m = self.mesh
        fields = np.arange(m.n_triangles)[:, None] * 8 + np.arange(8)[None, :]
        o = self.offsets
        return np.hstack([
            fields,
            o["psi"] + self.spaces["psi"].dof_map,
            o["eta"] + self.spaces["eta"].dof_map,
            o["M"] + self.spaces["M"].dof_map,
            o["p"] + self.spaces["p"].dof_map,
        ])

    @cached_property
    def linked_eta_edges(self) -> np.ndarray:
        """Boundary edges on the clamped-deflection part where psi_t stays free."""
        return self.mesh.edges_of_kind(BCKind.SOFT_CLAMPED, BCKind.SOFT_SIMPLE_SUPPORT)

    @cached_property
    def trace_prolongation(self) -> sp.csr_matrix:
        """``P`` over the trace block (rows: all trace dofs, columns: free ones).

        On soft clamped and soft simple support edges the tangential eta dof
        is eliminated through ``t eta_t = -mean(psi_t)`` along the edge.
        """
        m = self.mesh
        t = self.config.t
        Ppsi = self.spaces["psi"].prolongation
        linked = self.linked_eta_edges
        eta_constraints = list(self.spaces["eta"].constraints)
        from .fespaces import Constraint

        eta_constraints += [Constraint((int(e),), np.eye(1)) for e in linked]
        Peta = prolongation_from_constraints(m.n_edges, eta_constraints)
        blocks = [Ppsi, Peta, self.spaces["M"].prolongation, self.spaces["p"].prolongation]
        P = sp.block_diag(blocks, format="lil")
        if linked.size:
            row0 = 2 * m.n_vertices
            for e in linked:
                a, b = m.edges[e]
                tan = m.edge_tangents[e]
                row = -0.5 / t * (
                    tan[0] * (Ppsi[2 * a] + Ppsi[2 * b]) + tan[1] * (Ppsi[2 * a + 1] + Ppsi[2 * b + 1])
                )
                row = sp.csr_matrix(row)
                P[row0 + e, : Ppsi.shape[1]] = row
        return P.tocsr()

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        return sp.block_diag([sp.identity(self.n_fields), self.trace_prolongation], format="csr")

    @property
    def n_free(self) -> int:
        return self.prolongation.shape[1]

    @cached_property
    def constrained_dofs(self) -> np.ndarray:
        P = self.prolongation
        return np.flatnonzero(np.diff(P.indptr) == 0)

    @cached_property
    def pin_dof(self) -> int | None:
        """Free trace column fixing the additive constant of p in quotient mode."""
        if not self.config.quotient_mode:
            return None
        P = self.trace_prolongation
        row = self.offsets["p"] - self.n_fields
        for r in range(row, row + self.mesh.n_vertices):
            cols = P.indices[P.indptr[r]:P.indptr[r + 1]]
            if cols.size:
                return int(cols.min())
        return None

    def field_values(self, u_full: np.ndarray) -> dict:
        F = u_full[: self.n_fields].reshape(-1, 8)
        M = np.stack([np.stack([F[:, 4], F[:, 6]], -1), np.stack([F[:, 6], F[:, 5]], -1)], -2)
        return {"psi": F[:, 0:2], "eta": F[:, 2:4], "M": M, "M_voigt": F[:, 4:7], "p": F[:, 7]}

    def trace_values(self, u_full: np.ndarray) -> dict:
        o = self.offsets
        V, E = self.mesh.n_vertices, self.mesh.n_edges
        return {
            "psi": u_full[o["psi"]:o["psi"] + 2 * V].reshape(V, 2),
            "eta": u_full[o["eta"]:o["eta"] + E],
            "M": u_full[o["M"]:o["M"] + 2 * E].reshape(E, 2),
            "p": u_full[o["p"]:o["p"] + V],
        }


# --------------------------------------------------------- normal equations
@dataclass
class NormalEquations:
    A: sp.csr_matrix
    rhs: np.ndarray
    layout: DofLayout
    kernels: ElementKernels
    condensed: bool
    pin: int | None


def _p1_gradients(mesh: Mesh, r_h: np.ndarray) -> np.ndarray:
    Jinv_T = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)
    vals = np.asarray(r_h)[mesh.triangles]
    ref_grad = np.stack([vals[:, 1] - vals[:, 0], vals[:, 2] - vals[:, 0]], axis=1)
    return np.einsum("mab,mb->ma", Jinv_T, ref_grad)


def _coo_assemble(ids, blocks, n):
    rows = np.repeat(ids, ids.shape[1], axis=1).ravel()
    cols = np.tile(ids, (1, ids.shape[1])).ravel()
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_normal_equations(mesh: Mesh, config: ModelConfig, r_h, *, k: int = 3,
                              condense: bool = False, kernels: ElementKernels | None = None,
                              layout: DofLayout | None = None) -> NormalEquations:
    """Assemble ``P^T (B^T G^-1 B) P`` and ``P^T B^T G^-1 l`` over free dofs.

    With ``condense=True`` the element-local field unknowns are eliminated
    and the system is posed on the free trace dofs only. In quotient mode a
    rank-one term on one p-trace dof removes the constant null direction;
    the solution is shifted to ``(p_h, 1) = 0`` afterwards.
    """
    kernels = kernels or ElementKernels(mesh, config, k)
    layout = layout or DofLayout(mesh, config)
    grad_r = _p1_gradients(mesh, r_h) if r_h is not None else np.zeros((mesh.n_triangles, 2))
    signs = kernels.signs
    ids = layout.local_to_global
    rhs_loc = kernels.element_rhs(grad_r)
    if not condense:
        Aloc = kernels.A_ref[kernels.class_of] * signs[:, :, None] * signs[:, None, :]
        A = _coo_assemble(ids, Aloc, layout.n_total)
        rhs = np.bincount(ids.ravel(), rhs_loc.ravel(), minlength=layout.n_total)
        P = layout.prolongation
        pin = None if layout.pin_dof is None else layout.pin_dof + layout.n_fields
    else:
        cond = _condensation(kernels)
        st = signs[:, TRACE_DOFS]
        Sloc = cond["S"][kernels.class_of] * st[:, :, None] * st[:, None, :]
        tids = ids[:, TRACE_DOFS] - layout.n_fields
        nt = layout.n_total - layout.n_fields
        A = _coo_assemble(tids, Sloc, nt)
        rloc = st * np.einsum("mkc,mc->mk", cond["Rt"][kernels.class_of], grad_r)
        rhs = np.bincount(tids.ravel(), rloc.ravel(), minlength=nt)
        P = layout.trace_prolongation
        pin = layout.pin_dof
    A = (P.T @ A @ P).tocsr()
    rhs = P.T @ rhs
    if pin is not None:
        scale = A.diagonal().mean()
        A = A + sp.csr_matrix(([scale], ([pin], [pin])), shape=A.shape)
    A = 0.5 * (A + A.T)
    A = A.tocsr()
    A.sort_indices()
    return NormalEquations(A, rhs, layout, kernels, condense, pin)


def _condensation(kernels: ElementKernels) -> dict:
    A = kernels.A_ref
    Aff = A[:, FIELD_DOFS, FIELD_DOFS]
    Aft = A[:, FIELD_DOFS, TRACE_DOFS]
    Att = A[:, TRACE_DOFS, TRACE_DOFS]
    R = kernels.R_ref
    sol = np.linalg.solve(Aff, np.concatenate([Aft, R[:, FIELD_DOFS]], axis=2))
    X = sol[:, :, :Aft.shape[2]]
    Z = sol[:, :, Aft.shape[2]:]
    S = Att - np.einsum("xfk,xfl->xkl", Aft, X)
    Rt = R[:, TRACE_DOFS] - np.einsum("xfk,xfc->xkc", Aft, Z)
    return {"S": S, "Rt": Rt, "X": X, "Z": Z}


def recover_fields(kernels: ElementKernels, layout: DofLayout, trace_full: np.ndarray,
                   grad_r: np.ndarray) -> np.ndarray:
    """Element field unknowns from the trace solution (static condensation backsolve)."""
    cond = _condensation(kernels)
    ids = layout.local_to_global[:, TRACE_DOFS] - layout.n_fields
    ut = trace_full[ids] * kernels.signs[:, TRACE_DOFS]
    X = cond["X"][kernels.class_of]
    Z = cond["Z"][kernels.class_of]
    return np.einsum("mfc,mc->mf", Z, grad_r) - np.einsum("mfk,mk->mf", X, ut)


# ------------------------------------------------------------------ solvers
@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0


def solve_spd(A: sp.csr_matrix, b: np.ndarray, method: str = "direct", tol: float = 1e-10,
              maxiter: int | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Solve a sparse SPD system; direct factorization or Jacobi-preconditioned CG."""
    if method not in ("direct", "cg"):
        raise ValueError(f"unknown solver {method!r}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(method, 0.0)
    if method == "direct":
        lu = spla.splu(A.tocsc(), permc_spec="COLAMD", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        x = lu.solve(b)
        return x, SolveInfo("direct", float(np.linalg.norm(A @ x - b) / bnorm))
    if method == "cg":
        d = A.diagonal()
        Minv = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        its = [0]

        def count(_):
            its[0] += 1

        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=Minv, maxiter=maxiter or 20 * A.shape[0],
                          callback=count)
        res = float(np.linalg.norm(A @ x - b) / bnorm)
        if info != 0:
            raise np.linalg.LinAlgError(f"CG did not converge (relative residual {res:.2e})")
        return x, SolveInfo("cg", res, its[0])


def residual_norms(kernels: ElementKernels, layout: DofLayout, u_full: np.ndarray,
                   r_h) -> np.ndarray:
    """Per-element DPG residual estimator ``eta_2(T)``."""
    grad_r = _p1_gradients(layout.mesh, r_h)
    u_local = u_full[layout.local_to_global]
    return kernels.residual_norms(u_local, grad_r)


def global_b_matrix(mesh: Mesh, config: ModelConfig, k: int = 3) -> sp.csr_matrix:
    """Sparse ``B`` mapping full trial coefficients to broken test coefficients."""
    layout = DofLayout(mesh, config)
    J = mesh.jacobians
    B = b_matrices(J, config, k) * element_signs(mesh)[:, None, :]
    n = B.shape[1]
    rows = (np.arange(mesh.n_triangles)[:, None] * n + np.arange(n)[None, :])
    rows = np.repeat(rows[:, :, None], N_TRIAL_LOCAL, axis=2)
    cols = np.repeat(layout.local_to_global[:, None, :], n, axis=1)
    return sp.csr_matrix((B.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(mesh.n_triangles * n, layout.n_total))
