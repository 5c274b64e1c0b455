"""Scaled Reissner--Mindlin problem data and benchmark solutions.

The scaled model reads ``-div q = f``, ``M + C eps(psi) = 0``,
``Div M - q = 0`` and ``q = t^-2 (grad u - psi)`` with shear factor
``kappa G = 1``. All field callables take coordinate arrays ``x, y`` of the
same shape and return arrays with trailing component axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .mesh import BCKind, Mesh, build_lshape, build_structured_square


# ----------------------------------------------------------------- material
@dataclass(frozen=True)
class MaterialTensor:
    """Constitutive tensor on symmetric 2x2 tensors.

    ``PlaneStress`` realizes ``C A = D ((1 - nu) A + nu tr(A) I)`` with
    ``D = E / (12 (1 - nu^2))``.
    """

    mode: str = "Identity"
    E: float = 1.0
    nu: float = 0.0

    def __post_init__(self):
        if self.mode not in ("Identity", "PlaneStress"):
            raise ValueError(f"unknown material mode {self.mode!r}")
        if self.mode == "PlaneStress":
            if not (-1.0 < self.nu <= 0.5):
                raise ValueError("Poisson ratio must lie in (-1, 1/2]")
            if self.E <= 0:
                raise ValueError("Young modulus must be positive")

    @classmethod
    def identity(cls) -> "MaterialTensor":
        return cls("Identity")

    @classmethod
    def plane_stress(cls, E: float, nu: float) -> "MaterialTensor":
        return cls("PlaneStress", E, nu)

    @property
    def D(self) -> float:
        return self.E / (12.0 * (1.0 - self.nu**2))

    def apply(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        if self.mode == "Identity":
            return A.copy()
        tr = A[..., 0, 0] + A[..., 1, 1]
        return self.D * ((1 - self.nu) * A + self.nu * tr[..., None, None] * np.eye(2))

    def apply_inverse(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        if self.mode == "Identity":
            return S.copy()
        tr = S[..., 0, 0] + S[..., 1, 1]
        k = self.nu / (1 + self.nu)
        return (S - k * tr[..., None, None] * np.eye(2)) / (self.D * (1 - self.nu))

    def inverse_voigt(self) -> np.ndarray:
        """3x3 matrix of ``C^-1`` acting on ``(xx, yy, xy)`` components."""
        cols = []
        for comp in range(3):
            S = np.zeros((2, 2))
            if comp == 0:
                S[0, 0] = 1.0
            elif comp == 1:
                S[1, 1] = 1.0
            else:
                S[0, 1] = S[1, 0] = 1.0
            R = self.apply_inverse(S)
            cols.append([R[0, 0], R[1, 1], R[0, 1]])
        return np.array(cols).T


# ------------------------------------------------------------------- config
def _as_field(load) -> Callable:
    if callable(load):
        return load
    value = float(load)

    def constant(x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, value)

    constant.constant_value = value
    return constant


@dataclass(frozen=True)
class ModelConfig:
    """Thickness, material, load and boundary partition of one plate problem.

    ``bc`` maps boundary segment names to :class:`BCKind`. ``domain_scale``
    is reserved for domain-size scaled test norms and must stay 1.
    """

    t: float
    bc: dict
    load: Callable = field(default=None)
    material: MaterialTensor = field(default_factory=MaterialTensor.identity)
    domain_scale: float = 1.0
    kappa_G: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not (0.0 < self.t <= 1.0):
            raise ValueError("thickness t must lie in (0, 1]")
        object.__setattr__(self, "bc", {k: BCKind.parse(v) for k, v in self.bc.items()})
        object.__setattr__(self, "load", _as_field(0.0 if self.load is None else self.load))
        if not any(k.clamps_deflection for k in self.bc.values()):
            raise ValueError("the clamped-deflection boundary part must be non-empty")
        if self.domain_scale != 1.0:
            raise NotImplementedError("domain-size scaling is reserved and not implemented")

    @property
    def kinds(self) -> set:
        return set(self.bc.values())

    @property
    def t_star(self) -> float:
        if self.kinds & {BCKind.SOFT_CLAMPED, BCKind.SOFT_SIMPLE_SUPPORT}:
            return self.t
        return 1.0

    @property
    def quotient_mode(self) -> bool:
        return BCKind.FREE not in self.kinds

    def gamma_u_segments(self) -> list:
        return sorted(s for s, k in self.bc.items() if k.clamps_deflection)

    def with_load(self, load) -> "ModelConfig":
        return ModelConfig(self.t, self.bc, load, self.material, self.domain_scale)


# ---------------------------------------------------------- exact solutions
@dataclass(frozen=True)
class ExactSolution:
    name: str
    u: Callable
    grad_u: Callable
    psi: Callable
    grad_psi: Callable
    M: Callable
    f: Callable
    q: Optional[Callable] = None
    valid_bc: tuple = ()


def _sym_grad(grad_psi):
    def eps(x, y):
        G = grad_psi(x, y)
        return 0.5 * (G + np.swapaxes(G, -1, -2))

    return eps


def example1_polynomial(t: float) -> ExactSolution:
    """Manufactured hard-clamped solution on the unit square.

    With ``g(s) = s^3 (s-1)^3`` and ``phi = g(x) g(y) / 3``: ``psi = grad phi``,
    ``M = -eps(psi)``, ``u = phi - t^2 lap(phi)`` and ``f = lap^2(phi)``.
    """
    g = [Polynomial([0, 0, 0, -1, 3, -3, 1])]  # s^3 (s - 1)^3
    for _ in range(4):
        g.append(g[-1].deriv())

    def G(k, s):
        return g[k](s)

    def phi(x, y):
        return G(0, x) * G(0, y) / 3

    def lap(x, y):
        return (G(2, x) * G(0, y) + G(0, x) * G(2, y)) / 3

    def grad_lap(x, y):
        return np.stack([G(3, x) * G(0, y) + G(1, x) * G(2, y),
                         G(2, x) * G(1, y) + G(0, x) * G(3, y)], axis=-1) / 3

    def psi(x, y):
        return np.stack([G(1, x) * G(0, y), G(0, x) * G(1, y)], axis=-1) / 3

    def hess(x, y):
        xx = G(2, x) * G(0, y)
        xy = G(1, x) * G(1, y)
        yy = G(0, x) * G(2, y)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2) / 3

    def u(x, y):
        return phi(x, y) - t**2 * lap(x, y)

    def grad_u(x, y):
        return psi(x, y) - t**2 * grad_lap(x, y)

    def M(x, y):
        return -hess(x, y)

    def f(x, y):
        return (G(4, x) * G(0, y) + 2 * G(2, x) * G(2, y) + G(0, x) * G(4, y)) / 3

    def q(x, y):
        return -grad_lap(x, y)

    return ExactSolution("poly", u, grad_u, psi, hess, M, f, q, (BCKind.HARD_CLAMPED,))


def kirchhoff_coefficient(m, n):
    """Fourier coefficient of the simply supported Kirchhoff plate under unit load."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    return 4 * (1 - np.cos(m * np.pi)) * (1 - np.cos(n * np.pi)) / (
        np.pi**6 * m * n * (m**2 + n**2) ** 2
    )


def example2_kirchhoff(t: float, n_terms: int = 100) -> ExactSolution:
    """Hard simple support solution built from the Kirchhoff series.

    ``n_terms`` is the per-direction cutoff: modes ``1 <= m, n <= n_terms``
    (``n_terms**2`` terms, even modes vanish). ``u = u_K - t^2 lap(u_K)``,
    ``psi = grad u_K``, ``M = -eps(psi)``, ``q = -grad lap(u_K)``, ``f = 1``.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be positive")
    k = np.arange(1, n_terms + 1, 2, dtype=float)  # odd modes only
    A = kirchhoff_coefficient(k[:, None], k[None, :])
    kp = k * np.pi
    lap_factor = -(kp[:, None] ** 2 + kp[None, :] ** 2)

    def series(x, y, fx, fy, weight):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xs = np.broadcast_to(x, shape).ravel()
        ys = np.broadcast_to(y, shape).ravel()
        X = fx(np.outer(xs, kp))
        Y = fy(np.outer(ys, kp))
        return np.einsum("pm,pm->p", X @ weight, Y).reshape(shape)

    S, C = np.sin, np.cos

    def uK(x, y):
        return series(x, y, S, S, A)

    def lap_uK(x, y):
        return series(x, y, S, S, A * lap_factor)

    def grad_uK(x, y):
        return np.stack([series(x, y, C, S, A * kp[:, None]),
                         series(x, y, S, C, A * kp[None, :])], axis=-1)

    def hess_uK(x, y):
        xx = series(x, y, S, S, -A * kp[:, None] ** 2)
        xy = series(x, y, C, C, A * kp[:, None] * kp[None, :])
        yy = series(x, y, S, S, -A * kp[None, :] ** 2)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)

    def grad_lap_uK(x, y):
        B = A * lap_factor
        return np.stack([series(x, y, C, S, B * kp[:, None]),
                         series(x, y, S, C, B * kp[None, :])], axis=-1)

    def u(x, y):
        return uK(x, y) - t**2 * lap_uK(x, y)

    def grad_u(x, y):
        return grad_uK(x, y) - t**2 * grad_lap_uK(x, y)

    def M(x, y):
        return -hess_uK(x, y)

    def q(x, y):
        return -grad_lap_uK(x, y)

    f = _as_field(1.0)
    sol = ExactSolution("kirchhoff", u, grad_u, grad_uK, hess_uK, M, f, q,
                        (BCKind.HARD_SIMPLE_SUPPORT,))
    return sol


# ----------------------------------------------------------------- problems
@dataclass(frozen=True)
class Problem:
    name: str
    mesh: Mesh
    config: ModelConfig
    exact: Optional[ExactSolution] = None


def _square_problem(name, t, kind, exact, n):
    mesh = build_structured_square(n, kind)
    config = ModelConfig(t, dict(mesh.bc_map), exact.f)
    return Problem(name, mesh, config, exact)


def problem_poly(t: float, n: int = 4) -> Problem:
    return _square_problem("poly", t, BCKind.HARD_CLAMPED, example1_polynomial(t), n)


def problem_kirchhoff(t: float, n_terms: int = 100, n: int = 4) -> Problem:
    return _square_problem("kirchhoff", t, BCKind.HARD_SIMPLE_SUPPORT,
                           example2_kirchhoff(t, n_terms), n)


def example3_lshape(t: float = 1e-3, n: int = 1) -> Problem:
    """L-shaped plate, unit load; edges at the re-entrant corner clamped, rest free."""
    mesh = build_lshape(n)
    config = ModelConfig(t, dict(mesh.bc_map), 1.0)
    return Problem("lshape", mesh, config, None)
