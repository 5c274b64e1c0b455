import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmdpg.quadrature import (
    MAX_DEGREE,
    GeometryError,
    UnsupportedDegreeError,
    gauss_legendre,
    map_to_physical,
    monomial_integral,
    rule_for_degree,
)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("d", [0, 1])
def test_centroid_rule(d):
    rule = rule_for_degree(d)
    assert len(rule) == 1
    assert rule.weights[0] == pytest.approx(0.5)
    np.testing.assert_allclose(rule.points[0], [1 / 3, 1 / 3])


@pytest.mark.parametrize("d", range(MAX_DEGREE + 1))
def test_rule_invariants(d):
    rule = rule_for_degree(d)
    assert rule.exact_degree >= d
    assert np.all(rule.weights > 0)
    assert np.all(rule.barycentric >= -1e-15)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    x, y = rule.points.T
    for a in range(rule.exact_degree + 1):
        for b in range(rule.exact_degree + 1 - a):
            exact = monomial_integral(a, b)
            assert abs(rule.weights @ (x**a * y**b) - exact) <= 1e-13 * exact


def test_x3y2():
    # 3! 2! / 7! = 12 / 5040 = 1/420 (confirmed symbolically below)
    import sympy as sp

    x_, y_ = sp.symbols("x y")
    exact = sp.integrate(sp.integrate(x_**3 * y_**2, (y_, 0, 1 - x_)), (x_, 0, 1))
    assert exact == sp.Rational(1, 420)
    rule = rule_for_degree(5)
    x, y = rule.points.T
    assert rule.weights @ (x**3 * y**2) == pytest.approx(1 / 420, rel=1e-14)
    assert monomial_integral(3, 2) == pytest.approx(1 / 420, rel=1e-15)


def test_unsupported_degree():
    with pytest.raises(UnsupportedDegreeError):
        rule_for_degree(MAX_DEGREE + 1)
    with pytest.raises(UnsupportedDegreeError):
        rule_for_degree(-1)


def test_identity_map():
    rule = rule_for_degree(6)
    pts, w = map_to_physical(rule, REF)
    np.testing.assert_allclose(pts, rule.points, atol=1e-16)
    np.testing.assert_allclose(w, rule.weights, rtol=1e-15)


def test_scaled_weights():
    rule = rule_for_degree(4)
    _, w = map_to_physical(rule, 2.0 * REF)
    np.testing.assert_allclose(w, 4.0 * rule.weights, rtol=1e-15)


def test_degenerate():
    with pytest.raises(GeometryError):
        map_to_physical(rule_for_degree(2), np.array([[0.0, 0], [1, 1], [2, 2]]))


def _exact_affine_integral(tri, coeffs):
    """Exact integral of sum c_ab x^a y^b over an affine triangle via the pullback to the reference."""
    import sympy as sp

    s, r = sp.symbols("s r")
    # sp.Rational of a float is its exact binary value; nsimplify would round
    # coordinates such as 6e-11 to nearby "nice" rationals
    v = [[sp.Rational(float(c)) for c in p] for p in tri]
    j00, j01 = v[1][0] - v[0][0], v[2][0] - v[0][0]
    j10, j11 = v[1][1] - v[0][1], v[2][1] - v[0][1]
    x = v[0][0] + j00 * s + j01 * r
    y = v[0][1] + j10 * s + j11 * r
    expr = sum(sp.Rational(int(c)) * x**a * y**b for (a, b), c in coeffs.items())
    poly = sp.Poly(sp.expand(expr), s, r)
    total = sum(c * sp.factorial(i) * sp.factorial(j) / sp.factorial(i + j + 2)
                for (i, j), c in poly.terms())
    return float(total * abs(j00 * j11 - j01 * j10))


@settings(max_examples=20, deadline=None)
@given(
    st.integers(1, 12),
    st.lists(st.floats(-2, 2, allow_nan=False, width=32), min_size=6, max_size=6),
    st.data(),
)
def test_random_affine_polynomials(d, corners, data):
    tri = np.array(corners, dtype=float).reshape(3, 2)
    det = np.linalg.det(np.column_stack([tri[1] - tri[0], tri[2] - tri[0]]))
    if abs(det) < 1e-2:
        return
    coeffs = {}
    for a in range(d + 1):
        for b in range(d + 1 - a):
            coeffs[(a, b)] = data.draw(st.integers(-5, 5))
    rule = rule_for_degree(d)
    pts, w = map_to_physical(rule, tri)
    val = sum(c * w @ (pts[:, 0] ** a * pts[:, 1] ** b) for (a, b), c in coeffs.items())
    exact = _exact_affine_integral(tri, coeffs)
    scale = sum(abs(c) * w @ (np.abs(pts[:, 0]) ** a * np.abs(pts[:, 1]) ** b)
                for (a, b), c in coeffs.items())
    assert abs(val - exact) <= 1e-12 * max(scale, 1e-300)


def test_affine_oracle_tiny_coordinate():
    # a corner at x=6e-11 once made the oracle round the triangle itself
    tri = np.array([[1.0, 0.0], [6.142650971208141e-11, 1.0], [0.0, 0.0]])
    coeffs = {(0, 0): 0, (1, 0): 0, (0, 1): 1}
    pts, w = map_to_physical(rule_for_degree(1), tri)
    assert w @ pts[:, 1] == pytest.approx(_exact_affine_integral(tri, coeffs), rel=1e-14)


@pytest.mark.parametrize("d", [0, 5, 20])
def test_gauss_legendre(d):
    x, w = gauss_legendre(d)
    for k in range(d + 1):
        assert w @ x**k == pytest.approx(1.0 / (k + 1), rel=1e-14)
