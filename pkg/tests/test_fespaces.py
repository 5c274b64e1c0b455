import numpy as np
import pytest

from rmdpg.fespaces import (
    BoundaryConditionError,
    SpaceKind,
    broken_test_space,
    build_space,
    eval_basis,
)
from rmdpg.mesh import BCKind, build_lshape, build_structured_square, refine_nvb


def interior_point(mesh, e, rng, n=5):
    lam = rng.dirichlet(np.ones(3), size=n) * 0.8 + 0.2 / 3
    return lam @ mesh.vertices[mesh.triangles[e]]


def edge_points(mesh, edge, s=(0.2, 0.5, 0.9)):
    a, b = mesh.vertices[mesh.edges[edge]]
    return np.array([a + si * (b - a) for si in s])


def global_field(space, coeff, e, pts):
    ev = eval_basis(space, e, pts)
    return np.einsum("qic,i->qc", ev.values, coeff[space.dof_map[e]])


class TestCounts:
    def test_p1_all_dirichlet(self, square2):
        V = build_space(SpaceKind.P1C_SCALAR, square2, "all")
        assert len(V.constrained_dofs) == 4
        assert V.free_count == 0

    def test_rt0_no_bc(self, square2):
        V = build_space(SpaceKind.RT0, square2)
        assert V.dof_count == 5
        assert V.free_count == 5

    def test_nd0_zero_tangential(self, square2):
        V = build_space(SpaceKind.ND0, square2, "all")
        assert V.free_count == 1

    @pytest.mark.parametrize("kind,per_element", [
        (SpaceKind.P0_SCALAR, 1), (SpaceKind.P0_VECTOR, 2), (SpaceKind.P0_SYMTENSOR, 3),
        (SpaceKind.P1C_SCALAR, 3), (SpaceKind.RT0, 3), (SpaceKind.ND0, 3),
    ])
    def test_local_sizes(self, square32, kind, per_element):
        V = build_space(kind, square32)
        assert V.local_size == per_element
        assert V.dof_count == V.free_count + len(V.constrained_dofs)

    def test_broken_k3(self, square32):
        T = broken_test_space(square32, 3)
        assert T.block_sizes() == {"chi": 20, "rho": 20, "S": 30, "v": 10}
        assert T.local_size == 80
        assert T.dof_count == 80 * square32.n_triangles

    def test_broken_k1(self, square2):
        # 8 scalar components times 3 linear basis functions
        T = broken_test_space(square2, 1)
        assert T.block_sizes() == {"chi": 6, "rho": 6, "S": 9, "v": 3}
        assert T.local_size == 24

    def test_broken_invalid(self, square2):
        with pytest.raises(ValueError):
            broken_test_space(square2, 0)

    def test_discontinuous_rejects_bc(self, square2):
        with pytest.raises(BoundaryConditionError):
            build_space(SpaceKind.P0_SCALAR, square2, "all")

    def test_incompatible_role(self, square2):
        with pytest.raises(BoundaryConditionError):
            build_space(SpaceKind.RT0, square2, "psi")

    def test_deterministic_numbering(self, lshape):
        a = build_space(SpaceKind.RT0_ROWS_TENSOR, lshape, "moment")
        b = build_space(SpaceKind.RT0_ROWS_TENSOR, lshape, "moment")
        np.testing.assert_array_equal(a.dof_map, b.dof_map)
        assert (a.prolongation != b.prolongation).nnz == 0


class TestBasis:
    def test_rt0_div(self, rng):
        m = refine_nvb(build_lshape(1), [0, 2])
        V = build_space(SpaceKind.RT0, m)
        for e in range(m.n_triangles):
            ev = eval_basis(V, e, interior_point(m, e, rng))
            expect = m.edge_signs[e] * m.local_edge_lengths[e] / m.areas[e]
            np.testing.assert_allclose(ev.div, np.broadcast_to(expect, ev.div.shape), rtol=1e-13)

    def test_nd0_rot_constant(self, rng, square32):
        V = build_space(SpaceKind.ND0, square32)
        for e in range(square32.n_triangles):
            rot = eval_basis(V, e, interior_point(square32, e, rng)).rot
            np.testing.assert_allclose(rot, np.broadcast_to(rot[0], rot.shape), atol=1e-12)

    def test_p1_partition_of_unity(self, rng, square32):
        V = build_space(SpaceKind.P1C_SCALAR, square32)
        for e in range(square32.n_triangles):
            vals = eval_basis(V, e, interior_point(square32, e, rng)).values[:, :, 0]
            np.testing.assert_allclose(vals.sum(axis=1), 1.0, rtol=1e-14)

    @pytest.mark.parametrize("kind,component", [
        (SpaceKind.RT0, "normal"), (SpaceKind.ND0, "tangent"),
    ])
    def test_conformity(self, rng, kind, component):
        m = refine_nvb(build_structured_square(2), [1, 4])
        V = build_space(kind, m)
        coeff = rng.standard_normal(V.dof_count)
        vec = m.edge_normals if component == "normal" else m.edge_tangents
        for edge in np.flatnonzero(~m.is_boundary_edge):
            pts = edge_points(m, edge)
            t0, t1 = m.edge_triangles[edge]
            f0 = global_field(V, coeff, t0, pts) @ vec[edge]
            f1 = global_field(V, coeff, t1, pts) @ vec[edge]
            np.testing.assert_allclose(f0, f1, atol=1e-12)

    def test_rt0_normal_component_on_own_edge(self, square2):
        V = build_space(SpaceKind.RT0, square2)
        for edge in range(square2.n_edges):
            for t in square2.edge_triangles[edge]:
                if t < 0:
                    continue
                j = int(np.flatnonzero(square2.tri_edges[t] == edge)[0])
                vals = eval_basis(V, t, edge_points(square2, edge)).values[:, j]
                # unit normal component (flux |E|) along the global edge normal
                np.testing.assert_allclose(vals @ square2.edge_normals[edge], 1.0, rtol=1e-13)

    @pytest.mark.parametrize("kind", [SpaceKind.P1C_SCALAR, SpaceKind.P1C_VECTOR, SpaceKind.RT0,
                                      SpaceKind.ND0, SpaceKind.RT0_ROWS_TENSOR])
    def test_derivatives_match_fd(self, rng, kind):
        m = build_structured_square(2)
        V = build_space(kind, m)
        h = 1e-6
        for e in (0, 5):
            x = interior_point(m, e, rng, 1)
            ev = eval_basis(V, e, x)
            for a, d in enumerate(np.eye(2)):
                fd = (eval_basis(V, e, x + h * d).values - eval_basis(V, e, x - h * d).values) / (2 * h)
                np.testing.assert_allclose(ev.grads[..., a], fd, rtol=1e-6, atol=1e-7)

    def test_broken_derivatives_match_fd(self, rng, square2):
        T = broken_test_space(square2, 3)
        x = interior_point(square2, 1, rng, 1)
        ev = eval_basis(T, 1, x)
        h = 1e-6
        for a, d in enumerate(np.eye(2)):
            fd = (eval_basis(T, 1, x + h * d).values - eval_basis(T, 1, x - h * d).values) / (2 * h)
            np.testing.assert_allclose(ev.grads[..., a], fd, rtol=1e-6, atol=1e-6)


class TestConstraints:
    def _boundary_values(self, V, coeff, m, edge):
        t = m.edge_triangles[edge][0]
        return global_field(V, coeff, t, edge_points(m, edge))

    @pytest.mark.parametrize("kind", ["hc", "sc", "hss", "sss", "f"])
    def test_psi_role(self, rng, kind):
        m = build_structured_square(2, kind if kind != "f" else {"bottom": "hc", "right": "f",
                                                                  "top": "f", "left": "f"})
        V = build_space(SpaceKind.P1C_VECTOR, m, "psi")
        coeff = V.prolongation @ rng.standard_normal(V.free_count)
        for edge in np.flatnonzero(m.is_boundary_edge):
            vals = self._boundary_values(V, coeff, m, edge)
            n, t = m.edge_normals[edge], m.edge_tangents[edge]
            k = m.edge_bc[edge]
            if k is BCKind.HARD_CLAMPED:
                np.testing.assert_allclose(vals, 0, atol=1e-14)
            elif k is BCKind.SOFT_CLAMPED:
                np.testing.assert_allclose(vals @ n, 0, atol=1e-14)
            elif k is BCKind.HARD_SIMPLE_SUPPORT:
                np.testing.assert_allclose(vals @ t, 0, atol=1e-14)

    @pytest.mark.parametrize("kind", ["sc", "hss", "sss", "f"])
    def test_moment_role(self, rng, kind):
        bc = {"bottom": "hc", "right": kind, "top": kind, "left": kind}
        m = build_structured_square(2, bc)
        V = build_space(SpaceKind.RT0_ROWS_TENSOR, m, "moment")
        coeff = V.prolongation @ rng.standard_normal(V.free_count)
        for edge in np.flatnonzero(m.is_boundary_edge):
            Mn = self._boundary_values(V, coeff, m, edge).reshape(-1, 2, 2) @ m.edge_normals[edge]
            n, t = m.edge_normals[edge], m.edge_tangents[edge]
            k = m.edge_bc[edge]
            if k is BCKind.SOFT_CLAMPED:
                np.testing.assert_allclose(Mn @ t, 0, atol=1e-13)
            elif k is BCKind.HARD_SIMPLE_SUPPORT:
                np.testing.assert_allclose(Mn @ n, 0, atol=1e-13)
            elif k in (BCKind.SOFT_SIMPLE_SUPPORT, BCKind.FREE):
                np.testing.assert_allclose(Mn, 0, atol=1e-13)

    def test_p_role_zero_on_free(self, lshape):
        V = build_space(SpaceKind.P1C_SCALAR, lshape, "p")
        free_verts = lshape.vertices_of_edges(lshape.edges_of_kind(BCKind.FREE))
        np.testing.assert_array_equal(np.sort(V.constrained_dofs), np.sort(free_verts))

    def test_eta_role(self):
        m = build_structured_square(2, {"bottom": "hc", "right": "sc", "top": "hss", "left": "f"})
        V = build_space(SpaceKind.ND0, m, "eta")
        expect = m.edges_of_kind(BCKind.HARD_CLAMPED, BCKind.HARD_SIMPLE_SUPPORT)
        np.testing.assert_array_equal(np.sort(V.constrained_dofs), np.sort(expect))
