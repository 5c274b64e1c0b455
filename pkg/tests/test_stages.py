import numpy as np
import pytest
from helpers import poisson_sanity, rate_in_h, sin_sin_load

from rmdpg import stages
from rmdpg.mesh import BCKind, build_structured_square, refine_uniform
from rmdpg.model import ModelConfig, example1_polynomial, example3_lshape, problem_poly


class TestPoisson:
    def test_zero_load(self, square32):
        cfg = ModelConfig(1e-2, dict(square32.bc_map), 0.0)
        assert np.all(stages.solve_stage1(square32, cfg) == 0)

    def test_rate(self):
        hs, errs = poisson_sanity(levels=4)
        assert abs(rate_in_h(hs, errs) - 1.0) <= 0.1

    def test_galerkin_orthogonality(self, square32):
        cfg = ModelConfig(1e-2, dict(square32.bc_map), sin_sin_load)
        r = stages.solve_stage1(square32, cfg)
        A = stages.p1_stiffness(square32)
        b = stages.p1_load(square32, cfg.load)
        free = np.setdiff1d(np.arange(square32.n_vertices), stages.clamped_vertices(square32))
        assert np.linalg.norm((A @ r - b)[free]) < 1e-10 * np.linalg.norm(b)

    def test_stiffness_spd(self, square32):
        A = stages.p1_stiffness(square32)
        free = np.setdiff1d(np.arange(square32.n_vertices), stages.clamped_vertices(square32))
        assert np.linalg.eigvalsh(A[free][:, free].toarray()).min() > 0

    def test_constant_load_fast_path(self, square32):
        from rmdpg.model import _as_field

        a = stages.p1_load(square32, _as_field(3.0))
        b = stages.p1_load(square32, lambda x, y: 3.0 + 0 * x)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_empty_gamma_u(self):
        mesh = build_structured_square(2, BCKind.FREE)
        with pytest.raises(stages.ConfigError):
            stages.solve_p1_dirichlet(mesh, np.ones(mesh.n_vertices), stages.clamped_vertices(mesh))

    def test_free_edges_unconstrained(self, lshape):
        # only the two unit segments through the origin are clamped: 3 vertices, all on an axis
        v = lshape.vertices[stages.clamped_vertices(lshape)]
        assert len(v) == 3
        assert np.all(np.abs(v).min(axis=1) < 1e-12)


class TestStage3:
    def test_zero(self, square32):
        cfg = ModelConfig(1e-2, dict(square32.bc_map), 0.0)
        assert np.all(stages.solve_stage3(square32, cfg, np.zeros((32, 2))) == 0)

    def test_gradient_input_reproduced(self, square32, rng):
        # psi_h = grad w with w in P1 vanishing on the boundary and f = 0: u_h = w
        w = np.zeros(square32.n_vertices)
        interior = np.setdiff1d(np.arange(square32.n_vertices), stages.clamped_vertices(square32))
        w[interior] = rng.standard_normal(interior.size)
        psi = np.einsum("mva,mv->ma", stages.p1_gradients(square32), w[square32.triangles])
        cfg = ModelConfig(1e-2, dict(square32.bc_map), 0.0)
        np.testing.assert_allclose(stages.solve_stage3(square32, cfg, psi), w, atol=1e-12)


class TestStage2:
    def test_zero_data(self, square32):
        cfg = ModelConfig(1e-2, dict(square32.bc_map), 0.0)
        res = stages.solve_stage2(square32, cfg, np.zeros(square32.n_vertices))
        assert np.all(res.u_full == 0)

    def test_p_mean_zero(self, square32):
        cfg = ModelConfig(1e-2, dict(square32.bc_map), example1_polynomial(1e-2).f)
        res = stages.solve_stage2(square32, cfg, stages.solve_stage1(square32, cfg))
        p = res.fields["p"]
        assert abs(p @ square32.areas) <= 1e-10 * max(np.abs(p).max(), 1e-300)

    def test_constraints_hold(self):
        mesh = build_structured_square(2, {"bottom": "hc", "right": "sc", "top": "hss", "left": "f"})
        cfg = ModelConfig(0.1, dict(mesh.bc_map), 1.0)
        res = stages.solve_stage2(mesh, cfg, stages.solve_stage1(mesh, cfg))
        P = res.layout.prolongation
        # the solution lies in the range of the constraint prolongation
        coeffs = np.linalg.lstsq(P.toarray(), res.u_full, rcond=None)[0]
        np.testing.assert_allclose(P @ coeffs, res.u_full, atol=1e-12 * np.abs(res.u_full).max())

    def test_stability_small_t(self):
        mesh = refine_uniform(build_structured_square(4), 1)
        norms = {}
        for t in (1e-2, 1e-6):
            cfg = ModelConfig(t, dict(mesh.bc_map), example1_polynomial(t).f)
            res = stages.solve_stage2(mesh, cfg, stages.solve_stage1(mesh, cfg))
            norms[t] = {k: np.abs(v).max() for k, v in res.fields.items()}
        for key in ("psi", "M", "p", "eta"):
            assert norms[1e-6][key] <= 10 * max(norms[1e-2][key], 1e-12), key


class TestPipeline:
    def test_zero_refinements(self):
        recs, sol = stages.run_pipeline(problem_poly(1e-2), 0)
        assert len(recs) == 1
        assert sol.mesh.n_triangles == 32

    def test_uniform_quadruples(self):
        recs, _ = stages.run_pipeline(problem_poly(1e-2), 2)
        assert [r.n_triangles for r in recs] == [32, 128, 512]
        assert recs[2].eta["eta2"] < recs[1].eta["eta2"] < recs[0].eta["eta2"]

    def test_adaptive_lshape(self):
        recs, _ = stages.run_pipeline(example3_lshape(1e-3), 4, adaptive=True)
        n = [r.n_triangles for r in recs]
        assert all(a < b < 4 * a for a, b in zip(n, n[1:]))

    def test_negative_levels(self):
        with pytest.raises(stages.ConfigError):
            stages.run_pipeline(problem_poly(1e-2), -1)

    def test_solver_diagnostics(self):
        _, sol = stages.run_pipeline(problem_poly(1e-2), 0)
        assert sol.stage2.info.method == "direct"
        assert sol.stage2.info.residual < 1e-10

    def test_csv_format(self):
        recs, _ = stages.run_pipeline(problem_poly(1e-2), 1)
        text = stages.records_to_csv(recs)
        lines = text.splitlines()
        assert lines[0] == ",".join(stages.CSV_COLUMNS)
        assert len(lines) == 3
        row = lines[1].split(",")
        assert row[:4] == ["0", "32", str(recs[0].dofs), "0.01"]
        for cell in row[4:]:
            assert float(cell) == float(f"{float(cell):.17g}")
        assert stages.records_to_csv(recs) == text

    def test_lshape_has_no_errors(self):
        recs, _ = stages.run_pipeline(example3_lshape(1e-3), 0)
        assert "nan" in stages.records_to_csv(recs).splitlines()[1]

    def test_rate_helper(self):
        n = [32, 128, 512, 2048]
        assert stages.convergence_rate(n, [4.0, 2.0, 1.0, 0.5]) == pytest.approx(-0.5)
        assert np.isnan(stages.convergence_rate([32], [1.0]))
