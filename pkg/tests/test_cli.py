import json

import numpy as np
import pytest

from rmdpg import cli


def write_config(path, **overrides):
    cfg = {"problem": "poly", "t": 1e-2, "n_refinements": 0,
           "output": {"csv": "out.csv"}}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_defaults(self):
        cfg = cli.parse_run_config({"problem": "lshape", "t": 1e-3})
        assert cfg.adaptive is False and cfg.theta == 0.5
        assert cfg.quadrature_degrees == {"dpg": 6, "error": 14}
        assert cfg.solver == {"method": "direct", "tol": 1e-10}

    @pytest.mark.parametrize("data", [
        {"problem": "poly", "t": 1e-2, "bogus": 1},
        {"problem": "poly"},
        {"problem": "plate", "t": 1e-2},
        {"problem": "poly", "t": 0.0},
        {"problem": "poly", "t": 1e-2, "n_refinements": -1},
        {"problem": "poly", "t": 1e-2, "theta": 0.0},
        {"problem": "poly", "t": 1e-2, "solver": {"method": "lu"}},
        {"problem": "poly", "t": 1e-2, "solver": {"precond": "amg"}},
        {"problem": "poly", "t": 1e-2, "quadrature_degrees": {"dpg": 4}},
        {"problem": "poly", "t": 1e-2, "quadrature_degrees": {"error": 30}},
        {"problem": "poly", "t": 1e-2, "domain_scale": 2.0},
        {"problem": "poly", "t": 1e-2, "adaptive": "yes"},
        [1, 2],
    ])
    def test_rejected(self, data):
        with pytest.raises(cli.UsageError):
            cli.parse_run_config(data)

    def test_bc_override(self):
        cfg = cli.parse_run_config({"problem": "poly", "t": 0.1, "bc": {"left": "f"}})
        pb = cli.build_problem(cfg)
        assert not pb.config.quotient_mode
        assert pb.exact is None

    def test_unknown_segment(self):
        cfg = cli.parse_run_config({"problem": "poly", "t": 0.1, "bc": {"north": "f"}})
        with pytest.raises(cli.UsageError):
            cli.build_problem(cfg)

    def test_material(self):
        cfg = cli.parse_run_config({"problem": "lshape", "t": 0.1,
                                    "material": {"mode": "PlaneStress", "E": 2.0, "nu": 0.3}})
        assert cli.build_problem(cfg).config.material.mode == "PlaneStress"


class TestRun:
    def test_zero_levels(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        code, out, _ = run(["run", "--config", cfg, "--out-dir", tmp_path / "o"], capsys)
        assert code == 0
        rows = (tmp_path / "o" / "out.csv").read_text().splitlines()
        assert len(rows) == 2
        assert "rate" not in out
        assert (tmp_path / "o" / "out.timings.csv").exists()

    def test_rates_printed(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", n_refinements=2,
                           output={"csv": "r.csv", "estimator_dump": "eta.txt", "solution": "s.npz"})
        code, out, _ = run(["run", "--config", cfg, "--out-dir", tmp_path, "--threads", 1], capsys)
        assert code == 0
        names = [ln.split()[1] for ln in out.splitlines() if ln.startswith("rate")]
        assert names == ["err_u_H1", "err_psi_L2", "err_M_L2", "eta"]
        assert len((tmp_path / "eta.txt").read_text().splitlines()) == 512
        sol = np.load(tmp_path / "s.npz")
        assert sol["triangles"].shape == (512, 3)
        assert sol["M_h"].shape == (512, 2, 2)

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["run", "--config", tmp_path / "nope.json"], capsys)
        assert code == 2
        assert "cannot read config" in err

    def test_invalid_json(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("{not json")
        code, _, err = run(["run", "--config", tmp_path / "c.json"], capsys)
        assert code == 2 and "invalid JSON" in err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", colour="blue")
        code, _, err = run(["run", "--config", cfg], capsys)
        assert code == 2 and "colour" in err

    def test_numerical_failure(self, tmp_path, capsys, monkeypatch):
        from rmdpg import dpg_core

        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError("factorization failed")

        monkeypatch.setattr(dpg_core, "solve_spd", broken)
        cfg = write_config(tmp_path / "c.json")
        code, _, err = run(["run", "--config", cfg, "--out-dir", tmp_path], capsys)
        assert code == 1 and "numerical failure" in err

    def test_thread_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("RMDPG_THREADS", "1")
        cfg = write_config(tmp_path / "c.json")
        assert run(["run", "--config", cfg, "--out-dir", tmp_path], capsys)[0] == 0

    def test_bad_threads(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert run(["run", "--config", cfg, "--threads", 0], capsys)[0] == 2

    def test_usage_error_from_argparse(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["run"])
        assert info.value.code == 2


class TestVerify:
    def test_pass(self, capsys):
        code, out, _ = run(["verify"], capsys)
        assert code == 0
        assert out.count("PASS") == 4

    def test_injected_sign_flip(self, capsys):
        code, out, _ = run(["verify", "--inject-sign-flip"], capsys)
        assert code == 1
        assert "FAIL trace orthogonality" in out


CSV_TEXT = """level,n_triangles,dofs,t,err_u_H1,err_psi_L2,err_M_L2,eta1,eta2,eta3,eta
0,32,451,0.01,0.001,0.002,0.003,0.1,0.01,0.001,0.2
1,128,1795,0.01,0.0005,0.001,0.0015,0.05,0.005,0.0005,0.1
"""


class TestPlotdata:
    @pytest.fixture
    def csv_path(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text(CSV_TEXT)
        return p

    def blocks(self, text):
        out = {}
        for block in text.strip().split("\n\n\n"):
            lines = block.splitlines()
            out[lines[0]] = np.array([[float(x) for x in ln.split()] for ln in lines[1:]])
        return out

    def test_two_point_series(self, csv_path, capsys):
        code, out, _ = run(["plotdata", csv_path], capsys)
        assert code == 0
        b = self.blocks(out)
        assert b["# series err_u_H1"].shape == (2, 2)
        assert b["# series eta"].shape == (2, 2)

    @pytest.mark.parametrize("slope", [-0.5, -1 / 3])
    def test_guide_slope(self, csv_path, capsys, slope):
        _, out, _ = run(["plotdata", csv_path, "--slope", slope], capsys)
        for name, pts in self.blocks(out).items():
            if name.startswith("# guide"):
                s = np.log(pts[1, 1] / pts[0, 1]) / np.log(pts[1, 0] / pts[0, 0])
                assert s == pytest.approx(slope, rel=1e-14)

    def test_anchor_at_last_point(self, csv_path, capsys):
        _, out, _ = run(["plotdata", csv_path], capsys)
        b = self.blocks(out)
        np.testing.assert_array_equal(b["# guide err_M_L2 slope -0.5"][-1], b["# series err_M_L2"][-1])

    def test_idempotent(self, csv_path, tmp_path, capsys):
        run(["plotdata", csv_path, "-o", tmp_path / "a.dat"], capsys)
        run(["plotdata", csv_path, "-o", tmp_path / "b.dat"], capsys)
        assert (tmp_path / "a.dat").read_bytes() == (tmp_path / "b.dat").read_bytes()

    def test_nan_columns_skipped(self, tmp_path, capsys):
        p = tmp_path / "l.csv"
        p.write_text(CSV_TEXT.replace("0.001,0.002,0.003", "nan,nan,nan").replace(
            "0.0005,0.001,0.0015", "nan,nan,nan"))
        _, out, _ = run(["plotdata", p], capsys)
        assert "series err_u_H1" not in out and "series eta" in out

    @pytest.mark.parametrize("text", ["", "a,b\n1,2\n", CSV_TEXT + "2,512,x\n", CSV_TEXT + "2,3\n"])
    def test_malformed(self, tmp_path, capsys, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        assert run(["plotdata", p], capsys)[0] == 2


class TestMeshInfo:
    def test_from_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", problem="lshape")
        code, out, _ = run(["mesh-info", "--config", cfg, "--refine", 1,
                            "--write", tmp_path / "m.txt"], capsys)
        assert code == 0
        info = dict(ln.split(" ", 1) for ln in out.splitlines())
        assert info["triangles"] == "24"
        assert float(info["area"]) == pytest.approx(3.0)
        code, out2, _ = run(["mesh-info", "--mesh", tmp_path / "m.txt"], capsys)
        assert code == 0 and "triangles 24" in out2

    def test_needs_one_source(self, capsys):
        assert run(["mesh-info"], capsys)[0] == 2

    def test_missing_mesh(self, tmp_path, capsys):
        assert run(["mesh-info", "--mesh", tmp_path / "none.txt"], capsys)[0] == 2
