import csv
import json
import math
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from kornlab.cli import REPORT_SCHEMA, main, parse_boundary, parse_field
from kornlab.errors import ValidationError
from kornlab.geometry import BOX, CYLINDER_SECTOR, DISK


@pytest.fixture
def run(tmp_path):
    def _run(*argv):
        out = tmp_path / "report.json"
        code = main([*argv, "-o", str(out)])
        report = json.loads(out.read_text()) if out.exists() else None
        if out.exists():
            out.unlink()
        return code, report
    return _run


@pytest.fixture
def mesh_file(tmp_path):
    def _make(domain, n, labels="all-t"):
        path = tmp_path / f"{domain}-{n}-{labels}.mesh"
        assert main(["mesh", "gen", "--domain", domain, "--n", str(n), "--labels", labels, "-o", str(path)]) == 0
        return str(path)
    return _make


class TestGrammar:
    def test_rotation_3d(self):
        r = parse_field("rot:sigma=0,0,2;b=0,0,1;omega=1")
        np.testing.assert_allclose(r([1.0, 0, 0]), [0, 1, 1])

    def test_rotation_2d_and_constant(self):
        np.testing.assert_allclose(parse_field("rot:omega=2;b=1,0")([1.0, 0]), [1, 2])
        np.testing.assert_allclose(parse_field("const:1,2,3")([5.0, 5, 5]), [1, 2, 3])

    @pytest.mark.parametrize("text", ["spin:1", "rot:sigma=0,0,0;b=0,0,0", "rot:b=1,x", "rot:omega=1",
                                      "rot:b=1,2;sigma=0,0,1", "const:1", "rot:b=1,2;foo=3"])
    def test_bad_fields(self, text):
        with pytest.raises(ValidationError):
            parse_field(text)

    def test_boundaries(self):
        assert parse_boundary("disk:center=0,0;radius=1").kind == DISK
        assert parse_boundary("box:lo=0,0,0;hi=1,1,1").kind == BOX
        assert parse_boundary("sector:phi1=-1;phi2=1;radius=1;height=2").kind == CYLINDER_SECTOR

    @pytest.mark.parametrize("text", ["torus:r=1", "disk:center=0,0", "disk:center=0,0;radius=abc"])
    def test_bad_boundaries(self, text):
        with pytest.raises(ValidationError):
            parse_boundary(text)


class TestCommands:
    def test_kernel_half_cylinder(self, run, mesh_file, tmp_path):
        path = mesh_file("half-cylinder", 3, "sides-t")
        table = tmp_path / "facets.csv"
        code, rep = run("kernel", "--mesh", path, "--csv", str(table))
        assert code == 0
        res = rep["results"]
        assert res["kernel_dim"] == 1
        axis = res["axes"][0]
        np.testing.assert_allclose(np.abs(axis["direction"]), [0, 0, 1], atol=1e-8)
        assert axis["classification"]["passed"]
        rows = list(csv.reader(table.open()))
        assert rows[0] == ["motion", "facet", "label", "passed", "residual"]

    def test_korn1_square(self, run, mesh_file):
        code, rep = run("constants", "--mesh", mesh_file("square", 8), "--which", "korn1")
        assert code == 0
        assert rep["results"]["runs"][0]["constant"] <= 1.49

    def test_refinement_table(self, run, mesh_file, tmp_path):
        table = tmp_path / "c.csv"
        code, rep = run("constants", "--mesh", mesh_file("square", 2), "--mesh", mesh_file("square", 4),
                        "--which", "korn2", "--csv", str(table))
        assert code == 0
        rows = list(csv.DictReader(table.open()))
        assert [int(r["vertices"]) for r in rows] == [9, 25]
        assert float(rows[1]["constant"]) >= float(rows[0]["constant"]) - 1e-6

    @pytest.mark.parametrize("which", ["korn1-nobc", "poincare", "poincare-ela", "infsup"])
    def test_every_estimator(self, run, mesh_file, which):
        code, rep = run("constants", "--mesh", mesh_file("square", 3), "--which", which)
        assert code == 0
        assert rep["results"]["runs"][0]["lambda"] > 0

    def test_degenerate_constant_is_null(self, run, mesh_file):
        code, rep = run("constants", "--mesh", mesh_file("disk", 2, "all-n"), "--which", "korn1", "--tol", "1e-30")
        assert code == 0
        assert rep["results"]["runs"][0]["constant"] is None

    def test_identity(self, run):
        code, rep = run("identity", "--dim", "3", "--degree", "4", "--trials", "100")
        assert code == 0
        assert rep["results"]["max_residual"] <= 1e-12

    def test_flow_circle(self, run, tmp_path):
        trace = tmp_path / "trace.csv"
        code, rep = run("flow", "--field", "rot:omega=1;b=0,0", "--start", "1,0", "--T", repr(2 * math.pi),
                        "--dt", "1e-3", "--boundary", "disk:center=0,0;radius=1", "--csv", str(trace))
        assert code == 0
        assert rep["results"]["passed"] and rep["results"]["max_deviation"] <= 1e-8
        assert trace.read_text().startswith("t,x1,x2,signed_distance\n")

    def test_solve(self, run, mesh_file, tmp_path):
        path = mesh_file("square", 4)
        export = tmp_path / "u.csv"
        code, rep = run("solve", "--mesh", path, "--load", "manufactured:seed=2", "--export", str(export))
        assert code == 0
        assert rep["results"]["recovery_error"] <= 1e-8
        assert len(export.read_text().splitlines()) == 26
        code, rep = run("solve", "--mesh", path, "--load", "rot:omega=1;b=0.5,0")
        assert rep["results"]["max_displacement"] <= 1e-10

    def test_mesh_gen_report(self, tmp_path):
        mesh, report = tmp_path / "m.mesh", tmp_path / "r.json"
        assert main(["mesh", "gen", "--domain", "cube", "--n", "1", "-o", str(mesh), "--report", str(report)]) == 0
        res = json.loads(report.read_text())["results"]
        assert (res["vertices"], res["cells"], res["boundary_facets"]) == (8, 6, 12)


class TestReports:
    def test_schema_and_finiteness(self, run, mesh_file):
        _, rep = run("kernel", "--mesh", mesh_file("disk", 2, "all-n"))
        jsonschema.validate(rep, REPORT_SCHEMA)
        text = json.dumps(rep, allow_nan=False)  # raises on NaN or infinity
        assert "Infinity" not in text

    def test_deterministic_except_timing(self, run, mesh_file):
        path = mesh_file("cube", 2, "top-bottom-t")
        reports = [run("constants", "--mesh", path, "--which", "poincare", "--seed", "3")[1] for _ in range(2)]
        for r in reports:
            r.pop("timing_ms")
        assert json.dumps(reports[0], sort_keys=True) == json.dumps(reports[1], sort_keys=True)

    def test_digest_tracks_mesh(self, run, mesh_file):
        d1 = run("kernel", "--mesh", mesh_file("square", 2))[1]["input_digest"]
        d2 = run("kernel", "--mesh", mesh_file("square", 3))[1]["input_digest"]
        assert d1 != d2


class TestExitCodes:
    def test_missing_mesh(self, run, tmp_path, capsys):
        code, _ = run("kernel", "--mesh", str(tmp_path / "absent.mesh"))
        assert code == 1
        assert "absent.mesh" in capsys.readouterr().err

    def test_corrupt_mesh(self, run, tmp_path):
        bad = tmp_path / "bad.mesh"
        bad.write_text("{\"dim\": 2}")
        assert run("kernel", "--mesh", str(bad))[0] == 1

    def test_usage_error(self):
        assert main(["constants", "--which", "nope"]) == 1

    def test_numerical_failure(self, run, mesh_file, capsys):
        # every dof of the two-triangle square is fixed by full tangential conditions
        code, rep = run("constants", "--mesh", mesh_file("square", 1), "--which", "korn1")
        assert code == 2 and rep is None
        assert "empty constrained space" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "kornlab", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "kornlab" in out.stdout
