import io
import json
import subprocess
import sys

import pytest

from conftest import EXP_BILINEAR
from voxrelax.cli import EXIT_MODEL, EXIT_OK, EXIT_SOLVE, EXIT_USAGE, main
from voxrelax.lp import read_lp, solve

LINEAR = "var x, y in [0, 3]; min -x - 2*y; s.t. x + y <= 4; x - y >= -2;"


@pytest.fixture
def model_file(tmp_path):
    def write(text, name="model.txt"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_relax_default_vr(capsys, model_file):
    code, out, _ = run(capsys, "relax", "--mode", "vr", "--nb", "9", "--nmax", "5", "--nv", "5",
                       model_file(EXP_BILINEAR))
    assert code == EXIT_OK
    res = json.loads(out)
    for key in ("mode", "bound", "primal", "gap", "n_constraints", "n_aux_vars", "times"):
        assert key in res
    assert res["mode"] == "vr" and res["voxelizer"] == "projection"
    assert res["primal"] == pytest.approx(1.0)
    assert 1.0 <= res["bound"] < 1.2
    assert res["gap"] == pytest.approx(res["bound"] - 1.0)


def test_relax_base_linear_is_exact(capsys, model_file):
    code, out, _ = run(capsys, "relax", "--mode", "base", model_file(LINEAR))
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["bound"] == pytest.approx(-7.0)
    assert res["rows_by_tag"] == {"model-linear": 2}


def test_relax_quadtree(capsys, model_file):
    code, out, _ = run(capsys, "relax", "--voxelizer", "quadtree", "--grid", "5", "--no-primal",
                       model_file(EXP_BILINEAR))
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["voxelizer"] == "quadtree" and res["primal"] == "nan"
    assert res["bound"] >= 1.0


def test_relax_outputs(capsys, model_file, tmp_path):
    lp, geo, js = tmp_path / "m.lp", tmp_path / "g.json", tmp_path / "r.json"
    code, out, _ = run(capsys, "relax", "--export-lp", str(lp), "--dump-geometry", str(geo),
                       "--print-bounds", "--out", str(js), model_file(EXP_BILINEAR))
    assert code == EXIT_OK
    res = json.loads(out)
    assert json.loads(js.read_text()) == res
    assert res["bounds"]["x"] == [0.0, 1.0]
    # the LP is stored as a minimization, so a max model's bound is its negated value
    assert solve(read_lp(lp.read_text())).objective == pytest.approx(-res["bound"], abs=1e-9)
    records = json.loads(geo.read_text())
    assert records and all("boxes" in r and "corners" in r for r in records)


def test_relax_stdin(monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO(LINEAR))
    code, out, _ = run(capsys, "relax", "--mode", "fp", "--no-primal", "-")
    assert code == EXIT_OK
    assert json.loads(out)["bound"] == pytest.approx(-7.0)


def test_relax_error_codes(capsys, caplog, model_file, tmp_path):
    assert run(capsys, "relax", str(tmp_path / "missing.txt"))[0] == EXIT_MODEL
    code, out, _ = run(capsys, "relax", model_file("var x in [0, 1]; min x^y;"))
    assert code == EXIT_MODEL and out == ""
    assert "variable exponent (line 1, column 23)" in caplog.text
    assert run(capsys, "relax", model_file("var x in [0, inf]; var y in [0,1]; min x*y;"))[0] == EXIT_MODEL
    code, out, _ = run(capsys, "relax", "--no-primal", model_file("var x in [0, 1]; min x; s.t. x >= 2;"))
    assert code == EXIT_SOLVE
    assert json.loads(out)["status"] == "infeasible"


@pytest.mark.parametrize("argv", [
    [], ["nope"], ["relax"], ["relax", "--mode", "exact", "m.txt"], ["relax", "--nv", "0", "m.txt"],
    ["bench", "--sizes", "1,2"], ["bench", "--seeds", "a-b"], ["verify", "--perturb", "nope"],
])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_USAGE


def test_bench_unknown_method(capsys):
    assert run(capsys, "bench", "--seeds", "1", "--methods", "fp,exact")[0] == EXIT_USAGE


def test_bench_small(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--sizes", "5,8,4", "--seeds", "1-2", "--restarts", "3",
                       "--methods", "fp,base,vr", "--out", str(tmp_path))
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["n_instances"] == 2 and res["failures"] == []
    assert set(res["mean_remaining_gap"]) == {"fp", "base", "vr"}
    assert (tmp_path / "results.csv").exists() and (tmp_path / "report.json").exists()


def test_bench_empty_seed_list(capsys):
    code, out, _ = run(capsys, "bench", "--seeds", "")
    assert code == EXIT_OK
    assert json.loads(out)["n_instances"] == 0


def test_gen(capsys, tmp_path):
    code, out, _ = run(capsys, "gen", "--size", "3,4,2", "--seed", "5")
    assert code == EXIT_OK and out.startswith("# poly-3-4-2-s5")
    code, out, _ = run(capsys, "gen", "--size", "3,4,2", "--seed", "5", "--json")
    assert json.loads(out)["seed"] == 5
    dest = tmp_path / "inst.txt"
    run(capsys, "gen", "--size", "3,4,2", "--out", str(dest))
    assert "var x1" in dest.read_text()


def test_verify_passes(capsys):
    code, out, err = run(capsys, "verify")
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["passed"] and len(res["checks"]) == 4
    assert err.count("PASS") == 4


@pytest.mark.parametrize("name", ["chain_row", "r_one", "r_limit", "tree_range"])
def test_verify_perturbed_fails(capsys, name):
    code, out, err = run(capsys, "verify", "--perturb", name)
    assert code == EXIT_SOLVE
    assert not json.loads(out)["passed"]
    assert "FAIL" in err


def test_console_entry_point(tmp_path):
    p = tmp_path / "lin.txt"
    p.write_text(LINEAR)
    proc = subprocess.run([sys.executable, "-m", "voxrelax", "relax", "--mode", "base", "--no-primal", str(p)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["bound"] == pytest.approx(-7.0)
