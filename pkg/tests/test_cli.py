import csv
import json

import numpy as np
import pytest

from carnot_torus import cli
from carnot_torus.torus import GridFunction


def run(tmp_path, command, config=None, *extra, name="cfg.json"):
    argv = [command, "--out", str(tmp_path)]
    if config is not None:
        path = tmp_path / name
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    code = cli.main(argv + list(extra))
    report = json.loads((tmp_path / f"{command}.json").read_text())
    return code, report


def test_group_check_ok(tmp_path):
    code, rep = run(tmp_path, "group-check", {"cases": 200})
    assert code == 0 and rep["status"] == "ok" and rep["results"]["failed"] == []
    names = {c["name"] for c in rep["results"]["checks"]}
    assert {"associativity", "haar jacobian", "hoermander rank", "reduce round trip"} <= names
    assert rep["version"].startswith(cli.__version__)


def test_group_check_abelian_note(tmp_path):
    code, rep = run(tmp_path, "group-check", None, "--group", "abelian")
    assert code == 0 and any("commutative" in n for n in rep["results"]["notes"])


def test_group_check_bad_descriptor(tmp_path, capsys):
    desc = {"step": 2, "layer_dims": [2, 1],
            "brackets": [{"i": 1, "j": 2, "m": 3, "c": 1.0}, {"i": 2, "j": 1, "m": 3, "c": 1.0}]}
    (tmp_path / "bad.json").write_text(json.dumps(desc))
    code = cli.main(["group-check", "--out", str(tmp_path), "--group", str(tmp_path / "bad.json")])
    assert code == 2
    assert "bracket antisymmetry" in capsys.readouterr().err
    rep = json.loads((tmp_path / "group-check.json").read_text())
    assert rep["failed_invariant"] == "bracket antisymmetry"


def test_failed_check_exit_one(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "group_invariants",
                        lambda g, cases, seed: [{"name": "x", "value": 1.0, "tolerance": 0.0, "passed": False}])
    code, rep = run(tmp_path, "group-check")
    assert code == 1 and rep["status"] == "failed" and rep["results"]["failed"] == ["x"]


@pytest.mark.parametrize("cfg, where", [({"cases": -1}, "cases"), ({"bogus": 1}, "<root>"),
                                        ({"cases": "ten"}, "cases")])
def test_config_errors(tmp_path, cfg, where):
    code, rep = run(tmp_path, "group-check", cfg)
    assert code == 2 and rep["status"] == "invalid" and where in rep["message"]


def test_expression_error(tmp_path):
    code, rep = run(tmp_path, "norms", {"function": "foo(x1)", "resolution": [8, 8, 8]})
    assert code == 2 and "unknown function" in rep["message"]


def test_cfl_refusal(tmp_path):
    code, rep = run(tmp_path, "solve-backward", {"grid": [8, 8, 8], "T": 0.05, "dt": 0.01, "probes": 0})
    assert code == 3 and rep["status"] == "refused"
    assert 0 < rep["suggested_dt"] < 0.01


def test_mollify_csv_and_determinism(tmp_path):
    cfg = {"function": "tri(x1)", "resolution": [16, 16, 8], "levels": [1, 2, 3], "pair_budget": 2000}
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    assert run(a, "mollify", cfg)[0] == 0
    assert run(b, "mollify", cfg)[0] == 0
    with open(a / "mollify_table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps", "sup_error", "seminorm_ratio"] and len(rows) == 4
    errs = [float(r[1]) for r in rows[1:]]
    assert errs[0] > errs[1] > errs[2]
    for f in ("mollify_table.csv", "mollify.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_solve_backward_constants(tmp_path):
    cfg = {"grid": [8, 8, 8], "T": 0.05, "b": None, "f": 0, "zT": 2.5, "probes": 0, "rho0": 1}
    code, rep = run(tmp_path, "solve-backward", cfg)
    assert code == 0
    r = rep["results"]
    assert r["sup_norm"] == pytest.approx(2.5, abs=1e-8)
    assert all(p["residual"] <= 1e-8 for p in r["duality"] if p["xi"] == 1)
    from carnot_torus.solvers import SpaceTimeFunction
    sol = SpaceTimeFunction.load(tmp_path / "solution.bin")
    assert np.allclose(sol.values, 2.5, atol=1e-8)


def test_solve_backward_abelian_fourier(tmp_path):
    cfg = {"group": "abelian", "grid": [16, 16], "T": 0.05, "b": None, "f": "cos(2*pi*x1)",
           "zT": "sin(2*pi*x2)+cos(2*pi*(x1+x2))", "probes": 0, "rho0": 1}
    code, rep = run(tmp_path, "solve-backward", cfg)
    assert code == 0
    dt = rep["results"]["cfl"]["dt"]
    assert rep["results"]["fourier_delta"] <= 3 * ((1 / 16) ** 2 + dt)


def test_solve_fpk_and_duality(tmp_path):
    code, rep = run(tmp_path, "solve-fpk", {"grid": [8, 8, 8], "T": 0.05})
    assert code == 0 and abs(rep["results"]["mass_drift"]) < 1e-10
    code, rep = run(tmp_path, "duality", {"grids": [[8, 8, 8], [16, 16, 16]]})
    assert code == 0
    lv = rep["results"]["levels"]
    assert lv[0]["pairs"][0]["residual"] <= 1e-8 and lv[1]["pairs"][0]["residual"] <= 1e-8
    assert lv[1]["reduction"][2] >= 3.0


def test_norms_and_d1(tmp_path):
    code, rep = run(tmp_path, "norms", {"function": "tri(x1)", "resolution": [16, 16, 8], "pair_budget": 2000,
                                        "measure": {"points": [[0.1, 0.2, 0.3]], "weights": [1.0]},
                                        "dictionary_size": 4})
    assert code == 0 and rep["results"]["dual_norm"]["value"] == pytest.approx(1.0)
    code, rep = run(tmp_path, "d1", {"mu": {"points": [[0.1, 0.2, 0.3]], "weights": [1.0]},
                                     "nu": {"points": [[0.1, 0.2, 0.3]], "weights": [1.0]}})
    assert code == 0 and rep["results"]["d1"] == pytest.approx(0.0, abs=1e-12)


def test_heat_kernel_threads_invariant(tmp_path):
    cfg = {"t": [0.5], "points": [[0, 0, 0]], "sde": {"N": 4000, "dt": 0.05}}
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    _, ra = run(a, "heat-kernel", cfg, "--threads", "1")
    _, rb = run(b, "heat-kernel", cfg, "--threads", "3")
    assert ra["results"] == rb["results"]


def test_grid_file_input(tmp_path, h1):
    G = GridFunction.from_function(h1, lambda X: np.cos(2 * np.pi * X[..., 0]), (8, 8, 8))
    G.save(tmp_path / "f.bin")
    code, rep = run(tmp_path, "norms", {"function": {"grid": str(tmp_path / "f.bin")}, "pair_budget": 500})
    assert code == 0 and rep["results"]["holder"]["norm"] >= 1.0
