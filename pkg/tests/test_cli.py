import csv
import json
import math

import pytest

from magdbar import cli
from magdbar.errors import ConvergenceError

FOCK = {"kind": "radial_power", "m": 2}


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def invoke(tmp_path, task, cfg, out="out", extra=()):
    path = write_config(tmp_path, cfg)
    code = cli.main([task, "--config", str(path), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[0][len("# config_hash="):], list(csv.DictReader(lines[1:]))


def test_oracle_table(tmp_path):
    code, out = invoke(tmp_path, "oracle", {"weight": {"kind": "zero"}, "params": {"nmax": 5}})
    assert code == 0
    h, rows = read_csv(out / "oracle.csv")
    assert float(rows[3]["sigma"]) == pytest.approx(0.707107, abs=1e-6)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == h and manifest["status"] == "ok"
    assert {"numpy", "scipy", "python", "magdbar"} <= set(manifest["versions"])


def test_spectrum_zero_weight_dirichlet(tmp_path):
    R = math.pi / 2
    cfg = {"weight": {"kind": "zero"}, "grid": {"R": R, "h": R / 78}, "params": {"k": 1}}
    code, out = invoke(tmp_path, "spectrum", cfg)
    assert code == 0
    _, rows = read_csv(out / "eigenvalues.csv")
    assert float(rows[0]["lambda"]) == pytest.approx(0.5, rel=1e-3)


def test_spectrum_is_byte_reproducible(tmp_path, capfd):
    cfg = {"weight": FOCK, "grid": {"R": 3, "h": 0.2}, "params": {"k": 3}, "seed": 4}
    assert invoke(tmp_path, "spectrum", cfg, "a")[0] == 0
    assert invoke(tmp_path, "spectrum", cfg, "b")[0] == 0
    a = (tmp_path / "a" / "eigenvalues.csv").read_bytes()
    assert a == (tmp_path / "b" / "eigenvalues.csv").read_bytes()
    assert "progress 1.000" in capfd.readouterr().err
    _, rows = read_csv(tmp_path / "a" / "eigenvalues.csv")
    assert [r["lambda_index"] for r in rows] == ["1", "2", "3"]
    assert all(1.9 < float(r["lambda"]) < 2.1 for r in rows)


def test_seed_flag_overrides_config_and_changes_hash(tmp_path):
    cfg = {"weight": {"kind": "zero"}, "params": {"nmax": 2}}
    invoke(tmp_path, "oracle", cfg, "a")
    invoke(tmp_path, "oracle", cfg, "b", ["--seed", "7"])
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert mb["seed"] == 7 and ma["seed"] == 0
    assert ma["config_hash"] != mb["config_hash"]


def test_singvals(tmp_path):
    cfg = {"weight": FOCK, "grid": {"R": 3, "h": 0.2}, "params": {"k": 2}}
    code, out = invoke(tmp_path, "singvals", cfg)
    assert code == 0
    _, rows = read_csv(out / "singular_values.csv")
    for r in rows:
        assert float(r["sigma"]) == pytest.approx(float(r["lambda"]) ** -0.5, rel=1e-12)


def test_solve_monomial_and_csv_datum(tmp_path):
    cfg = {"weight": FOCK, "grid": {"R": 4, "h": 0.2}, "params": {"datum": "monomial:1"}}
    code, out = invoke(tmp_path, "solve", cfg)
    assert code == 0
    cert = json.loads((out / "solution_certificate.json").read_text())
    assert cert["residual"] <= 1e-8
    assert cert["ratio_norm_sq"] == pytest.approx(0.5, rel=0.06)  # coarse grid
    assert "config_hash=" + cert["config_hash"] in (out / "solution.csv").read_text().splitlines()[0]

    from magdbar import build_grid
    from magdbar.grid import write_field_csv
    from magdbar.solver import datum_preset
    from magdbar.weights import RadialPowerWeight

    g = build_grid(4, 0.2)
    write_field_csv(datum_preset("monomial:1", RadialPowerWeight(2), g), tmp_path / "g.csv")
    cfg["params"]["datum"] = "g.csv"  # resolved next to the config file
    code, out2 = invoke(tmp_path, "solve", cfg, "out2")
    assert code == 0
    cert2 = json.loads((out2 / "solution_certificate.json").read_text())
    assert cert2["norm_v"] == pytest.approx(cert["norm_v"], rel=1e-8)


def test_probe(tmp_path):
    cfg = {"weight": FOCK, "grid": {"radii": [2, 3], "h": 0.2}, "params": {"Lambda": 3, "band": [2, 0.2]}}
    code, out = invoke(tmp_path, "probe", cfg)
    assert code == 0
    rep = json.loads((out / "probe_report.json").read_text())
    assert rep["verdict"] in ("compact-consistent", "noncompact-consistent", "inconclusive")
    assert len(rep["band_counts"]) == 2
    _, rows = read_csv(out / "eigenvalues.csv")
    assert {float(r["R"]) for r in rows} == {2.0, 3.0}


def test_diagnose_one_variable(tmp_path):
    cfg = {"weight": FOCK, "params": {"centers": [[0, 0], [1, 1]], "quad_h": 0.02}}
    code, out = invoke(tmp_path, "diagnose", cfg)
    assert code == 0
    _, rows = read_csv(out / "diagnostics.csv")
    assert all(float(r["value"]) == pytest.approx(20 * math.pi, rel=0.02) for r in rows)
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    assert summary["doubling"]["in_class_W"]


def test_diagnose_two_variables(tmp_path):
    cfg = {"weight": {"kind": "decoupled", "factors": [FOCK, FOCK]},
           "params": {"points": [[0, 0, 1, 1], [2, 0, 0, -1]], "delta": 0.5}}
    code, out = invoke(tmp_path, "diagnose", cfg)
    assert code == 0
    _, rows = read_csv(out / "diagnostics.csv")
    assert len(rows) == 4
    assert all(float(r["Veff"]) == pytest.approx(0.5 * math.sqrt(2), abs=1e-12) for r in rows)


def test_multivar_small(tmp_path):
    cfg = {"weight": {"kind": "decoupled", "factors": [FOCK, FOCK]}, "grid": {"R": 1.5, "h": 0.3},
           "params": {"k": 1, "tol": 1e-6}}
    code, out = invoke(tmp_path, "multivar", cfg)
    assert code == 0
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    assert summary["tensor_oracle"][0] == 2.0
    assert 1.0 < summary["eigenvalues"][0] < 3.0


@pytest.mark.parametrize(
    "task,cfg",
    [
        ("spectrum", {"weight": {"kind": "banana"}, "grid": {"R": 1, "h": 0.5}}),
        ("spectrum", {"weight": {"kind": "radial_power"}, "grid": {"R": 1, "h": 0.5}}),
        ("spectrum", {"weight": FOCK, "grid": {"R": math.pi / 2, "h": 0.02}}),
        ("spectrum", {"weight": FOCK}),
        ("spectrum", {"weight": FOCK, "grid": {"R": 1, "h": 0.5}, "params": {"k": 0}}),
        ("spectrum", {"task": "solve", "weight": FOCK, "grid": {"R": 1, "h": 0.5}}),
        ("solve", {"weight": FOCK, "grid": {"R": 1, "h": 0.5}}),
        ("probe", {"weight": FOCK, "grid": {"radii": [1, 2], "h": 0.5}}),
        ("multivar", {"weight": FOCK, "grid": {"R": 1, "h": 0.5}}),
        ("diagnose", {"weight": {"kind": "decoupled", "factors": [FOCK, FOCK]}}),
        ("diagnose", {"weight": FOCK, "params": {"quad_h": 0.1}}),
        ("spectrum", {"weight": FOCK, "grid": {"R": 1, "h": 0.5}, "extra": 1}),
    ],
)
def test_invalid_config_exits_2_without_outputs(tmp_path, task, cfg):
    code, out = invoke(tmp_path, task, cfg)
    assert code == 2
    assert not out.exists()


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["oracle", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_nonconvergence_exits_3(tmp_path, monkeypatch):
    def fail(run, out, header):
        raise ConvergenceError("no luck")

    monkeypatch.setitem(cli.HANDLERS, "oracle", fail)
    code, out = invoke(tmp_path, "oracle", {"weight": {"kind": "zero"}})
    assert code == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "non-convergence" and "no luck" in manifest["summary"]["error"]


def test_config_hash_is_canonical():
    a = cli.config_hash({"x": 1, "y": [1, 2]}, "oracle", 0)
    b = cli.config_hash({"y": [1, 2], "x": 1}, "oracle", 0)
    assert a == b and len(a) == 16
    assert a != cli.config_hash({"x": 1, "y": [1, 2]}, "spectrum", 0)
