import json
import math

import pytest

from caplab import cli
from caplab.cli import ConfigError, convergence_study, main, observed_orders, validate
from caplab.spectral import EigensolverError

import oracles


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, cfg, out="out", extra=()):
    code = main(["run", str(_write(tmp_path, cfg)), "--out-dir", str(tmp_path / out), *extra])
    return code, tmp_path / out


SPECTRUM = {"command": "spectrum", "name": "sq", "geometry": {"type": "box", "sides": [1, 1]}, "h": "1/128", "k": 4}


def test_spectrum_report(tmp_path):
    code, out = _run(tmp_path, SPECTRUM, extra=["--threads", "1"])
    assert code == 0
    rep = json.loads((out / "sq.json").read_text())
    lam = rep["params"]["eigenvalues"]
    assert lam == pytest.approx([2 * math.pi**2, 5 * math.pi**2, 5 * math.pi**2, 8 * math.pi**2], rel=0.01)
    assert lam == pytest.approx(oracles.box_eigenvalues([127, 127], 1 / 128, 4), rel=1e-8)
    assert rep["params"]["version"]
    assert "total_seconds" in json.loads((out / "sq.timings.json").read_text())
    assert (out / "sq.csv").read_text().startswith("i,lambda,residual")


def test_fraction_and_number_h_agree():
    assert cli._h("1/128") == 1 / 128
    assert cli._h(" 1 / 4 ") == 0.25
    assert cli._h(0.5) == 0.5


def test_malformed_config(tmp_path, capsys):
    bad = {"command": "spectrum", "geometry": {"type": "ball", "radius": -1}, "h": "abc", "colour": 1}
    code, out = _run(tmp_path, bad)
    assert code == 2
    assert not out.exists()
    err = capsys.readouterr().err
    assert "$.geometry.radius" in err and "$.h" in err


def test_unreadable_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path), "--out-dir", str(tmp_path / "o")]) == 2


def test_missing_fields():
    with pytest.raises(ConfigError, match=r"\$.geometry"):
        validate({"command": "spectrum", "h": 0.1})
    with pytest.raises(ConfigError, match="at least 3"):
        validate({"command": "convergence-study", "geometry": {"type": "box", "sides": [1, 1]},
                  "h_list": [0.1, 0.05]})


def test_hypothesis_not_met_exits_zero(tmp_path):
    cfg = {"command": "theorem-check", "name": "big", "geometry": {"type": "box", "sides": [1, 1]}, "h": "1/32",
           "k": 3, "hole": {"type": "ball", "radius": 0.3, "center": [0.5, 0.5]}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    rep = json.loads((out / "big.json").read_text())
    assert rep["summary"].get("hypothesis-not-met", 0) > 0
    assert "fail" not in rep["summary"]


def test_violation_exits_one(tmp_path):
    cfg = {"command": "faber-krahn", "mode": "hall", "name": "iso", "h": "1/16",
           "geometry": {"type": "ellipsoid", "semi_axes": [1.5, 0.8, 0.8]}, "constants": {"c_n": 1e6}}
    code, out = _run(tmp_path, cfg)
    assert code == 1
    rep = json.loads((out / "iso.json").read_text())
    assert rep["summary"]["fail"] == 1


def test_c1_override(tmp_path):
    cfg = {"command": "faber-krahn", "mode": "hall", "name": "iso", "h": "1/16",
           "geometry": {"type": "ellipsoid", "semi_axes": [1.5, 0.8, 0.8]}, "constants": {"c1_n": 6.5}}
    code, out = _run(tmp_path, cfg)
    rep = json.loads((out / "iso.json").read_text())
    assert rep["params"]["c_fit"] == pytest.approx(0.5)
    assert code == 0


def test_solver_failure_exits_three_without_output(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise EigensolverError("no convergence within budget")

    monkeypatch.setattr(cli, "solve_domain", broken)
    code, out = _run(tmp_path, SPECTRUM)
    assert code == 3
    assert not out.exists()


def test_oversized_3d_grid_rejected(tmp_path):
    cfg = {"command": "spectrum", "geometry": {"type": "ball", "dim": 3, "radius": 1}, "h": "1/80"}
    code, out = _run(tmp_path, cfg)
    assert code == 2
    assert not out.exists()


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = {"command": "lemma-suite", "name": "lem", "trials": 5, "max_dim": 4, "seed": 1}
    _run(tmp_path, cfg, out="a")
    monkeypatch.setenv("CAPLAB_SEED", "9")
    _run(tmp_path, cfg, out="b")
    a = json.loads((tmp_path / "a" / "lem.json").read_text())
    b = json.loads((tmp_path / "b" / "lem.json").read_text())
    assert a["params"]["seed"] == 1 and b["params"]["seed"] == 9
    monkeypatch.setenv("CAPLAB_SEED", "x")
    assert _run(tmp_path, cfg, out="c")[0] == 2


def test_byte_identical_reruns(tmp_path):
    cfg = {"command": "capacity", "name": "cap", "geometry": {"type": "ball", "radius": 1}, "h": "1/32",
           "eigen_shift": True, "regions": [{"type": "ball", "radius": 0.2}, {"type": "annulus", "r_in": 0.8,
                                                                                 "r_out": 0.9}]}
    _run(tmp_path, cfg, out="a")
    _run(tmp_path, cfg, out="b")
    for name in ("cap.json", "cap.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_temp_files_left(tmp_path):
    _run(tmp_path, SPECTRUM)
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["sq.csv", "sq.json", "sq.timings.json"]


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["$schema"].endswith("2020-12/schema")


def test_convergence_square_order_two():
    hs = ["1/32", "1/64", "1/128"]
    rep = convergence_study({"command": "convergence-study", "geometry": {"type": "box", "sides": [1, 1]},
                             "h_list": hs, "quantities": ["lambda_1"]})
    est = rep.params["order[lambda_1]"]
    assert est["order"] == pytest.approx(2.0, abs=0.05)
    assert est["converged"]
    lam = [r["lambda_1"] for r in rep.rows]
    assert est["order"] == pytest.approx(oracles.richardson_order([1 / 32, 1 / 64, 1 / 128], lam), rel=1e-12)


def test_convergence_disk_order_one():
    rep = convergence_study({"command": "convergence-study", "geometry": {"type": "ball", "radius": 1},
                             "h_list": ["1/32", "1/64", "1/128"]})
    assert rep.params["order[lambda_1]"]["order"] == pytest.approx(1.0, abs=0.3)


def test_constant_quantity_converged():
    est = observed_orders([0.1, 0.05, 0.025], [2.0, 2.0, 2.0])
    assert est["converged"] and est["order"] is None
    with pytest.raises(ValueError):
        observed_orders([0.1, 0.05], [1.0, 2.0])


def test_slow_order_flagged():
    # error ~ sqrt(h)
    hs = [0.1, 0.05, 0.025]
    est = observed_orders(hs, [1 + math.sqrt(h) for h in hs])
    assert est["order"] == pytest.approx(0.5, abs=1e-9)
    assert not est["converged"]


def test_convergence_svg(tmp_path):
    cfg = {"command": "convergence-study", "name": "conv", "geometry": {"type": "box", "sides": [1, 1]},
           "h_list": ["1/16", "1/32", "1/64"], "quantities": ["lambda_1", "volume"]}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    svg = (out / "conv.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_proof_diagnostics_command(tmp_path):
    cfg = {"command": "proof-diagnostics", "name": "pd", "geometry": {"type": "box", "sides": [1, 1]},
           "h": "1/32", "k": 3, "hole": {"type": "ball", "radius": 0.05, "center": [0.0, 0.5]}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    assert json.loads((out / "pd.json").read_text())["summary"]["pass"] >= 2


def test_transplant_command(tmp_path):
    cfg = {"command": "faber-krahn", "mode": "transplant", "name": "tp", "h": "1/12",
           "geometry": {"type": "ball", "dim": 3, "radius": 1}, "k": 2}
    code, out = _run(tmp_path, cfg)
    assert code == 0
