import csv
import io
import json
import math

import pytest

from outperf import cli, hjb
from outperf.numerics import norm_cdf

PR = {"atoms": ["w0", "w1"], "probs": [0.5, 0.5], "g_vertices": [[1, 1]],
      "h_vertices": [[0.5, 1.5]], "x": 0.5}

CONFIGS = {
    "finite-solve": {"instance": PR},
    "gbm-curve": {"s0": 1, "sigma": 0.3, "T": 1, "beta": 1, "p": 1, "thetas": [0.0, 0.2],
                  "xs": {"start": 0.1, "stop": 1.5, "num": 8}},
    "gbm-beta-curve": {"s0": 1, "sigma": 0.3, "theta": 0.2, "T": 1, "p": 1, "x": 0.5,
                       "betas": [0.5, 1.0, 2.0]},
    "etf-surface": {"s0": 1, "sigma": 0.3, "theta": 0.0, "T": 1, "ps": [-1, 0, 1], "xs": [0.2, 0.6]},
    "dual-eval": {"spec": {"lognormal": {"m": -0.005, "s": 0.1}}, "x": 0.5, "mode": "monte_carlo",
                  "n_paths": 2000},
    "mmm-scan": {"model": {"preset": "bounded-tanh"}, "n_paths": 500, "n_steps": 5, "x": 0.5,
                 "benchmark": {"beta": 1, "delta": 0}, "lambdas": [-0.2, 0.0, 0.2]},
    "comparison-check": {"a": 1.0, "b": 0.5, "psi": "put", "n_paths": 2000, "n_steps": 5},
    "hjb-solve": {"model": {"preset": "constant"},
                  "hjb": {"n": [8, 8, 8], "n_time": 40, "lambda_max": 0.5}},
    "hjb-query": {"model": {"preset": "constant"},
                  "hjb": {"n": [12, 12, 12], "n_time": 60, "lambda_max": 0.5},
                  "queries": [{"t": 0, "s": 1, "y": 0, "x": 0.5}, {"t": 0, "s": 1, "y": 0, "x": 2.0}]},
}


def run(tmp_path, command, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    out, err = io.StringIO(), io.StringIO()
    code = cli.run([command, "--config", str(path), *extra], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("command", sorted(cli.CSV_HEADERS))
def test_csv_schema(tmp_path, command):
    code, text, _ = run(tmp_path, command, CONFIGS[command])
    assert code == 0
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == cli.CSV_HEADERS[command]
    assert len(rows) > 1
    for r in rows[1:]:
        assert all(math.isfinite(float(v)) for v in r)


def test_finite_solve_example(tmp_path):
    code, text, err = run(tmp_path, "finite-solve", CONFIGS["finite-solve"])
    assert code == 0
    out = json.loads(text)
    assert out["V"] == pytest.approx(2 / 3, abs=1e-12) and out["V1"] == 0.5
    assert "V=0.6666666667" in err


def test_finite_solve_instance_file(tmp_path):
    (tmp_path / "inst.json").write_text(json.dumps(PR))
    code, text, _ = run(tmp_path, "finite-solve", {"instance": "inst.json", "x": 0.1})
    assert code == 0 and json.loads(text)["V"] == pytest.approx(0.2, abs=1e-12)


def test_gbm_curve_plateau(tmp_path):
    code, text, _ = run(tmp_path, "gbm-curve", CONFIGS["gbm-curve"])
    rows = [dict(zip(cli.CSV_HEADERS["gbm-curve"], map(float, r)))
            for r in list(csv.reader(io.StringIO(text)))[1:]]
    for r in rows:
        if r["x"] >= 1.0:
            assert r["v"] == 1.0 and r["a_hat"] == 0.0


def test_etf_surface_symmetry_post_pass(tmp_path):
    code, _, err = run(tmp_path, "etf-surface", CONFIGS["etf-surface"])
    assert code == 0 and "max |V(p) - V(-p)|" in err


def test_hjb_query_values(tmp_path):
    code, text, _ = run(tmp_path, "hjb-query", CONFIGS["hjb-query"])
    rows = list(csv.reader(io.StringIO(text)))[1:]
    assert abs(float(rows[0][4]) / norm_cdf(0.1) - 1) < 0.05
    assert float(rows[1][4]) == 1.0 and float(rows[1][5]) == 0.0


def test_hjb_solve_writes_npz_and_csv(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    code, text, _ = run(tmp_path, "hjb-solve", CONFIGS["hjb-solve"], "--output", "grid")
    assert code == 0
    assert (tmp_path / "out" / "grid.npz").exists()
    lines = (tmp_path / "out" / "grid.csv").read_text().splitlines()
    assert lines[0] == "t,ln_s,y,ln_z,U,lambda" and len(lines) == 1 + 8 ** 3
    assert "grid.csv" in text


@pytest.mark.parametrize("command", sorted(cli.COMMANDS))
def test_byte_identical_reruns(tmp_path, command):
    a = run(tmp_path, command, CONFIGS[command], "--output", str(tmp_path / "a"))
    b = run(tmp_path, command, CONFIGS[command], "--output", str(tmp_path / "b"))
    assert a[0] == b[0] == 0
    for suffix in (".csv", ".json", ".npz"):
        pa, pb = (tmp_path / "a").with_suffix(suffix), (tmp_path / "b").with_suffix(suffix)
        if pa.exists():
            assert pa.read_bytes() == pb.read_bytes()


def test_seed_override_changes_monte_carlo(tmp_path):
    _, t1, _ = run(tmp_path, "dual-eval", CONFIGS["dual-eval"], "--seed", "1")
    _, t2, _ = run(tmp_path, "dual-eval", CONFIGS["dual-eval"], "--seed", "2")
    _, t3, _ = run(tmp_path, "dual-eval", dict(CONFIGS["dual-eval"], seed=1))
    assert t1 != t2 and t1 == t3


@pytest.mark.parametrize("command,cfg,field", [
    ("gbm-curve", {"s0": 1, "sigma": 0.3, "xs": [0.5]}, "theta"),
    ("gbm-curve", {"s0": 1, "sigma": "wide", "theta": 0.2, "xs": [0.5]}, "sigma"),
    ("gbm-beta-curve", {"s0": 1, "sigma": 0.3, "theta": 0.2, "x": 0.5, "betas": []}, "betas"),
    ("finite-solve", {"instance": "missing.json"}, "instance"),
    ("finite-solve", {"instance": dict(PR, probs=[0.2, 0.2])}, "probs"),
    ("dual-eval", {"spec": {"lognormal": {"m": 0, "s": 0.1}}, "x": 0.5, "mode": "exact"}, "mode"),
    ("hjb-query", {"model": {"preset": "constant"}, "hjb": {"n": [8, 8, 8]}}, "queries"),
    ("hjb-solve", {"model": {"preset": "constant"}, "hjb": {"n": [8, 8, 8], "n_time": 1}}, "n_time"),
    ("mmm-scan", {"model": {"preset": "nope"}, "x": 0.5, "lambdas": [0]}, "preset"),
    ("dual-eval", {"spec": {"lognormal": {"m": 0, "s": 0.1}}, "x": 0.5, "seed": -3}, "seed"),
    ("gbm-curve", {"s0": 1, "sigma": 0.3, "theta": 0.2, "xs": [0.0, 0.5]}, "a_hat"),
])
def test_input_errors_exit_one_and_name_field(tmp_path, command, cfg, field):
    code, _, err = run(tmp_path, command, cfg)
    assert code == 1
    assert field in err


def test_bad_config_file(tmp_path):
    (tmp_path / "broken.json").write_text("{not json")
    err = io.StringIO()
    assert cli.run(["gbm-curve", "--config", str(tmp_path / "broken.json")], stderr=err) == 1
    assert "config" in err.getvalue()
    assert cli.run(["gbm-curve", "--config", str(tmp_path / "nope.json")], stderr=io.StringIO()) == 1


def test_numerical_failure_exits_two(tmp_path, monkeypatch):
    def boom(model, cfg):
        raise hjb.NumericalError("non-finite value at step 3")
    monkeypatch.setattr(hjb, "solve_hjb", boom)
    code, _, err = run(tmp_path, "hjb-solve", CONFIGS["hjb-solve"])
    assert code == 2 and "non-finite" in err


def test_main_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(CONFIGS["gbm-beta-curve"]))
    with pytest.raises(SystemExit) as exc:
        cli.main(["gbm-beta-curve", "--config", str(path), "--output", str(tmp_path / "o.csv")])
    assert exc.value.code == 0
