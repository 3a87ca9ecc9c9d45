import csv
import json

import numpy as np
import pytest

from lsmid import cli
from lsmid import io as lio
from lsmid.assign import cost


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def data_rows(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


MINIMAL = {
    "system": {"n": 1, "s": 2, "A_true": [[0.0, 10.0]], "switching": {"kind": "periodic", "pattern": [1, 2]}},
    "data": {"N": 4, "input_dist": "constant", "seed": 3},
}


def test_simulate_minimal(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
    rows = data_rows(tmp_path / "o" / "dataset.csv")
    assert rows[0] == "t,y,x1,mode,v"
    assert len(rows) == 5
    assert [r.split(",")[3] for r in rows[1:]] == ["1", "2", "1", "2"]
    assert [float(r.split(",")[1]) for r in rows[1:]] == [0, 10, 0, 10]
    first = (tmp_path / "o" / "dataset.csv").read_text().splitlines()[0]
    assert first.startswith("# lsmid config_hash=") and first.endswith("seed=3")


def test_simulate_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {**MINIMAL, "noise": {"dense": "gaussian", "dense_scale": 0.5}})
    run("simulate", "--config", cfg, "--out", tmp_path / "a")
    run("simulate", "--config", cfg, "--out", tmp_path / "b")
    for f in ("dataset.csv", "dataset.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    run("simulate", "--config", cfg, "--out", tmp_path / "c", "--seed", 4)
    assert (tmp_path / "a" / "dataset.csv").read_bytes() != (tmp_path / "c" / "dataset.csv").read_bytes()


def test_simulate_outliers_in_sidecar(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 2, "s": 2}, "data": {"N": 20, "seed": 1},
                               "noise": {"sparse_count": 3, "sparse_range": [1e3, 1e6]}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    side = json.loads((tmp_path / "dataset.json").read_text())
    out = side["truth"]["outliers"]
    assert len(out) == 3 and all(1 <= t <= 20 for t in out)
    assert side["provenance"]["seed"] == 1


def test_roundtrip_reproduces_noise_bookkeeping(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 2, "s": 3}, "data": {"N": 25, "seed": 9},
                               "noise": {"dense": "uniform", "dense_scale": 0.3, "sparse_count": 2}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    d = lio.read_dataset(tmp_path / "dataset.csv")
    assert d.truth is not None
    assert cost(d, d.truth.A) <= np.abs(d.truth.v).sum() + 1e-10
    resid = d.y - np.einsum("ij,ij->j", d.X, d.truth.A[:, d.truth.sigma])
    np.testing.assert_allclose(resid, d.truth.v, atol=1e-10)


def test_arx_and_polynomial_configs(tmp_path):
    arx = {"system": {"n": 3, "s": 2, "A_true": "random", "A_scale": 0.3,
                      "feature_map": {"kind": "arx", "n_a": 1, "n_b": 1, "n_u": 1},
                      "switching": {"kind": "dwell", "min_dwell": 3}},
           "data": {"N": 30, "seed": 2}}
    assert run("simulate", "--config", write_cfg(tmp_path, arx), "--out", tmp_path / "arx") == 0
    d = lio.read_dataset(tmp_path / "arx" / "dataset.csv")
    assert d.fmap.kind == "arx" and d.inputs.shape == (1, 31)
    poly = {"system": {"n": 6, "s": 2, "feature_map": {"kind": "polynomial", "degree": 2, "n_u": 2}},
            "data": {"N": 30, "seed": 2, "input_dist": "uniform"}}
    assert run("simulate", "--config", write_cfg(tmp_path, poly), "--out", tmp_path / "poly") == 0
    bad = {"system": {"n": 5, "s": 2, "feature_map": {"kind": "polynomial", "degree": 2, "n_u": 2}}}
    assert run("simulate", "--config", write_cfg(tmp_path, bad), "--out", tmp_path / "bad") == 1


def test_schema_rejects_unknown_keys(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"system": {"n": 1, "colour": "red"}})
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 1
    e = err_json(capsys)["error"]
    assert e["type"] == "input_error" and "colour" in e["message"]


def test_estimate_noiseless_and_trace(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 2, "s": 2}, "data": {"N": 40, "seed": 5},
                               "estimator": {"restarts": 8}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    assert run("estimate", tmp_path / "dataset.csv", "--config", cfg, "--out", tmp_path) == 0
    res = json.loads((tmp_path / "estimate.json").read_text())
    h = res["results"]["heuristic"]
    assert h["cost"] <= 1e-8 and h["matched_error"] <= 1e-6
    trace = list(csv.reader(data_rows(tmp_path / "trace.csv")))
    assert trace[0] == ["restart", "iter", "cost"]
    assert {r[0] for r in trace[1:]} == {str(j) for j in range(1, 9)}


def test_estimate_both_modes(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 1, "s": 2}, "data": {"N": 8, "seed": 1},
                               "noise": {"dense": "gaussian", "dense_scale": 1.0}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    assert run("estimate", tmp_path / "dataset.csv", "--config", cfg, "--out", tmp_path, "--mode", "both") == 0
    r = json.loads((tmp_path / "estimate.json").read_text())["results"]
    assert r["oracle"]["cost"] <= r["heuristic"]["cost"] + 1e-9


def test_estimate_iter_limit_exit_code(tmp_path):
    cfg = {"system": {"n": 2, "s": 3}, "data": {"N": 60, "seed": 1},
           "noise": {"dense": "gaussian", "dense_scale": 1.0}, "estimator": {"restarts": 1, "max_iters": 1}}
    p = write_cfg(tmp_path, cfg)
    run("simulate", "--config", p, "--out", tmp_path)
    code = run("estimate", tmp_path / "dataset.csv", "--config", p, "--out", tmp_path)
    status = json.loads((tmp_path / "estimate.json").read_text())["results"]["heuristic"]["solver_status"]
    assert code == (2 if status == "iter_limit" else 0)
    assert status == "iter_limit"


def test_malformed_csv_names_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("t,y,x1\n1,0.5,1.0\n2,abc,1.0\n")
    assert run("estimate", p, "--out", tmp_path) == 1
    assert "line 3" in err_json(capsys)["error"]["message"]
    p.write_text("t,y,x1\n1,0.5\n")
    assert run("metrics", p, "--out", tmp_path) == 1
    assert "line 2" in err_json(capsys)["error"]["message"]


def test_metrics_constant_regressor(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 1, "s": 1, "A_true": [[2.0]]},
                               "data": {"N": 3, "input_dist": "constant"}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    assert run("metrics", tmp_path / "dataset.csv", "--config", cfg, "--out", tmp_path) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["r_star_lower"]["value"] == 1
    for key in ("nu_n", "r_star_lower", "r_star_upper", "gamma_m", "D_hat", "lambda_l1"):
        assert "certified" in m[key]


def test_metrics_generic_nu(tmp_path):
    cfg = write_cfg(tmp_path, {"system": {"n": 2, "s": 2}, "data": {"N": 8, "seed": 3},
                               "metrics": {"xi_samples": 20, "restarts": 3}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    assert run("metrics", tmp_path / "dataset.csv", "--config", cfg, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["nu_n"]["value"] == 2


def test_metrics_budget_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"system": {"n": 3, "s": 1}, "data": {"N": 40, "seed": 3}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    assert run("metrics", tmp_path / "dataset.csv", "--config", cfg, "--out", tmp_path, "--budget", 50) == 3
    e = err_json(capsys)["error"]
    assert e["type"] == "budget_exceeded" and e["exit_code"] == 3


def _pipeline(tmp_path, cfg):
    p = write_cfg(tmp_path, cfg)
    assert run("simulate", "--config", p, "--out", tmp_path) == 0
    assert run("estimate", tmp_path / "dataset.csv", "--config", p, "--out", tmp_path) == 0
    assert run("metrics", tmp_path / "dataset.csv", "--config", p, "--out", tmp_path) == 0
    assert run("bounds", tmp_path / "dataset.csv", tmp_path / "estimate.json", tmp_path / "metrics.json",
               "--config", p, "--out", tmp_path) == 0
    b = json.loads((tmp_path / "bounds.json").read_text())
    rows = list(csv.reader(data_rows(tmp_path / "conditions.csv")))
    return b, rows


def test_bounds_noiseless_all_flags(tmp_path):
    b, rows = _pipeline(tmp_path, {"system": {"n": 2, "s": 2, "switching": {"kind": "periodic", "pattern": [1, 2]}},
                                   "data": {"N": 30, "seed": 2}, "metrics": {"xi_samples": 30, "restarts": 3}})
    assert rows[0] == ["condition", "holds", "margin"]
    assert all(r[1] == "true" for r in rows[1:])
    assert b["bound_value"]["value"] == pytest.approx(0.0, abs=1e-9)
    assert b["matched_error"] == pytest.approx(0.0, abs=1e-9)


def test_bounds_dense_noise_optimistic(tmp_path):
    b, _ = _pipeline(tmp_path, {"system": {"n": 2, "s": 2, "switching": {"kind": "periodic", "pattern": [1, 2]}},
                                "data": {"N": 30, "seed": 2}, "noise": {"dense": "gaussian", "dense_scale": 0.01},
                                "metrics": {"xi_samples": 30, "restarts": 3}})
    assert b["xi_side"] == "mc_lower"
    assert b["bound_value"]["status"] == "optimistic"


def test_bounds_sparse_noise_within_r_star(tmp_path):
    b, rows = _pipeline(tmp_path, {"system": {"n": 2, "s": 1}, "data": {"N": 30, "seed": 4},
                                   "noise": {"sparse_count": 2, "sparse_range": [1e3, 1e6]}})
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["r_star_lower"]["value"] >= 2
    assert b["matched_error"] <= 1e-8
    assert b["bound_value"]["value"] == pytest.approx(0.0, abs=1e-8)
    assert b["bound_value"]["status"] == "certified"


def test_bounds_rejects_mismatched_files(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"system": {"n": 2, "s": 1}, "data": {"N": 10}})
    run("simulate", "--config", cfg, "--out", tmp_path)
    (tmp_path / "est.json").write_text(json.dumps({"results": {}}))
    (tmp_path / "m.json").write_text("{}")
    assert run("bounds", tmp_path / "dataset.csv", tmp_path / "est.json", tmp_path / "m.json",
               "--out", tmp_path) == 1


EXPERIMENT = {"system": {"n": 2, "s": 2}, "data": {"N": 20, "seed": 1},
              "estimator": {"restarts": 6}, "metrics": {"xi_samples": 10, "restarts": 2},
              "experiment": {"trials": 4, "sweep": {"k": [0, 1, 2, 3, 4, 5]}}}


def _summary(path):
    rows = list(csv.DictReader(data_rows(path)))
    return rows, [r for r in rows if r["row_type"] == "summary"]


@pytest.mark.slow
def test_experiment_trend_and_rerun(tmp_path):
    cfg = write_cfg(tmp_path, {**EXPERIMENT, "analysis": {"enable": {"metrics": False}}})
    assert run("experiment", "--config", cfg, "--out", tmp_path / "a") == 0
    rows, summ = _summary(tmp_path / "a" / "experiment.csv")
    assert len(rows) == 6 * 4 + 6
    rates = [float(r["recovery_rate"]) for r in summ]
    assert rates[0] == 1.0
    assert rates[0] >= rates[-1]
    run("experiment", "--config", cfg, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "experiment.csv").read_bytes() == (tmp_path / "b" / "experiment.csv").read_bytes()


def test_experiment_zero_trials(tmp_path):
    cfg = write_cfg(tmp_path, {**EXPERIMENT, "experiment": {"trials": 0, "sweep": {"k": [0, 1]}}})
    assert run("experiment", "--config", cfg, "--out", tmp_path) == 0
    rows = data_rows(tmp_path / "experiment.csv")
    assert rows == [",".join(cli.EXPERIMENT_COLUMNS)]


def test_experiment_with_bounds_columns(tmp_path):
    cfg = write_cfg(tmp_path, {**EXPERIMENT, "experiment": {"trials": 2, "sweep": {"N": [16], "noise_std": [0.0, 0.05]}}})
    assert run("experiment", "--config", cfg, "--out", tmp_path, "--threads", 2) == 0
    rows, summ = _summary(tmp_path / "experiment.csv")
    trials = [r for r in rows if r["row_type"] == "trial"]
    assert len(trials) == 4 and len(summ) == 2
    assert all(r["bound_status"] in ("optimistic", "vacuous") for r in trials)
    assert all(r["nu_n"] == "2" for r in trials)


def test_config_file_errors(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "missing.json", "--out", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"system\": \n")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 1
    assert "line" in err_json(capsys)["error"]["message"]
    assert run("simulate", "--out", tmp_path, "--threads", 0) == 1


def test_config_hash_ignores_output_dir():
    a = {"data": {"seed": 1}, "output": {"dir": "x"}}
    b = {"data": {"seed": 1}, "output": {"dir": "y"}}
    assert cli.provenance(a, "simulate") == cli.provenance(b, "simulate")
    assert cli.provenance(a, "simulate") != cli.provenance({"data": {"seed": 2}}, "simulate")
