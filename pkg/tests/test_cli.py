import csv

import numpy as np
import pytest
import yaml

from tsnl.cli import main
from tsnl.config import ConfigError, config_from_dict, parse_config
from tsnl.experiments import ResultRow, run_experiment, run_valloss_study, valloss_means

TINY = {
    "model": "lgssm1d", "methods": ["tsnl", "snl", "smc-abc", "bpf-mcmc"], "T": 30, "budgets": [4, 8],
    "trials": 2, "record_wall_clock": False,
    "flow": {"made_layers": 1, "hidden_layers": 1, "hidden_units": 8},
    "train": {"max_epochs": 10}, "mcmc": {"steps": 60}, "bpf": {"steps": 60}, "abc": {"n_particles": 10},
}


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, {"model": "lgssm1d", "method": "tsnl"}))
    assert (cfg.flow.made_layers, cfg.flow.hidden_layers, cfg.flow.hidden_units) == (5, 5, 32)
    assert cfg.mcmc.steps == 1000 and cfg.tsnl.tau == 0.2 and cfg.methods == ["tsnl"]


@pytest.mark.parametrize("raw, key", [
    ({"model": "lgssm1d", "budgets": [10, 5]}, "budgets"),
    ({"method": "tsnl"}, "model"),
    ({"model": "lgssm1d", "bogus": 1}, "bogus"),
    ({"model": "lgssm1d", "flow": {"layers": 3}}, "flow.layers"),
    ({"model": "lgssm1d", "methods": ["mcmc"]}, "methods"),
    ({"model": "nope"}, "model"),
    ({"model": "lgssm1d", "trials": 0}, "trials"),
])
def test_config_errors_name_key(raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_from_dict(raw)


def test_model_mapping():
    cfg = config_from_dict({"model": {"name": "lv", "params": {"sigma_e": 5.0}}})
    assert cfg.model.params == {"sigma_e": 5.0}


def test_experiment_rows_and_determinism(tmp_path):
    cfg = config_from_dict({**TINY, "methods": ["tsnl"], "budgets": [100, 200], "T": 20})
    cfg.train.max_epochs = 3
    _, rows = run_experiment(cfg, tmp_path / "a")
    assert len(rows) == 4
    run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a/results.csv").read_bytes() == (tmp_path / "b/results.csv").read_bytes()


def test_benchmark_cli_all_methods(tmp_path):
    p = _write(tmp_path, TINY)
    assert main(["benchmark", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o/results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == ResultRow.header()
    assert len(rows) == 4 * 2 * 2 and all(r["status"] == "ok" for r in rows)
    # budget column is the ledger reading: tsnl/snl spend exactly sims * T
    for r in rows:
        if r["method"] in ("tsnl", "snl"):
            sims = max(1, int(r["target_budget"]) // 3) * 3
            assert int(r["budget"]) == sims * 30
    svgs = {p.name for p in (tmp_path / "o").glob("*.svg")}
    assert "e_min_vs_cost.svg" in svgs and "rank_hist_tsnl_theta1.svg" in svgs


def test_failed_rows_marked(tmp_path):
    cfg = config_from_dict({**TINY, "methods": ["bpf-mcmc"], "budgets": [1], "trials": 1})
    cfg.bpf.steps = 0   # invalid: the run raises and is recorded, the experiment continues
    _, rows = run_experiment(cfg, tmp_path)
    assert len(rows) == 1 and rows[0].status.startswith("failed")


def test_other_subcommands(tmp_path):
    p = _write(tmp_path, TINY)
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 0
    assert main(["acf", "--config", str(p), "--out", str(out)]) == 0
    assert main(["infer", "--config", str(p), "--out", str(out), "--method", "smc-abc", "--budget", "20",
                 "--data", str(out / "trajectory.csv")]) == 0
    assert {"trajectory.csv", "acf.csv", "acf.svg", "samples.csv", "abc_trace.csv"} <= {x.name for x in out.iterdir()}


def test_cli_errors(tmp_path, capsys):
    assert main(["benchmark", "--config", str(tmp_path / "missing.yaml")]) != 0
    bad = _write(tmp_path, {"model": "lgssm1d", "budgets": [3, 1]})
    assert main(["benchmark", "--config", str(bad)]) == 2
    assert "budgets" in capsys.readouterr().err


def test_valloss_single_point(tmp_path):
    cfg = config_from_dict({**TINY, "trials": 1, "valloss": {"T_grid": [10], "n_sims": 8, "L": 2}})
    _, rows = run_valloss_study(cfg, tmp_path)
    assert len(rows) == 1 and len(valloss_means(rows)) == 1
    assert (tmp_path / "valloss.svg").exists()
