import json

import pytest
import yaml

from powerwall_rl import cli, ppo
from powerwall_rl.config import ConfigError, SEED_ENV_VAR, config_from_dict, load_config
from powerwall_rl.data import load_csv


@pytest.fixture
def cfg_file(tmp_path):
    def make(**over):
        raw = {"runs": 1, "ppo_episodes": 2, "q_episodes": 3, "output_dir": str(tmp_path / "out")}
        raw.update(over)
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump(raw))
        return str(p)
    return make


def test_generate_data(tmp_path):
    out = tmp_path / "d" / "year.csv"
    assert cli.main(["generate-data", "--seed", "3", "--out", str(out)]) == 0
    assert len(load_csv(out).records) == 8760


def test_train_evaluate_trace_ppo(cfg_file, tmp_path, capsys):
    cfg = cfg_file()
    assert cli.main(["train", "--config", cfg, "--algo", "ppo"]) == 0
    ck = tmp_path / "out" / "ppo.npz"
    assert ck.exists() and (tmp_path / "out" / "reward_history.csv").exists()
    capsys.readouterr()
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", str(ck)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["monthly_import_kwh"]) == 11
    assert cli.main(["trace-day", "--config", cfg, "--checkpoint", str(ck),
                     "--date", "05-01"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("hour,soc_kwh,action") and len(lines) == 25


def test_train_evaluate_qlearn(cfg_file, tmp_path, capsys):
    cfg = cfg_file()
    assert cli.main(["train", "--config", cfg, "--algo", "qlearn"]) == 0
    capsys.readouterr()
    ck = tmp_path / "out" / "qtable.csv"
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", str(ck)]) == 0
    assert json.loads(capsys.readouterr().out)["annual_import_kwh"] > 0


def test_evaluate_rule_and_idle(cfg_file, capsys):
    cfg = cfg_file()
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", "idle"]) == 0
    idle = json.loads(capsys.readouterr().out)
    assert idle["reduction_vs_no_battery_pct"] == pytest.approx(0.0, abs=1e-9)
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", "rule"]) == 0
    assert json.loads(capsys.readouterr().out)["reduction_vs_no_battery_pct"] > 0


def test_compare_writes_report(cfg_file, tmp_path):
    assert cli.main(["compare", "--config", cfg_file()]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(report["runs"]) == 1 and report["months"][0] == "Feb"


def test_config_errors_exit_2(cfg_file, tmp_path):
    assert cli.main(["compare", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert cli.main(["compare", "--config", cfg_file(bogus=1)]) == 2
    assert cli.main(["compare", "--config", cfg_file(runs=0)]) == 2
    assert cli.main(["compare", "--config", cfg_file(ppo={"discount": 2.0})]) == 2
    assert cli.main(["evaluate", "--config", cfg_file(), "--checkpoint", "nope.npz"]) == 2
    assert cli.main(["trace-day", "--checkpoint", "rule", "--date", "02-30"]) == 2
    assert cli.main(["train", "--algo", "sarsa"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("runs: [1, 2\n")
    assert cli.main(["compare", "--config", str(bad)]) == 2
    assert cli.main(["compare", "--config",
                     cfg_file(data={"source": "csv", "csv_path": "none.csv"})]) == 2


def test_divergence_exit_3(cfg_file, monkeypatch):
    def boom(*a, **kw):
        raise ppo.NonFiniteLoss("nan loss", {"minibatch": 0})
    monkeypatch.setattr(ppo, "train", boom)
    assert cli.main(["train", "--config", cfg_file(), "--algo", "ppo"]) == 3
    assert cli.main(["compare", "--config", cfg_file()]) == 3


def test_csv_data_source_relative_to_config(tmp_path, cfg_file, capsys):
    cli.main(["generate-data", "--seed", "42", "--out", str(tmp_path / "year.csv")])
    cfg = cfg_file(data={"source": "csv", "csv_path": "year.csv"})
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", "idle"]) == 0


def test_seed_env_override(monkeypatch, cfg_file):
    monkeypatch.setenv(SEED_ENV_VAR, "17")
    assert load_config(cfg_file(base_seed=3)).base_seed == 17
    monkeypatch.setenv(SEED_ENV_VAR, "x")
    with pytest.raises(ConfigError):
        config_from_dict({})


def test_config_round_trip(tmp_path, monkeypatch):
    from powerwall_rl.config import dump_config
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    cfg = config_from_dict({"runs": 3, "env": {"penalty_value": 10.0},
                            "data": {"tiers": [0.05, 0.1, 0.2]}})
    assert cfg.data.tiers == (0.05, 0.1, 0.2)
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
