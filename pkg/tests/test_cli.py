import json

import pytest

from synergy_tta import cli


@pytest.fixture
def tiny_config(tmp_path, source_params):
    path = tmp_path / "run.yaml"
    path.write_text("bank_size: 2\nupdate_period: 3\nstream:\n  num_batches: 8\n")
    return str(path)


def test_run_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", tiny_config, "--seed", "2", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["evictions"] == (8 - 2) // 3 and summary["mode"] == "mos_sw_first"
    for name in ("metrics.jsonl", "summary.json", "plot.csv", "final.mosc", "config.yaml"):
        assert (out / name).exists()


def test_flags_override_config(tiny_config, capsys):
    assert cli.main(["run", "--config", tiny_config, "--bank-size", "3",
                     "--update-period", "2", "--featsim", "cosine"]) == 0
    assert json.loads(capsys.readouterr().out)["evictions"] == (8 - 3) // 2


def test_baseline_defaults_to_no_adapt(tiny_config, capsys):
    assert cli.main(["baseline", "--config", tiny_config]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mode"] == "no_adapt" and summary["evictions"] == 0
    assert cli.main(["baseline", "--config", tiny_config, "--mode", "mean_ensemble"]) == 0
    assert json.loads(capsys.readouterr().out)["mode"] == "mean_ensemble"


def test_replay(tiny_config, tmp_path, capsys):
    assert cli.main(["replay", "--config", tiny_config, "--out", str(tmp_path / "r")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"final_bank", "warmup_checkpoint", "batches"}
    assert (tmp_path / "r" / "replay.json").exists()


def test_config_error_record(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("bank_size: 0\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "bank_size" in err["message"]
    assert cli.main(["replay", "--mode", "no_adapt"]) == 2


def test_oracle(capsys):
    assert cli.main(["oracle"]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert {r["name"] for r in lines} == {"hungarian", "synergy_solver", "assembly",
                                          "eviction", "gradients"}
    assert all(r["passed"] for r in lines)
