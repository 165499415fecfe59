import json
from pathlib import Path

import numpy as np
import pytest

from tdrl.cli import main
from tdrl.config import RunConfig, SeedStreams, load_config
from tdrl.errors import CheckpointError, ConfigError
from tdrl.training import Trainer

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOKE = CONFIGS / "point_mass_smoke.json"


def smoke_config(**changes):
    return load_config(SMOKE).replace(**changes)


# -- configuration ---------------------------------------------------------

def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.strategy == "ES" and cfg.es_multiple == 10.0 and cfg.ret_update_interval == 5000


@pytest.mark.parametrize("key,value", [("actor_lr", -1.0), ("strategy", "XY"), ("discount", 1.5),
                                       ("batch_size", 0), ("unsupervised_steps", -3)])
def test_bad_values_name_the_key(key, value):
    with pytest.raises(ConfigError, match=key):
        RunConfig.from_dict({key: value})


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="learning_rate"):
        RunConfig.from_dict({"learning_rate": 0.1})


def test_invalid_json_names_the_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        load_config(bad)


def test_shipped_configs_load():
    for path in CONFIGS.glob("*.json"):
        load_config(path)


def test_seed_streams_are_independent_and_reproducible():
    a, b = SeedStreams(4), SeedStreams(4)
    assert a["env"].random() == b["env"].random()
    assert SeedStreams(4)["env"].random() != SeedStreams(4)["explore"].random()


# -- command line ----------------------------------------------------------

def test_missing_config_exits_nonzero_with_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["train", "--config", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_malformed_config_names_the_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"ret_lr": "fast"}))
    assert main(["train", "--config", str(cfg)]) != 0
    assert "ret_lr" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify-theory", "--bogus"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_verify_theory_writes_verdict(tmp_path, capsys):
    assert main(["verify-theory", "--instances", "1", "--seed", "0", "--out", str(tmp_path)]) == 0
    verdict = json.loads((tmp_path / "verdicts" / "verify_theory.json").read_text())
    assert verdict["lemma1"] == "pass" and verdict["theorem1"] == "pass"
    assert {"d1", "d2"} <= set(verdict)
    assert "d1 =" in capsys.readouterr().out


def test_train_compare_export_round_trip(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(SMOKE), "--out", str(run)]) == 0
    for name in ("config.json", "metrics.csv", "verdicts/eval.json", "checkpoints/final/state.json"):
        assert (run / name).exists()
    assert main(["compare", "--config", str(run / "config.json"), "--episodes", "2"]) == 0
    assert "pass rate" in capsys.readouterr().out
    out = tmp_path / "curves.csv"
    assert main(["export", "--run", str(run), "--format", "csv", "--output", str(out)]) == 0
    assert out.read_text() == (run / "metrics.csv").read_text()


def test_export_without_metrics_fails(tmp_path, capsys):
    assert main(["export", "--run", str(tmp_path)]) != 0
    assert "metrics.csv" in capsys.readouterr().err


# -- determinism and resume ------------------------------------------------

def test_identical_runs_write_identical_metrics(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(SMOKE), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_different_seeds_diverge(tmp_path):
    for seed in ("0", "1"):
        main(["train", "--config", str(SMOKE), "--seed", seed, "--out", str(tmp_path / seed)])
    assert (tmp_path / "0" / "metrics.csv").read_bytes() != (tmp_path / "1" / "metrics.csv").read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = smoke_config()
    straight = Trainer(cfg).run()
    first = Trainer(cfg).run(700)
    first.save(tmp_path / "ckpt")
    resumed = Trainer.load(tmp_path / "ckpt").run()
    assert resumed.iteration == straight.iteration
    for p, q in zip(straight.policy.actor.params, resumed.policy.actor.params):
        assert np.array_equal(p, q)
    assert straight.current_row() == resumed.current_row()


def test_loading_a_missing_checkpoint_names_the_artifact(tmp_path):
    with pytest.raises(CheckpointError, match="state.json"):
        Trainer.load(tmp_path)
