"""Configuration parsing, metrics files, checkpoints, runner, CLI."""

import os
import subprocess
import sys

import numpy as np
import pytest

from fgcoord.checkpoint import (
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from fgcoord.cli import main as cli_main
from fgcoord.config import ConfigError, load_config, parse_config_text
from fgcoord.envs import GridWorld, MatrixGame
from fgcoord.metrics import MetricsWriter, format_value, read_metrics
from fgcoord.runner import Trainer, random_baseline, resolve_output_dir, selftest

CLIMB_CFG = """
[run]
seed = 5
output_dir = {out}
total_steps = {steps}
eval_interval = {eval_interval}
eval_episodes = 2
checkpoint_interval = {ckpt}

[env]
kind = climb
n_agents = 3
n_actions = 3

[model]
d_max = 2
hidden_dim = 8
mlp_hidden = 8
hyper_hidden = 4
graph_mode = learned

[maxplus]
iterations = 6

[training]
batch_size = 4
buffer_capacity = 32
graph_buffer_capacity = 4
update_interval_episodes = 2
min_buffer_episodes = 4
"""


def climb_config(tmp_path, steps=24, eval_interval=8, ckpt=0, name="run"):
    text = CLIMB_CFG.format(out=tmp_path / name, steps=steps,
                            eval_interval=eval_interval, ckpt=ckpt)
    return parse_config_text(text)


class TestConfig:
    def test_defaults_fill_missing_sections(self):
        config = parse_config_text("[run]\nseed = 3\n")
        assert config.run.seed == 3
        assert config.env.kind == "gridworld"
        assert config.training.gamma == pytest.approx(0.98)
        assert config.model.graph_mode == "learned"

    def test_unknown_section_is_named(self):
        with pytest.raises(ConfigError, match="garbage"):
            parse_config_text("[garbage]\nx = 1\n")

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="not_a_key"):
            parse_config_text("[run]\nnot_a_key = 1\n")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError):
            parse_config_text("[run]\nseed = soon\n")

    def test_bad_choice(self):
        with pytest.raises(ConfigError):
            parse_config_text("[model]\ngraph_mode = psychic\n")
        with pytest.raises(ConfigError):
            parse_config_text("[env]\nkind = chess\n")

    def test_validation_names_offending_key(self):
        with pytest.raises(ConfigError, match="gamma"):
            parse_config_text("[training]\ngamma = 1.0\n")
        with pytest.raises(ConfigError, match="total_steps"):
            parse_config_text("[run]\ntotal_steps = -1\n")

    def test_make_env_dispatch(self):
        assert isinstance(parse_config_text("[env]\nkind = climb\n").make_env(),
                          MatrixGame)
        grid = parse_config_text("[env]\nkind = gridworld\n").make_env()
        assert isinstance(grid, GridWorld)

    def test_model_defaults_follow_env(self):
        config = parse_config_text("[env]\nkind = gridworld\nn_agents = 4\n")
        dims = config.make_dims(config.make_env())
        assert dims.n_agents == 4
        assert dims.n_factors == 4  # defaults to the agent count
        assert dims.n_actions == 6

    def test_canonical_text_round_trips(self):
        config = parse_config_text("[run]\nseed = 9\n[training]\nlr_q = 0.005\n")
        text = config.canonical_text()
        again = parse_config_text(text)
        assert again.canonical_text() == text
        assert again.run.seed == 9
        assert again.training.lr_q == pytest.approx(0.005)

    def test_canonical_text_ignores_output_dir(self):
        a = parse_config_text("[run]\noutput_dir = here\n")
        b = parse_config_text("[run]\noutput_dir = there\n")
        assert a.canonical_text() == b.canonical_text()

    def test_load_config_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nseed = 17\n", encoding="utf-8")
        assert load_config(str(path)).run.seed == 17

    def test_load_config_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.ini")


class TestMetrics:
    def test_format_value(self):
        assert format_value(3) == "3"
        assert format_value(0.5) == "0.5"
        assert format_value(1.0 / 3.0) == "0.333333"
        assert format_value(float("nan")) == "nan"

    def test_write_and_read_round_trip(self, tmp_path):
        path = tmp_path / "m.csv"
        with MetricsWriter(path) as writer:
            writer.write_row(10, episode_return_mean=1.5, td_loss=0.25)
            writer.write_row(20, episode_return_mean=-2.0, epsilon=0.9)
        rows = read_metrics(path)
        assert len(rows) == 2
        assert rows[0]["step"] == 10
        assert rows[0]["episode_return_mean"] == pytest.approx(1.5)
        assert np.isnan(rows[0]["epsilon"])
        assert rows[1]["epsilon"] == pytest.approx(0.9)

    def test_unix_newlines(self, tmp_path):
        path = tmp_path / "m.csv"
        with MetricsWriter(path) as writer:
            writer.write_row(1, td_loss=1.0)
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.decode("utf-8").splitlines()[0].startswith("step,")

    def test_rejects_unknown_column(self, tmp_path):
        with MetricsWriter(tmp_path / "m.csv") as writer:
            with pytest.raises(ValueError):
                writer.write_row(1, nonsense=1.0)

    def test_rejects_non_monotone_step(self, tmp_path):
        with MetricsWriter(tmp_path / "m.csv") as writer:
            writer.write_row(5, td_loss=0.0)
            with pytest.raises(ValueError):
                writer.write_row(5, td_loss=0.0)

    def test_read_rejects_mangled_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("nope,really\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_metrics(path)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "x.ckpt"
        arrays = {
            "a": np.arange(6, dtype=np.float64).reshape(2, 3),
            "b": np.array([1, 2, 3], dtype=np.int64),
            "c": np.zeros((0,), dtype=np.float32),
        }
        save_checkpoint(path, {"note": "hi", "n": 3}, arrays)
        meta, loaded = load_checkpoint(path)
        assert meta == {"note": "hi", "n": 3}
        assert set(loaded) == {"a", "b", "c"}
        for key, arr in arrays.items():
            assert loaded[key].dtype == arr.dtype
            np.testing.assert_array_equal(loaded[key], arr)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, {"a": np.zeros(2)})
        raw = bytearray(path.read_bytes())
        raw[:len(MAGIC)] = b"NOTMAGIC"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncation(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, {"a": np.arange(100.0)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_trailing_garbage(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, {"a": np.arange(4.0)})
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestTrainer:
    def test_writes_metrics_and_checkpoints(self, tmp_path):
        config = climb_config(tmp_path, steps=24, eval_interval=8, ckpt=12)
        trainer = Trainer(config, tmp_path / "run")
        trainer.train()
        rows = read_metrics(tmp_path / "run" / "metrics.csv")
        assert [int(r["step"]) for r in rows] == [8, 16, 24]
        assert (tmp_path / "run" / "checkpoint_initial.ckpt").exists()
        assert (tmp_path / "run" / "checkpoint_step12.ckpt").exists()
        assert (tmp_path / "run" / "checkpoint_step24.ckpt").exists()
        assert (tmp_path / "run" / "checkpoint_final.ckpt").exists()

    def test_zero_budget_emits_header_and_initial_state_only(self, tmp_path):
        config = climb_config(tmp_path, steps=0)
        trainer = Trainer(config, tmp_path / "run")
        trainer.train()
        files = sorted(p.name for p in (tmp_path / "run").iterdir())
        assert files == ["checkpoint_initial.ckpt", "metrics.csv"]
        assert read_metrics(tmp_path / "run" / "metrics.csv") == []

    def test_same_seed_same_metrics_bytes(self, tmp_path):
        config = climb_config(tmp_path)
        Trainer(config, tmp_path / "a").train()
        Trainer(config, tmp_path / "b").train()
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        config = climb_config(tmp_path, steps=24, eval_interval=8, ckpt=12)
        full = Trainer(config, tmp_path / "full")
        full.train()

        resumed = Trainer(config, tmp_path / "resumed")
        meta, arrays = load_checkpoint(tmp_path / "full" / "checkpoint_step12.ckpt")
        resumed.load_state(meta, arrays)
        resumed.train()

        full_rows = (tmp_path / "full" / "metrics.csv").read_text().splitlines()
        res_rows = (tmp_path / "resumed" / "metrics.csv").read_text().splitlines()
        assert res_rows[0] == full_rows[0]
        assert res_rows[1:] == full_rows[-(len(res_rows) - 1):]

        m_full, a_full = load_checkpoint(tmp_path / "full" / "checkpoint_final.ckpt")
        m_res, a_res = load_checkpoint(tmp_path / "resumed" / "checkpoint_final.ckpt")
        assert m_full["counters"] == m_res["counters"]
        assert set(a_full) == set(a_res)
        for key in a_full:
            np.testing.assert_array_equal(a_full[key], a_res[key])

    def test_resume_rejects_other_config(self, tmp_path):
        config = climb_config(tmp_path, steps=16, ckpt=8)
        trainer = Trainer(config, tmp_path / "run")
        trainer.train()
        other = parse_config_text(
            CLIMB_CFG.format(out=tmp_path / "x", steps=16, eval_interval=8,
                             ckpt=8).replace("seed = 5", "seed = 6"))
        meta, arrays = load_checkpoint(tmp_path / "run" / "checkpoint_step8.ckpt")
        with pytest.raises(ConfigError):
            Trainer(other, tmp_path / "x").load_state(meta, arrays)

    def test_random_baseline_deterministic(self):
        config = parse_config_text("[env]\nkind = climb\n[run]\nseed = 2\n")
        a = random_baseline(config, 5)
        b = random_baseline(config, 5)
        assert a == b
        assert len(a) == 5

    def test_selftest_passes(self):
        assert all(ok for _, ok in selftest())


class TestOutputRoot:
    def test_relative_dir_joins_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv("FGCOORD_OUTPUT_ROOT", str(tmp_path))
        config = parse_config_text("[run]\noutput_dir = sub/run\n")
        assert resolve_output_dir(config) == tmp_path / "sub" / "run"

    def test_absolute_dir_wins(self, monkeypatch, tmp_path):
        monkeypatch.setenv("FGCOORD_OUTPUT_ROOT", str(tmp_path))
        config = parse_config_text(f"[run]\noutput_dir = {tmp_path}/abs\n")
        assert resolve_output_dir(config) == tmp_path / "abs"

    def test_override_beats_config(self, tmp_path):
        config = parse_config_text("[run]\noutput_dir = ignored\n")
        assert resolve_output_dir(config, str(tmp_path / "o")) == tmp_path / "o"


class TestCli:
    def test_train_eval_oracle_flow(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.ini"
        cfg_path.write_text(
            CLIMB_CFG.format(out=tmp_path / "run", steps=12, eval_interval=6,
                             ckpt=0), encoding="utf-8")
        assert cli_main(["train", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "training complete" in out

        ckpt = tmp_path / "run" / "checkpoint_final.ckpt"
        dump = tmp_path / "structures.txt"
        assert cli_main(["eval", str(ckpt), "--episodes", "2",
                         "--dump-structures", str(dump)]) == 0
        out = capsys.readouterr().out
        assert "median_return=" in out
        lines = dump.read_text().splitlines()
        assert lines and lines[0].startswith("episode=0 step=0 adjacency=")

        assert cli_main(["oracle", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "optimal_action=2,2,2" in out
        assert "optimal_value=10" in out

    def test_bad_config_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\nseed = maybe\n", encoding="utf-8")
        assert cli_main(["train", str(bad)]) == 1
        assert cli_main(["train", str(tmp_path / "missing.ini")]) == 1

    def test_missing_checkpoint_exits_two(self, tmp_path, capsys):
        assert cli_main(["eval", str(tmp_path / "absent.ckpt")]) == 2

    def test_selftest_command(self, capsys):
        assert cli_main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_entry_point_runs(self, tmp_path):
        env = dict(os.environ, FGCOORD_OUTPUT_ROOT=str(tmp_path))
        proc = subprocess.run(
            [sys.executable, "-m", "fgcoord.cli", "selftest"],
            capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        assert "PASS" in proc.stdout
