"""Tests for the command-line harness."""

import json
import os

import pytest

from mimic.cli import CONFIG_ERROR, OK, RUN_FAILURE, main


def _write_cfg(tmp_path, name="cfg.json", **overrides):
    body = {
        "env": "bandit",
        "seeds": [0, 1],
        "mi": {"n_iterations": 2, "real_steps_per_iter": 30, "n_model_blocks": 1,
               "n_transition": 2, "n_policy": 1, "model_horizon": 3, "eval_episodes": 2},
        "critic": {"hidden": [8], "batch_real": 8, "batch_fake": 8, "steps_per_epoch": 1},
        "transition": {"hidden": [8], "rollout_count": 4, "l2_batch": 16},
        "policy": {"hidden": [8], "rollout_count": 4, "rollout_horizon": 3, "value_hidden": [8]},
    }
    body.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


class TestRun:
    def test_run_produces_artifacts_and_curves(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "-o", out]) == OK
        assert os.path.exists(os.path.join(out, "config.json"))
        assert os.path.exists(os.path.join(out, "curves.csv"))
        for seed in (0, 1):
            sub = os.path.join(out, f"seed_{seed}")
            assert os.path.exists(os.path.join(sub, "metrics.jsonl"))
            assert os.path.exists(os.path.join(sub, "curve.csv"))
            assert os.path.exists(os.path.join(sub, "checkpoints", "iter_001.blob"))
        header, *rows = open(os.path.join(out, "curves.csv")).read().strip().split("\n")
        assert header == "real_steps,eval_return_mean,eval_return_std"
        assert len(rows) == 2
        assert all(len(r.split(",")) == 3 for r in rows)

    def test_config_error_exit_code(self, tmp_path):
        cfg = _write_cfg(tmp_path, gamma=1.2)
        assert main(["run", cfg]) == CONFIG_ERROR

    def test_missing_config_error(self, tmp_path):
        assert main(["run", str(tmp_path / "none.json")]) == CONFIG_ERROR

    def test_output_root_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MI_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = _write_cfg(tmp_path, output_dir="exp")
        assert main(["run", cfg]) == OK
        assert os.path.exists(tmp_path / "root" / "exp" / "curves.csv")


class TestRerunAndCurves:
    def test_rerun_same_config_identical_csv(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["run", cfg, "-o", a]) == OK
        assert main(["run", cfg, "-o", b]) == OK
        assert open(os.path.join(a, "curves.csv"), "rb").read() == open(
            os.path.join(b, "curves.csv"), "rb").read()

    def test_replay_reproduces(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = str(tmp_path / "orig")
        assert main(["run", cfg, "-o", out]) == OK
        assert main(["replay", out]) == OK

    def test_curves_subcommand(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = str(tmp_path / "run")
        assert main(["run", cfg, "-o", out]) == OK
        dest = str(tmp_path / "agg.csv")
        assert main(["curves", out, "-o", dest]) == OK
        assert open(dest).read() == open(os.path.join(out, "curves.csv")).read()


class TestVerifyMode:
    def test_verify_subcommand_emits_report(self, tmp_path, capsys):
        body = {
            "mode": "verify",
            "seeds": [0],
            "verify": {"n_occupancy": 1, "occupancy_rollouts": 5000, "n_error_bound": 2,
                       "n_short_horizon": 2, "n_consistency": 1, "consistency_states": 3,
                       "decomposition_seeds": 1, "decomposition_n": [100]},
        }
        cfg = tmp_path / "v.json"
        cfg.write_text(json.dumps(body))
        out = str(tmp_path / "vout")
        assert main(["verify", str(cfg), "-o", out]) == OK
        lines = open(os.path.join(out, "verify_report.jsonl")).read().strip().split("\n")
        reports = [json.loads(l) for l in lines]
        assert all(r["verdict"] for r in reports)
        assert {"lhs", "rhs", "slack", "instance"} <= set(reports[0])
        table = capsys.readouterr().out
        assert "violations" in table

    def test_supervised_baseline_mode(self, tmp_path):
        cfg = _write_cfg(tmp_path, mode="supervised-baseline")
        out = str(tmp_path / "sup")
        assert main(["run", cfg, "-o", out]) == OK
        assert os.path.exists(os.path.join(out, "curves.csv"))
