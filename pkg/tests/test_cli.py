"""End-to-end CLI tests: schema validation with pointer paths, command
outputs, idempotence, and exit codes."""

import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from mixlogit import cli, config, datagen, evaluate
from mixlogit import model as mm
from mixlogit import train as tr

BASE_CONFIG = {
    "generator": {
        "n_pairs": 120,
        "vocab": {"vocab_size": 12, "max_prompt_len": 3, "max_response_len": 4},
        "subgroup_dims": [
            {"name": "conversation_type", "categories": ["u", "v"],
             "weights": [3.0, 1.0]},
        ],
        "teacher_delta_scale": 3.0,
        "seed": 11,
    },
    "model": {"hidden_dim": 12, "seed": 2},
    "distribution": {"variant": "gamma", "k": 2.0, "lambda": 16.7},
    "train": {"policy_lr": 0.001, "beta_lr": 0.0001, "batch_size": 40,
              "epochs": 1, "eval_every": 2, "seed": 5},
    "eval": {},
    "paths": {"data": "data.jsonl", "out_dir": "out"},
}


@pytest.fixture
def workspace(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(BASE_CONFIG))
    return tmp_path, cfg_path


def run_cli(args):
    return cli.main([str(a) for a in args])


class TestConfig:
    def test_unknown_key_rejected_with_pointer(self, tmp_path):
        doc = dict(BASE_CONFIG)
        doc["generator"] = dict(doc["generator"], bogus=1)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(config.ConfigError) as err:
            config.RunConfig.load(path)
        assert err.value.pointer.startswith("/generator")

    def test_invalid_vocab_pointer(self, tmp_path):
        doc = json.loads(json.dumps(BASE_CONFIG))
        doc["generator"]["vocab"]["vocab_size"] = 0
        path = tmp_path / "c.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(config.ConfigError) as err:
            config.RunConfig.load(path)
        assert err.value.pointer == "/generator/vocab/vocab_size"

    def test_paths_resolve_relative_to_config(self, workspace):
        tmp_path, cfg_path = workspace
        cfg = config.RunConfig.load(cfg_path)
        assert cfg.resolve_path("data.jsonl") == tmp_path / "data.jsonl"

    def test_distribution_defaults(self):
        cfg = config.RunConfig.from_dict({})
        dist = cfg.distribution(variant_override="lognormal", beta_lr=1e-4)
        assert dist.variant == "lognormal"
        assert abs(dist.sigma - 0.6) < 1e-9
        assert dist.trainable
        pm = cfg.distribution(variant_override="dpo", beta_override=0.1)
        assert pm.beta == 0.1

    def test_thread_cap_validation(self, monkeypatch):
        monkeypatch.setenv("MIXLOGIT_THREADS", "4")
        assert config.thread_cap() == 4
        monkeypatch.setenv("MIXLOGIT_THREADS", "zero")
        with pytest.raises(config.ConfigError):
            config.thread_cap()
        monkeypatch.setenv("MIXLOGIT_THREADS", "0")
        with pytest.raises(config.ConfigError):
            config.thread_cap()


class TestGenerateCommand:
    def test_writes_requested_pair_count(self, workspace, capsys):
        tmp_path, cfg_path = workspace
        out = tmp_path / "data.jsonl"
        assert run_cli(["generate", "--config", cfg_path, "--out", out]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 120
        printed = capsys.readouterr().out
        assert "120 pairs" in printed
        assert "conversation_type/u" in printed

    def test_same_seed_byte_identical(self, workspace):
        tmp_path, cfg_path = workspace
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_cli(["generate", "--config", cfg_path, "--out", a])
        run_cli(["generate", "--config", cfg_path, "--out", b])
        assert a.read_bytes() == b.read_bytes()

    def test_schema_error_exit_code(self, tmp_path, capsys):
        doc = json.loads(json.dumps(BASE_CONFIG))
        doc["generator"]["vocab"]["vocab_size"] = -3
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        code = run_cli(["generate", "--config", bad, "--out", tmp_path / "x.jsonl"])
        assert code == cli.EXIT_CONFIG_ERROR
        assert "/generator/vocab" in capsys.readouterr().err


class TestTrainCommand:
    def test_outputs_and_idempotence(self, workspace):
        tmp_path, cfg_path = workspace
        run_cli(["generate", "--config", cfg_path, "--out", tmp_path / "data.jsonl"])
        assert run_cli(["train", "--config", cfg_path]) == 0
        out = tmp_path / "out"
        for name in ["policy.ckpt", "reference.ckpt", "dist.json",
                     "trajectory.csv", "summary.json", "trajectory.png"]:
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["pairs"] == 120
        assert math.isfinite(summary["final_loss"])

        first = {name: (out / name).read_bytes()
                 for name in ["policy.ckpt", "dist.json"]}
        first_traj = _strip_wallclock(out / "trajectory.csv")
        assert run_cli(["train", "--config", cfg_path]) == 0
        assert {name: (out / name).read_bytes()
                for name in first} == first
        assert _strip_wallclock(out / "trajectory.csv") == first_traj

    def test_variant_flags(self, workspace):
        tmp_path, cfg_path = workspace
        run_cli(["generate", "--config", cfg_path, "--out", tmp_path / "data.jsonl"])
        assert run_cli(["train", "--config", cfg_path, "--variant", "dpo",
                        "--beta", "0.1"]) == 0
        dist = json.loads((tmp_path / "out" / "dist.json").read_text())
        assert dist["variant"] == "pointmass" and dist["beta"] == 0.1

        assert run_cli(["train", "--config", cfg_path, "--variant", "lognormal",
                        "--beta-lr", "0"]) == 0
        dist = json.loads((tmp_path / "out" / "dist.json").read_text())
        assert dist["variant"] == "lognormal"
        assert abs(dist["sigma"] - 0.6) < 1e-9  # untouched fixed baseline
        assert abs(dist["mu"] + 2.3) < 1e-9

        assert run_cli(["train", "--config", cfg_path, "--variant", "gamma",
                        "--beta-lr", "1e-4"]) == 0
        dist = json.loads((tmp_path / "out" / "dist.json").read_text())
        assert dist["variant"] == "gamma" and dist["trainable"]

    def test_missing_data_is_config_error(self, tmp_path):
        doc = {k: v for k, v in BASE_CONFIG.items() if k != "paths"}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(doc))
        assert run_cli(["train", "--config", cfg_path]) == cli.EXIT_CONFIG_ERROR


class TestEvalCommand:
    def test_matches_library_report(self, workspace):
        tmp_path, cfg_path = workspace
        run_cli(["generate", "--config", cfg_path, "--out", tmp_path / "data.jsonl"])
        run_cli(["train", "--config", cfg_path])
        out = tmp_path / "out"
        assert run_cli(["eval", "--config", cfg_path,
                        "--ckpt", out / "policy.ckpt"]) == 0
        report = evaluate.read_report_json(out / "report.json")
        policy = mm.load_checkpoint(out / "policy.ckpt")
        pairs = datagen.read_jsonl(tmp_path / "data.jsonl")
        direct = evaluate.build_report(policy, pairs)
        assert report.micro_avg == direct.micro_avg
        assert report.per_subgroup == direct.per_subgroup
        assert (out / "report.csv").exists()
        assert (out / "margins.png").exists()

    def test_baseline_gains(self, workspace):
        tmp_path, cfg_path = workspace
        run_cli(["generate", "--config", cfg_path, "--out", tmp_path / "data.jsonl"])
        run_cli(["train", "--config", cfg_path])
        out = tmp_path / "out"
        run_cli(["eval", "--config", cfg_path, "--ckpt", out / "policy.ckpt"])
        assert run_cli(["eval", "--config", cfg_path, "--ckpt", out / "policy.ckpt",
                        "--baseline", out / "report.json"]) == 0
        report = evaluate.read_report_json(out / "report.json")
        assert report.margin_gain is not None
        assert report.margin_gain["micro"] == 0.0
        assert (out / "margin_gains.png").exists()


class TestVerifyCommand:
    def test_quick_level_passes_under_budget(self, capsys):
        import time
        t0 = time.time()
        code = run_cli(["verify", "--level", "quick"])
        elapsed = time.time() - t0
        out = capsys.readouterr().out
        assert code == 0, out
        assert elapsed < 30.0
        assert "closed form vs quadrature" in out
        assert "gradient fidelity" in out


def _strip_wallclock(path: Path) -> list[str]:
    lines = path.read_text().splitlines()
    return [",".join(line.split(",")[:-1]) for line in lines]


def test_console_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "mixlogit.cli", "--help"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ["generate", "train", "eval", "verify", "bench"]:
        assert sub in proc.stdout
