"""Command line interface: train, verify, eval subcommands and exit codes."""

import json

import numpy as np
import pytest

from ardo.cli import main
from ardo.networks import MlpNetwork
from ardo.training import METRICS_HEADER

MINIMAL = """\
# smallest run that exercises the full loop
problem.name = ou_stationary
problem.dim = 1
train.epochs = 4
train.m_interior = 64
train.m_dirichlet = 8
train.m_neumann = 0
train.eval_every = 2
net.hidden = 8
"""


def _write_config(tmp_path, text=MINIMAL):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def _zero_net(tmp_path, widths=(1, 8, 1)):
    net = MlpNetwork(widths, "tanh")
    net.params = np.zeros_like(net.params)
    path = tmp_path / "zero.bin"
    net.save(path)
    return path


class TestTrainCommand:
    def test_minimal_config_trains_and_writes_artifacts(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "run"
        code = main(["train", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines[1].split(",")) == 12
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "ok"
        assert summary["config"]["train.epochs"] == 4
        assert summary["final"]["epoch"] == 4

    def test_overrides_echoed_and_sampling_warning_emitted(self, tmp_path):
        """--set values land in the resolved config; m_interior * tau = 0.1
        triggers the sampling-condition warning in the summary."""
        cfg = _write_config(tmp_path)
        out = tmp_path / "run"
        code = main([
            "train", "--config", str(cfg),
            "--set", "train.tau=1e-4",
            "--set", "train.m_interior=1000",
            "--out", str(out),
        ])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["train.tau"] == 1e-4
        assert summary["config"]["train.m_interior"] == 1000
        assert any("0.1 < 10" in w for w in summary["warnings"])

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = _write_config(tmp_path, MINIMAL + "train.seed = 5\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--seed", "9",
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["train.seed"] == 9

    def test_unknown_config_key_fails_naming_it(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, MINIMAL + "train.momentum = 0.9\n")
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert code == 1
        assert "train.momentum" in capsys.readouterr().err

    def test_corrupt_config_fails_without_outputs(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("problem.name ou_stationary\n")
        out = tmp_path / "run"
        code = main(["train", "--config", str(cfg), "--out", str(out)])
        assert code == 1
        assert "config error" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_config_file_fails(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "nope.cfg")])
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_divergent_run_exits_two_with_summary(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            MINIMAL + "train.lr_solution = 1e160\ntrain.test_steps_per_epoch = 0\n"
            "train.eval_every = 1\n",
        )
        out = tmp_path / "run"
        code = main(["train", "--config", str(cfg), "--out", str(out)])
        assert code == 2
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "diverged"
        assert "diverged at epoch" in summary["error"]
        assert summary["final"]["epoch"] >= 1

    def test_summary_contains_every_resolved_train_key(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        for field in ("epochs", "m_interior", "m_dirichlet", "m_neumann", "tau",
                      "tau_tilde", "replicates", "lr_solution", "lr_test",
                      "test_steps_per_epoch", "loss_mode", "seed", "eval_every",
                      "checkpoint_every", "precision"):
            assert f"train.{field}" in summary["config"]
        assert summary["config"]["net.hidden"] == [8]


class TestVerifyCommand:
    def test_unknown_suite_fails_listing_choices(self, capsys):
        code = main(["verify", "everything"])
        assert code == 1
        err = capsys.readouterr().err
        assert "unknown suite" in err
        assert "identities" in err

    def test_gradient_suite_passes(self, capsys):
        code = main(["verify", "gradients"])
        out = capsys.readouterr().out
        assert code == 0
        assert "[PASS]" in out
        assert "checks passed" in out


class TestEvalCommand:
    def test_zero_network_scores_one(self, tmp_path, capsys):
        ckpt = _zero_net(tmp_path)
        code = main(["eval", str(ckpt), "ou_stationary", "1",
                     "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "1.0"

    def test_csv_dump_covers_the_evaluation_grid(self, tmp_path):
        ckpt = _zero_net(tmp_path)
        main(["eval", str(ckpt), "ou_stationary", "1", "--out", str(tmp_path)])
        lines = (tmp_path / "eval.csv").read_text().strip().splitlines()
        assert lines[0] == "x0,f,exact"
        assert len(lines) == 1 + 256

    def test_truncated_checkpoint_rejected(self, tmp_path, capsys):
        ckpt = _zero_net(tmp_path)
        blob = ckpt.read_bytes()
        bad = tmp_path / "cut.bin"
        bad.write_bytes(blob[: len(blob) // 2])
        code = main(["eval", str(bad), "ou_stationary", "1",
                     "--out", str(tmp_path)])
        assert code == 1
        assert "corrupt checkpoint" in capsys.readouterr().err

    def test_architecture_mismatch_names_widths(self, tmp_path, capsys):
        ckpt = _zero_net(tmp_path, widths=(2, 8, 1))
        code = main(["eval", str(ckpt), "ou_stationary", "1",
                     "--out", str(tmp_path)])
        assert code == 1
        err = capsys.readouterr().err
        assert "architecture mismatch" in err
        assert "expected input width 1" in err
        assert "[2, 8, 1]" in err

    def test_unknown_problem_rejected(self, tmp_path, capsys):
        ckpt = _zero_net(tmp_path)
        code = main(["eval", str(ckpt), "laplace_mystery", "1",
                     "--out", str(tmp_path)])
        assert code == 1
        assert "unknown problem" in capsys.readouterr().err


class TestArgumentErrors:
    def test_no_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1

    def test_train_requires_config_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["train"])
        assert info.value.code == 1
