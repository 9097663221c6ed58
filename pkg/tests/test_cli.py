"""End-to-end command-line behaviour and exit codes."""

import numpy as np
import pytest
from conftest import synthetic_facts, write_dataset_dir

from hycube.cli import main
from hycube.config import RunConfig
from hycube.training import EpochRecord


@pytest.fixture
def data_dir(tmp_path):
    facts = synthetic_facts(n_tuples=14, n_entities=8, arities=(2, 3), seed=11)
    return write_dataset_dir(
        tmp_path / "data", train=facts, valid=facts[:6], test=facts[6:10]
    )


def run_train(data_dir, out_dir, *extra):
    args = [
        "train",
        "--data", str(data_dir),
        "--out", str(out_dir),
        "--d", "8",
        "--channels", "4",
        "--lr", "0.05",
        "--batch", "8",
        "--max-epochs", "2",
        "--patience", "2",
        "--seed", "3",
    ]
    return main(args + list(extra))


class TestTrainCommand:
    def test_writes_all_outputs(self, data_dir, tmp_path, capsys):
        out = tmp_path / "run1"
        assert run_train(data_dir, out) == 0
        for name in ("config.txt", "epochs.log", "best.ckpt",
                     "metrics_valid.txt", "metrics_test.txt"):
            assert (out / name).exists(), name
        printed = capsys.readouterr().out
        assert "epoch=1" in printed and "stopped:" in printed

    def test_config_snapshot_parses_and_pins_flags(self, data_dir, tmp_path):
        out = tmp_path / "run2"
        assert run_train(data_dir, out, "--kernel-pad", "2",
                         "--stack", "standard", "--padding", "zero") == 0
        text = (out / "config.txt").read_text()
        cfg = RunConfig.from_text(text)
        assert cfg.kernel == 5 and cfg.pad == 2
        assert cfg.stack == "standard" and cfg.padding_mode == "zero"
        assert f"# data=" in text

    def test_epoch_log_round_trips(self, data_dir, tmp_path):
        out = tmp_path / "run3"
        assert run_train(data_dir, out) == 0
        lines = (out / "epochs.log").read_text().splitlines()
        assert len(lines) >= 1
        for line in lines:
            assert EpochRecord.from_line(line).to_line() == line

    def test_seeded_runs_match(self, data_dir, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_train(data_dir, out1) == 0
        assert run_train(data_dir, out2) == 0
        assert (out1 / "best.ckpt").read_bytes() == (out2 / "best.ckpt").read_bytes()

    def test_variant_flag_spelling(self, data_dir, tmp_path):
        out = tmp_path / "plus"
        assert run_train(data_dir, out, "--variant", "hycube-plus",
                         "--channels", "8") == 0
        assert "variant=hycube_plus" in (out / "config.txt").read_text()

    def test_sampled_mode_without_rate_fails_before_data(self, tmp_path):
        code = main([
            "train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o"),
            "--neg-mode", "sampled",
        ])
        assert code == 1  # usage error, not a data error

    def test_missing_data_dir(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_unknown_flag(self, tmp_path):
        assert main(["train", "--data", "x", "--out", "y", "--bogus"]) == 1

    def test_bad_dropout_spec(self, data_dir, tmp_path):
        assert run_train(data_dir, tmp_path / "o", "--dropout", "a,b") == 1

    def test_divergence_exit_code(self, data_dir, tmp_path):
        out = tmp_path / "div"
        code = run_train(data_dir, out, "--lr", "1e25")
        assert code == 3


class TestEvalCommand:
    def test_eval_matches_train_metrics(self, data_dir, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_train(data_dir, out) == 0
        train_metrics = (out / "metrics_test.txt").read_text()
        evald = tmp_path / "evald"
        code = main(["eval", "--checkpoint", str(out / "best.ckpt"),
                     "--data", str(data_dir), "--split", "test",
                     "--out", str(evald)])
        assert code == 0
        assert (evald / "metrics_test.txt").read_text() == train_metrics

    def test_vocab_mismatch_refused(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert run_train(data_dir, out) == 0
        other = write_dataset_dir(
            tmp_path / "other",
            train=[("q", ["x", "y"])], valid=[("q", ["x", "y"])],
            test=[("q", ["y", "x"])],
        )
        code = main(["eval", "--checkpoint", str(out / "best.ckpt"),
                     "--data", str(other), "--split", "test"])
        assert code == 2

    def test_corrupt_checkpoint(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert run_train(data_dir, out) == 0
        ckpt = out / "best.ckpt"
        ckpt.write_bytes(ckpt.read_bytes()[:-30])
        code = main(["eval", "--checkpoint", str(ckpt),
                     "--data", str(data_dir), "--split", "test"])
        assert code == 2


class TestStatsAndExtract:
    def test_stats_prints_counts(self, data_dir, capsys):
        assert main(["stats", "--data", str(data_dir)]) == 0
        out = capsys.readouterr().out
        assert "relations" in out and "entities=8" in out

    def test_extract_fixed_arity(self, data_dir, tmp_path, capsys):
        out = tmp_path / "sub"
        assert main(["extract-fixed-arity", "--data", str(data_dir),
                     "--arity", "3", "--out", str(out)]) == 0
        assert (out / "train.txt").exists()
        assert main(["stats", "--data", str(out)]) == 0

    def test_extract_missing_arity_refused(self, data_dir, tmp_path):
        code = main(["extract-fixed-arity", "--data", str(data_dir),
                     "--arity", "9", "--out", str(tmp_path / "nope")])
        assert code == 2
