import json
import os

import pytest

from qdren.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    rc = run(["gen", "--task", "single-fact", "--n", "60", "--n-valid", "20",
              "--n-test", "20", "--entities", "3", "--locations", "3",
              "--story-len", "3", "--seed", "7", "--out", str(d)])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "config.json"
    cfg.write_text(json.dumps({
        "d": 8, "z": 3, "mode": "QDREN", "lr": 0.01, "dropout": 0.0,
        "batch_size": 16, "seed": 0, "max_epochs": 3,
        "data_dir": str(data_dir), "out_dir": str(out), "patience": 3,
    }))
    rc = run(["train", "--config", str(cfg)])
    assert rc == 0
    return out


class TestGen:
    def test_writes_three_files(self, data_dir):
        for name in ("train.txt", "valid.txt", "test.txt"):
            assert (data_dir / name).exists()

    def test_rerun_refused_without_force(self, data_dir, capsys):
        rc = run(["gen", "--task", "single-fact", "--n", "10", "--seed", "7",
                  "--out", str(data_dir)])
        assert rc == 1

    def test_rerun_bit_identical_with_force(self, data_dir, tmp_path):
        before = (data_dir / "train.txt").read_bytes()
        rc = run(["gen", "--task", "single-fact", "--n", "60", "--n-valid", "20",
                  "--n-test", "20", "--entities", "3", "--locations", "3",
                  "--story-len", "3", "--seed", "7", "--out", str(data_dir),
                  "--force"])
        assert rc == 0
        assert (data_dir / "train.txt").read_bytes() == before

    def test_cloze_files_have_candidates(self, tmp_path):
        rc = run(["gen", "--task", "entity-cloze", "--n", "10", "--entities", "4",
                  "--seed", "1", "--out", str(tmp_path)])
        assert rc == 0
        assert "CANDIDATES\t" in (tmp_path / "train.txt").read_text()

    def test_invalid_task_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run(["gen", "--task", "nonsense", "--out", str(tmp_path)])
        assert e.value.code == 2


class TestTrain:
    def test_outputs_exist(self, trained):
        assert (trained / "checkpoint.manifest.json").exists()
        assert (trained / "checkpoint.weights.bin").exists()
        assert (trained / "report.csv").exists()
        assert (trained / "config.json").exists()

    def test_resolved_config_rejects_unknown_keys(self, tmp_path, data_dir):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"d": 8, "nonsense_key": 1,
                                   "data_dir": str(data_dir)}))
        assert run(["train", "--config", str(cfg)]) == 1

    def test_rerun_identical_report(self, trained, data_dir, tmp_path):
        out2 = tmp_path / "rerun"
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "d": 8, "z": 3, "mode": "QDREN", "lr": 0.01, "dropout": 0.0,
            "batch_size": 16, "seed": 0, "max_epochs": 3,
            "data_dir": str(data_dir), "out_dir": str(out2), "patience": 3,
        }))
        assert run(["train", "--config", str(cfg)]) == 0
        assert (out2 / "report.csv").read_text() == (trained / "report.csv").read_text()


class TestEval:
    def test_eval_prints_metrics(self, trained, data_dir, capsys):
        rc = run(["eval", "--checkpoint", str(trained / "checkpoint"),
                  "--data", str(data_dir / "test.txt")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "accuracy=" in out and "error=" in out

    def test_missing_checkpoint_exit_1(self, data_dir):
        assert run(["eval", "--checkpoint", "/nonexistent/ckpt",
                    "--data", str(data_dir / "test.txt")]) == 1

    def test_vocab_mismatch_reported(self, trained, tmp_path):
        alien = tmp_path / "alien.txt"
        alien.write_text("1 zork moved to the moonbase .\n"
                         "2 where is zork ?\tmoonbase\t1\n")
        assert run(["eval", "--checkpoint", str(trained / "checkpoint"),
                    "--data", str(alien)]) == 1


class TestGates:
    def test_csv_shape(self, trained, data_dir, tmp_path, capsys):
        out = tmp_path / "gates.csv"
        rc = run(["gates", "--checkpoint", str(trained / "checkpoint"),
                  "--data", str(data_dir / "test.txt"), "--story", "0",
                  "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "block,step,sentence,gate"
        # z=3 blocks, 3 sentences per story
        assert len(lines) == 1 + 3 * 3
        for row in lines[1:]:
            gate = float(row.rsplit(",", 1)[1])
            assert 0.0 < gate < 1.0

    def test_story_index_out_of_range(self, trained, data_dir):
        assert run(["gates", "--checkpoint", str(trained / "checkpoint"),
                    "--data", str(data_dir / "test.txt"), "--story", "9999"]) == 1


class TestGradcheck:
    def test_oversized_d_usage_error(self):
        with pytest.raises(SystemExit) as e:
            run(["gradcheck", "--d", "64"])
        assert e.value.code == 2

    def test_single_config_passes(self, capsys):
        rc = run(["gradcheck", "--mode", "qdren", "--phi", "sigmoid",
                  "--style", "sentences"])
        assert rc == 0
        assert "ok" in capsys.readouterr().out

    def test_corrupted_gradient_exit_3(self, capsys):
        rc = run(["gradcheck", "--mode", "ren", "--phi", "sigmoid",
                  "--style", "sentences", "--corrupt"])
        assert rc == 3
        assert "worst" in capsys.readouterr().err


class TestSearchCompare:
    def test_search_writes_ranked_trials(self, data_dir, tmp_path):
        out = tmp_path / "search"
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "d": 8, "z": 3, "lr": 0.01, "dropout": 0.0, "batch_size": 16,
            "max_epochs": 1, "data_dir": str(data_dir), "out_dir": str(out),
            "patience": 0,
        }))
        rc = run(["search", "--config", str(cfg), "--budget", "2", "--seed", "3"])
        assert rc == 0
        lines = (out / "trials.csv").read_text().strip().splitlines()
        assert lines[0].startswith("rank,trial,val_acc")
        assert len(lines) == 3

    def test_compare_reports_deltas(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({
            "d": 8, "z": 3, "lr": 0.01, "dropout": 0.0, "batch_size": 16,
            "max_epochs": 1, "data_dir": str(data_dir), "patience": 0,
        }))
        rc = run(["compare", "--config", str(cfg), "--seeds", "0,1,2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mean_delta=" in out
        assert len(out.strip().splitlines()) == 5
