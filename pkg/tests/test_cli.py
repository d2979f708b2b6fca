"""Config parsing and the command-line surface."""

import json
import os

import pytest

from cocgan import imageio
from cocgan.cli import run_cli
from cocgan.config import KEYS, parse_config, parse_config_text, resolve
from cocgan.errors import ConfigurationError
from cocgan.models import default_config

from conftest import mnist_paths

QUICK = ["--dataset", "blobs", "--blobs-n", "64", "--batch", "32", "--epochs", "1", "--seed", "7"]


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("# nothing here\n\n")
        rc = parse_config(path)
        assert rc.lr == 2e-4 and rc.batch == 256 and rc.epochs == 50 and rc.mode == "vanilla"
        g, d = rc.model_configs()
        assert g == default_config("generator")
        assert d == default_config("discriminator")

    def test_flag_beats_file(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("lr = 1e-3  # file value\nbatch=64\n")
        rc = parse_config(path, {"lr": 2e-4})
        assert rc.lr == 2e-4 and rc.batch == 64
        assert rc.origins["batch"].endswith(":2")

    def test_unknown_key_has_line_number(self):
        with pytest.raises(ConfigurationError, match=r"cfg:3: unknown key 'learning_rate'"):
            parse_config_text("lr=1e-3\n\nlearning_rate=2\n", "cfg")

    def test_bad_value_has_line_number(self):
        with pytest.raises(ConfigurationError, match=r"cfg:1: bad value for batch"):
            parse_config_text("batch=many\n", "cfg")

    def test_missing_equals(self):
        with pytest.raises(ConfigurationError, match="key=value"):
            parse_config_text("lr 1e-3\n", "cfg")

    @pytest.mark.parametrize("text,match", [("centers_s1=3", "perfect square"), ("centers_s2=4", "tile"),
                                            ("mode=hinge", "one of"), ("batch=0", "positive"),
                                            ("g_dims=64", "two widths")])
    def test_invariant_violations(self, text, match):
        with pytest.raises(ConfigurationError, match=match):
            resolve(parse_config_text(text, "cfg"))

    def test_invariant_error_names_origin(self):
        with pytest.raises(ConfigurationError, match=r"cfg:1: centers_s1"):
            resolve(parse_config_text("centers_s1=3", "cfg"))

    def test_dims_override(self):
        rc = resolve(parse_config_text("g_dims=32,16\nd_dims=8,16,32\n", "cfg"))
        g, d = rc.model_configs()
        assert [s.dim_out for s in g.stages] == [32, 16, 1]
        assert [s.dim_out for s in d.stages] == [8, 16, 32]

    def test_boolean_values(self):
        assert resolve(parse_config_text("conditional=yes", "c")).conditional is True
        with pytest.raises(ConfigurationError):
            parse_config_text("conditional=maybe", "c")

    def test_training_extensions_reach_train_config(self):
        tc = resolve(parse_config_text("schedule_horizon=50\nmatch_aware=true\n", "c")).train_config()
        assert (tc.schedule_horizon, tc.match_aware) == (50, True)
        tc = resolve(parse_config_text("", "c")).train_config()
        assert (tc.schedule_horizon, tc.match_aware) == (0, False)

    def test_every_key_has_help(self):
        assert all(k.help for k in KEYS)


class TestCli:
    def test_train_writes_run_directory(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli(["train", "--mode", "wgan", "--lr", "2e-4", "--grid", "2", "--out", str(out)] + QUICK)
        assert code == 0, capsys.readouterr().err
        files = sorted(os.listdir(out))
        assert files == ["epoch_001.cocg", "final.cocg", "manifest.json", "samples_epoch001.pgm", "train_log.tsv"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["lr"] == 2e-4 and manifest["config"]["mode"] == "wgan"
        assert manifest["seed"] == 7 and manifest["code_version"]
        assert not [p for p in os.listdir(tmp_path) if "partial" in p]

    def test_manifest_echoes_default_hyperparameters(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(["train", "--mode", "wgan", "--lr", "2e-4", "--batch", "256", "--dataset", "blobs",
                        "--blobs-n", "256", "--epochs", "1", "--out", str(out)]) == 0
        config = json.loads((out / "manifest.json").read_text())["config"]
        assert config["lr"] == 2e-4 and config["batch"] == 256

    def test_failed_run_leaves_nothing_behind(self, tmp_path):
        out = tmp_path / "run"
        # 10 images hold no batch of 256
        assert run_cli(["train", "--batch", "256", "--dataset", "blobs", "--blobs-n", "10", "--epochs", "1",
                        "--out", str(out)]) == 2
        assert os.listdir(tmp_path) == []

    def test_config_file_is_echoed(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("lr=2e-4\nbatch=256\n")
        rc = parse_config(cfg, {}, "train")
        from cocgan.cli import manifest_for

        m = manifest_for(rc)
        assert m["config"]["lr"] == 2e-4 and m["config"]["batch"] == 256
        assert m["config_text"] == "lr=2e-4\nbatch=256\n"

    def test_refuses_existing_output(self, tmp_path, capsys):
        out = tmp_path / "run"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert run_cli(["train", "--out", str(out)] + QUICK) == 2
        assert "already exists" in capsys.readouterr().err
        assert os.listdir(out) == ["keep.txt"]

    def test_missing_dataset_file(self, tmp_path, capsys):
        code = run_cli(["train", "--images", str(tmp_path / "x"), "--labels", str(tmp_path / "y"),
                        "--out", str(tmp_path / "run")])
        err = capsys.readouterr().err
        assert code == 1 and err.count("\n") == 1 and "no such file" in err
        assert not (tmp_path / "run").exists()

    def test_unknown_flag(self, capsys):
        assert run_cli(["train", "--learning-rate", "1"]) == 2

    def test_unknown_command(self):
        assert run_cli(["serve"]) == 2

    def test_generate_conditional_rows(self, tmp_path):
        run = tmp_path / "run"
        assert run_cli(["train", "--conditional", "--out", str(run)] + QUICK) == 0
        stem = tmp_path / "grid"
        assert run_cli(["generate", "--checkpoint", str(run / "final.cocg"), "--conditional", "--classes", "10",
                        "--grid", "10", "--out", str(stem)]) == 0
        canvas = imageio.read_pnm(str(stem) + ".pgm")
        assert canvas.shape == (10 * 28 + 11 * 2, 10 * 28 + 11 * 2)

    def test_generate_rejects_incompatible_checkpoint(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert run_cli(["train", "--out", str(run)] + QUICK) == 0
        code = run_cli(["generate", "--checkpoint", str(run / "final.cocg"), "--conditional",
                        "--out", str(tmp_path / "g")])
        assert code == 2 and "incompatible checkpoint" in capsys.readouterr().err
        assert not (tmp_path / "g.pgm").exists()

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        bad = tmp_path / "bad.cocg"
        bad.write_bytes(b"COCG\x01\x00")
        assert run_cli(["generate", "--checkpoint", str(bad), "--out", str(tmp_path / "g")]) == 1
        assert "truncated" in capsys.readouterr().err

    def test_visualize_is_deterministic(self, tmp_path):
        run = tmp_path / "run"
        assert run_cli(["train", "--out", str(run)] + QUICK) == 0
        outs = []
        for k in range(2):
            out = tmp_path / f"vis{k}"
            assert run_cli(["visualize", "--checkpoint", str(run / "final.cocg"), "--n-images", "3",
                            "--out", str(out)]) == 0
            outs.append(out)
        for name in ("panel.ppm", "overlay_00.ppm", "assignments.tsv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_visualize_rejects_bad_centers(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert run_cli(["train", "--out", str(run)] + QUICK) == 0
        code = run_cli(["visualize", "--checkpoint", str(run / "final.cocg"), "--centers", "9",
                        "--out", str(tmp_path / "vis")])
        assert code == 2 and not (tmp_path / "vis").exists()

    def test_train_extractor_and_evaluate(self, tmp_path):
        ext = tmp_path / "ext.cocg"
        assert run_cli(["train-extractor", "--dataset", "blobs", "--blobs-n", "640", "--extractor-epochs", "3",
                        "--extractor-floor", "0.9", "--out", str(ext)]) == 0
        run = tmp_path / "run"
        assert run_cli(["train", "--out", str(run)] + QUICK) == 0
        report = tmp_path / "m.txt"
        assert run_cli(["evaluate", "--checkpoint", str(run / "final.cocg"), "--extractor", str(ext),
                        "--dataset", "blobs", "--blobs-n", "100", "--n-samples", "100", "--out", str(report)]) == 0
        text = report.read_text()
        assert text.startswith("fid=") and "extractor_hash=" in text

    def test_extractor_below_floor_fails(self, tmp_path, capsys):
        ext = tmp_path / "ext.cocg"
        code = run_cli(["train-extractor", "--dataset", "blobs", "--blobs-n", "20", "--extractor-epochs", "1",
                        "--extractor-floor", "1.0", "--out", str(ext)])
        assert code == 1 and "floor" in capsys.readouterr().err

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COCGAN_THREADS", "1")
        assert run_cli(["train", "--out", str(tmp_path / "run")] + QUICK) == 0
        monkeypatch.setenv("COCGAN_THREADS", "zero")
        assert run_cli(["train", "--out", str(tmp_path / "run2")] + QUICK) == 2

    def test_mnist_paths_accepted(self, tmp_path):
        images, labels = mnist_paths("test")
        assert run_cli(["train", "--images", images, "--labels", labels, "--limit", "64", "--batch", "32",
                        "--epochs", "1", "--out", str(tmp_path / "run")]) == 0
