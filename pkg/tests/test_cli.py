"""Command-line surface: artifacts, determinism, exit codes."""

import numpy as np
import pytest

import demoire as dm
from demoire.checkpoint import checkpoint_from, save_checkpoint
from demoire.cli import (
    EXIT_CHECK_FAILURE,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    build_config,
    cmd_gradcheck,
    main,
)
from demoire.errors import ConfigError
from demoire.gradcheck import kink_free_uniform
from demoire.network import DemoireNet, ModelConfig
from demoire.optim import Adam


def run(*argv):
    return main(list(argv))


SYNTH_ARGS = ["n_pairs=3", "image_size=24"]


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    """A small synthesized dataset plus a trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("synth", "--seed", "5", "--out", str(data),
               "n_pairs=4", "image_size=32") == EXIT_OK
    assert run("train", f"data_dir={data}", "epochs=2", "patch=16", "batch=2",
               f"checkpoint={root / 'm.ckpt'}", "--out", str(root / "log.csv"),
               "--seed", "5") == EXIT_OK
    return root


class TestConfig:
    def test_defaults_and_overrides(self):
        class Args:
            config = None
            overrides = ["channels=8", "dfe_enabled=false"]
            seed = 11
            out = None

        cfg = build_config(Args())
        assert cfg.channels == 8
        assert cfg.dfe_enabled is False
        assert cfg.seed == 11

    def test_config_file_with_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# a comment\nbranches = 2\ncdr_counts = 0,2\n"
                        "lr = 5e-4  # inline comment\n")

        class Args:
            config = str(path)
            overrides = []
            seed = None
            out = None

        cfg = build_config(Args())
        assert cfg.branches == 2
        assert cfg.cdr_counts == (0, 2)
        assert cfg.lr == 5e-4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("bogus = 1\n")

        class Args:
            config = str(path)
            overrides = []
            seed = None
            out = None

        with pytest.raises(ConfigError, match="bogus"):
            build_config(Args())

    def test_bad_override_shape(self):
        class Args:
            config = None
            overrides = ["branches"]
            seed = None
            out = None

        with pytest.raises(ConfigError, match="key=value"):
            build_config(Args())


class TestSynth:
    def test_writes_pairs_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run("synth", "--seed", "1", "--out", str(out),
                   "n_pairs=4", "image_size=24") == EXIT_OK
        pngs = sorted(p.name for p in out.glob("*.png"))
        assert len(pngs) == 8
        assert (out / "manifest.tsv").exists()
        assert "4 pairs" in capsys.readouterr().out

    def test_byte_identical_across_runs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--seed", "2", "--out", str(out),
                       *SYNTH_ARGS) == EXIT_OK
        for name in [p.name for p in a.iterdir()]:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_zero_intensity_reports_capped_psnr(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run("synth", "--seed", "3", "--out", str(out), *SYNTH_ARGS,
                   "intensity_min=0", "intensity_max=0") == EXIT_OK
        assert "100.00 dB" in capsys.readouterr().out

    def test_user_png_sources(self, tmp_path, capsys):
        from demoire.moire import load_png, save_png
        src_dir = tmp_path / "photos"
        src_dir.mkdir()
        for i in range(2):
            save_png(src_dir / f"photo_{i}.png", dm.uniform((1, 3, 24, 24), 0, 1, seed=i))
        out = tmp_path / "d"
        assert run("synth", "--seed", "6", "--out", str(out),
                   f"source_dir={src_dir}", "n_pairs=3") == EXIT_OK
        capsys.readouterr()
        pairs_clean = sorted(out.glob("clean_*.png"))
        assert len(pairs_clean) == 3
        # pair i uses source i mod 2 unchanged
        assert pairs_clean[0].read_bytes() == (src_dir / "photo_0.png").read_bytes()
        assert pairs_clean[2].read_bytes() == (src_dir / "photo_0.png").read_bytes()

    def test_empty_source_dir_is_config_error(self, tmp_path):
        empty = tmp_path / "photos"
        empty.mkdir()
        assert run("synth", f"source_dir={empty}", "--out",
                   str(tmp_path / "d")) == EXIT_CONFIG

    def test_help_exits_zero(self, capsys):
        assert run("--help") == EXIT_OK
        capsys.readouterr()

    def test_unwritable_path_fails_with_io_code(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        code = run("synth", "--out", str(blocker / "sub"), *SYNTH_ARGS)
        assert code == EXIT_IO


class TestTrain:
    def test_zero_epochs_writes_initial_checkpoint(self, tmp_path, trained_dir):
        ckpt = tmp_path / "init.ckpt"
        csv = tmp_path / "log.csv"
        assert run("train", f"data_dir={trained_dir / 'data'}", "epochs=0",
                   f"checkpoint={ckpt}", "--out", str(csv)) == EXIT_OK
        assert ckpt.exists()
        assert csv.read_text() == "epoch,lr,train_loss,val_psnr\n"

    def test_missing_manifest_is_config_error(self, tmp_path):
        assert run("train", f"data_dir={tmp_path}") == EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_exits_2_and_keeps_last_good(self, tmp_path, trained_dir,
                                                    capsys):
        from demoire.cli import EXIT_DIVERGENCE
        from demoire.checkpoint import load_checkpoint
        ckpt = tmp_path / "diverged.ckpt"
        code = run("train", f"data_dir={trained_dir / 'data'}", "epochs=3",
                   "patch=16", "batch=2", "lr=1e80", f"checkpoint={ckpt}",
                   "--out", str(tmp_path / "log.csv"), "--seed", "5")
        capsys.readouterr()
        assert code == EXIT_DIVERGENCE
        assert load_checkpoint(ckpt).epoch == 0  # last good state

    def test_growth_plan_extends_checkpoint(self, tmp_path, trained_dir, capsys):
        from demoire.checkpoint import load_checkpoint
        ckpt = tmp_path / "grown.ckpt"
        assert run("train", f"data_dir={trained_dir / 'data'}", "epochs=2",
                   "patch=16", "batch=2", "branches=2", "cdr_counts=0,1",
                   "channels=4", "grow=1:3", f"checkpoint={ckpt}",
                   "--out", str(tmp_path / "log.csv"), "--seed", "5") == EXIT_OK
        capsys.readouterr()
        loaded = load_checkpoint(ckpt)
        assert loaded.config.branches == 3
        assert loaded.config.cdr_counts == (0, 1, 2)

    def test_resume_uses_schedule_epoch(self, tmp_path, trained_dir, capsys):
        ckpt = trained_dir / "m.ckpt"
        out_ckpt = tmp_path / "resumed.ckpt"
        csv = tmp_path / "log.csv"
        assert run("train", f"data_dir={trained_dir / 'data'}", "epochs=1",
                   "patch=16", "batch=2", f"resume={ckpt}",
                   f"checkpoint={out_ckpt}", "--out", str(csv),
                   "lr=1e-3", "decay_every=2", "--seed", "5") == EXIT_OK
        lines = csv.read_text().splitlines()
        epoch, lr, _, _ = lines[1].split(",")
        # resumed at epoch 2 with decay every 2 -> 1e-3 / 10
        assert int(epoch) == 2
        assert float(lr) == 1e-4


class TestInfer:
    def test_deterministic_output(self, tmp_path, trained_dir):
        src = trained_dir / "data" / "moire_0000.png"
        outs = [tmp_path / "a.png", tmp_path / "b.png"]
        for out in outs:
            assert run("infer", str(trained_dir / "m.ckpt"), str(src),
                       str(out)) == EXIT_OK
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_zero_weight_checkpoint_gives_constant_bias_image(self, tmp_path):
        cfg = ModelConfig(branches=2, channels=4, cdr_counts=(0, 1), seed=0)
        model = DemoireNet(cfg)
        for p in model.params():
            if p.name != "scales":
                p.data[:] = 0.0
        biases = np.array([[0.2, 0.5, 0.8], [0.4, 0.1, 0.6]])
        for head, b in zip(model.heads, biases):
            head.bias.data[:] = b
        ckpt_path = tmp_path / "zero.ckpt"
        save_checkpoint(ckpt_path, checkpoint_from(model, Adam(model.params()), 0))

        from demoire.moire import load_png, save_png
        src = tmp_path / "in.png"
        save_png(src, dm.uniform((1, 3, 16, 16), 0, 1, seed=1))
        out = tmp_path / "out.png"
        assert run("infer", str(ckpt_path), str(src), str(out)) == EXIT_OK
        got = load_png(out)
        want = np.clip(0.5 * biases[0] + 0.5 * biases[1], 0, 1)
        want = np.round(want.astype(np.float32).astype(np.float64) * 255) / 255
        for c in range(3):
            channel = got.data[0, c]
            assert np.all(channel == channel[0, 0])
            assert abs(channel[0, 0] - want[c]) <= 1 / 255
    def test_unreadable_input_is_io_error(self, tmp_path, trained_dir):
        assert run("infer", str(trained_dir / "m.ckpt"),
                   str(tmp_path / "missing.png"), str(tmp_path / "o.png")) == EXIT_IO

    def test_corrupt_checkpoint_is_io_error(self, tmp_path, trained_dir):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"MDDM1\ngarbage")
        src = trained_dir / "data" / "moire_0000.png"
        assert run("infer", str(bad), str(src), str(tmp_path / "o.png")) == EXIT_IO


class TestEval:
    def test_report_rows_and_mean(self, tmp_path, trained_dir, capsys):
        csv = tmp_path / "report.csv"
        assert run("eval", str(trained_dir / "m.ckpt"),
                   str(trained_dir / "data" / "manifest.tsv"),
                   "--out", str(csv)) == EXIT_OK
        capsys.readouterr()
        lines = csv.read_text().splitlines()
        assert lines[0] == "pair,psnr_in,ssim_in,psnr_out,ssim_out"
        assert len(lines) == 1 + 4 + 1  # header + pairs + mean
        data_rows = [line.split(",") for line in lines[1:-1]]
        mean_row = lines[-1].split(",")
        for col in range(1, 5):
            want = np.mean([float(r[col]) for r in data_rows])
            assert float(mean_row[col]) == pytest.approx(want)

    def test_missing_pair_files_are_io_error(self, tmp_path, trained_dir, capsys):
        manifest = trained_dir / "data" / "manifest.tsv"
        broken = tmp_path / "manifest.tsv"
        broken.write_text(manifest.read_text())
        assert run("eval", str(trained_dir / "m.ckpt"), str(broken)) == EXIT_IO
        assert "clean_0000.png" in capsys.readouterr().err

    def test_identity_pairs_hit_caps(self, tmp_path):
        data = tmp_path / "d"
        assert run("synth", "--seed", "4", "--out", str(data), *SYNTH_ARGS,
                   "intensity_min=0", "intensity_max=0") == EXIT_OK
        cfg = ModelConfig(branches=1, channels=4, cdr_counts=(0,), seed=0)
        model = DemoireNet(cfg)
        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, checkpoint_from(model, Adam(model.params()), 0))
        csv = tmp_path / "r.csv"
        assert run("eval", str(ckpt), str(data / "manifest.tsv"),
                   "--out", str(csv)) == EXIT_OK
        first = csv.read_text().splitlines()[1].split(",")
        assert float(first[1]) == 100.0
        assert float(first[2]) == 1.0


class TestGradcheckCommand:
    def test_fresh_build_passes(self, capsys):
        assert run("gradcheck") == EXIT_OK
        out = capsys.readouterr().out
        assert "17/17 operations passed" in out
        assert out.count("PASS") >= 12

    def test_corrupted_backward_fails(self, capsys):
        class Broken:
            def forward(self, x):
                self._x = x.data
                return dm.Tensor(x.data * x.data)

            def backward(self, gout):
                return 3.0 * self._x * gout

            def params(self):
                return []

        class Args:
            config = None
            overrides = []
            seed = None
            out = None

        cfg = build_config(Args())
        suite = [("broken_square", Broken(), [kink_free_uniform((1, 1, 2, 2), 1)])]
        assert cmd_gradcheck(cfg, suite=suite) == EXIT_CHECK_FAILURE
        assert "FAIL" in capsys.readouterr().out


class TestParamsCommand:
    def test_sweep_is_monotone(self, capsys):
        assert run("params", "channels=16", "image_size=64") == EXIT_OK
        out = capsys.readouterr().out
        sweep = []
        in_sweep = False
        for line in out.splitlines():
            if "branch-count sweep" in line:
                in_sweep = True
                continue
            if in_sweep and line.strip() and line.split()[0].isdigit():
                fields = line.split()
                sweep.append((int(fields[1]), int(fields[2])))
        assert len(sweep) == 6
        totals = [s[0] for s in sweep]
        assert all(a < b for a, b in zip(totals, totals[1:]))
        for with_dfe, without in sweep:
            assert without <= with_dfe

    def test_invalid_model_config_is_config_error(self):
        assert run("params", "branches=9") == EXIT_CONFIG


class TestExitCodes:
    def test_unknown_key_is_config_error(self):
        assert run("synth", "bogus=1") == EXIT_CONFIG

    def test_unknown_command_is_usage_error(self, capsys):
        assert run("frobnicate") == EXIT_CONFIG
        capsys.readouterr()

    def test_missing_config_file_is_io_error(self):
        assert run("synth", "--config", "/nonexistent/run.cfg") == EXIT_IO
