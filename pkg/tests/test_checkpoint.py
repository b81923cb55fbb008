"""Checkpoint wire format: byte-exact round trips and corruption handling."""

import numpy as np
import pytest

import demoire as dm
from demoire.checkpoint import (
    MAGIC,
    checkpoint_from,
    load_checkpoint,
    restore,
    save_checkpoint,
)
from demoire.errors import FormatError
from demoire.network import DemoireNet, ModelConfig
from demoire.optim import Adam


@pytest.fixture
def small_setup():
    cfg = ModelConfig(branches=2, channels=4, cdr_counts=(0, 1), seed=7,
                      nonlocal_from_branch=2)
    model = DemoireNet(cfg)
    adam = Adam(model.params(), lr=2e-4)
    return cfg, model, adam


def test_save_load_save_is_byte_identical(tmp_path, small_setup):
    _, model, adam = small_setup
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(a, checkpoint_from(model, adam, epoch=3))
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_preserves_config_and_counters(tmp_path, small_setup):
    cfg, model, adam = small_setup
    adam.step_count = 17
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=5))
    ckpt = load_checkpoint(path)
    assert ckpt.config == cfg
    assert ckpt.epoch == 5
    assert ckpt.step == 17
    assert ckpt.lr == pytest.approx(2e-4, rel=1e-6)


def test_inference_drift_after_round_trip(tmp_path, small_setup):
    _, model, adam = small_setup
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=0))
    restored, _ = restore(load_checkpoint(path))
    x = dm.uniform((1, 3, 16, 16), 0, 1, seed=1)
    before = model.forward(x).data
    after = restored.forward(x).data
    assert np.abs(before - after).max() <= 1e-6


def test_optimizer_moments_round_trip(tmp_path, small_setup):
    _, model, adam = small_setup
    for p in model.params():
        p.grad[:] = np.random.default_rng(0).normal(size=p.data.shape)
    adam.step()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=1))
    _, adam2 = restore(load_checkpoint(path))
    assert adam2.step_count == 1
    for name in adam.m:
        assert np.abs(adam2.m[name] - adam.m[name]).max() < 1e-6


def test_truncated_file_names_offset(tmp_path, small_setup):
    _, model, adam = small_setup
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=0))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError, match="byte"):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOPE1\n" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path, small_setup):
    _, model, adam = small_setup
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=0))
    path.write_bytes(path.read_bytes() + b"extra")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def test_malformed_manifest_line(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(MAGIC + b"name 1 2\n\n" + b"\x00" * 8)
    with pytest.raises(FormatError, match="manifest"):
        load_checkpoint(path)


def test_restore_rejects_unknown_parameter(tmp_path, small_setup):
    _, model, adam = small_setup
    ckpt = checkpoint_from(model, adam, epoch=0)
    ckpt.params["branch9.bogus"] = np.zeros(3)
    with pytest.raises(FormatError, match="bogus"):
        restore(ckpt)


def test_params_stored_single_precision(tmp_path, small_setup):
    _, model, adam = small_setup
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint_from(model, adam, epoch=0))
    ckpt = load_checkpoint(path)
    for name, arr in ckpt.params.items():
        assert np.array_equal(arr, arr.astype(np.float32).astype(np.float64)), name
