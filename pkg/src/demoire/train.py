"""Mini-batch training on synthetic pairs, with optional branch growth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, checkpoint_from
from .errors import ConfigError, DivergenceError
from .metrics import psnr, ssim
from .moire import ImagePair, sample_patch
from .network import DemoireNet, LossConfig, charbonnier_loss, grow_model
from .optim import Adam, Schedule, lr_at
from .tensor import Tensor


@dataclass
class TrainLogRow:
    epoch: int
    lr: float
    train_loss: float
    val_psnr: float | None = None


@dataclass
class TrainResult:
    model: DemoireNet
    adam: Adam
    log: list[TrainLogRow]
    diverged: bool
    checkpoint: Checkpoint


def _patch_seed(seed: int, epoch: int, index: int) -> int:
    h = (seed * 1000003 + epoch) % (1 << 31)
    return (h * 1000003 + index) % (1 << 31)


def _batch(pairs: list[ImagePair], idxs, patch: int, seed: int,
           epoch: int) -> tuple[Tensor, Tensor]:
    crops = [sample_patch(pairs[i], patch, _patch_seed(seed, epoch, int(i)))
             for i in idxs]
    moire = np.concatenate([c.moire.data for c in crops], axis=0)
    clean = np.concatenate([c.clean.data for c in crops], axis=0)
    return Tensor(moire), Tensor(clean)


def train(model: DemoireNet, train_pairs: list[ImagePair], *,
          schedule: Schedule, epochs: int, batch_size: int = 4, patch: int = 32,
          phase: str = "base", seed: int = 0,
          val_pairs: list[ImagePair] | None = None, start_epoch: int = 0,
          grow_plan: list[tuple[int, int]] | None = None,
          adam: Adam | None = None, loss_cfg: LossConfig = LossConfig(),
          log_fn=None) -> TrainResult:
    """Run ``epochs`` passes of Adam over random aligned patches.

    ``grow_plan`` is a list of (epoch, branches) events; at the start of the
    named epoch the model is extended to that branch count, carrying all
    existing parameters over bitwise. A non-finite loss or gradient aborts
    training and returns the checkpoint taken at the last epoch boundary.
    """
    if not train_pairs:
        raise ConfigError("training set is empty")
    grow_plan = sorted(grow_plan or [])
    max_branches = max([model.cfg.branches] + [b for _, b in grow_plan])
    max_div = 1 << (max_branches - 1)
    if patch % max_div:
        raise ConfigError(
            f"patch size {patch} must be divisible by {max_div} "
            f"(largest planned branch count {max_branches})")
    for pair in train_pairs:
        _, _, h, w = pair.clean.shape
        if patch > h or patch > w:
            raise ConfigError(f"patch size {patch} exceeds image {h}x{w}")

    if adam is None:
        adam = Adam(model.params(), lr=lr_at(start_epoch, schedule, phase))
    log: list[TrainLogRow] = []
    last_good = checkpoint_from(model, adam, start_epoch)

    for k in range(epochs):
        epoch = start_epoch + k
        for g_epoch, g_branches in grow_plan:
            if g_epoch == epoch and g_branches > model.cfg.branches:
                model = grow_model(model, g_branches)
                grown = Adam(model.params(), lr=adam.lr,
                             beta1=adam.beta1, beta2=adam.beta2, eps=adam.eps)
                grown.carry_state_from(adam)
                adam = grown
        adam.lr = lr_at(epoch, schedule, phase)
        order = np.random.default_rng([seed, epoch]).permutation(len(train_pairs))
        losses = []
        try:
            for b0 in range(0, len(order), batch_size):
                x, y = _batch(train_pairs, order[b0:b0 + batch_size],
                              patch, seed, epoch)
                out = model.forward(x)
                loss, grad = charbonnier_loss(out, y, loss_cfg)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                adam.zero_grad()
                model.backward(grad)
                adam.step()
                losses.append(loss)
        except DivergenceError:
            return TrainResult(model, adam, log, True, last_good)
        row = TrainLogRow(epoch=epoch, lr=adam.lr, train_loss=float(np.mean(losses)))
        if val_pairs:
            row.val_psnr = float(np.mean(
                [psnr(demoire_image(model, p.moire), p.clean) for p in val_pairs]))
        log.append(row)
        if log_fn is not None:
            log_fn(row)
        last_good = checkpoint_from(model, adam, epoch + 1)

    return TrainResult(model, adam, log, False, last_good)


def demoire_image(model: DemoireNet, img: Tensor) -> Tensor:
    """Full-image inference; reflect-pads to the required divisor and crops
    back, clamping the result to [0, 1]."""
    n, c, h, w = img.shape
    div = model.cfg.inference_divisor
    pad_h = (-h) % div
    pad_w = (-w) % div
    data = img.data
    if pad_h or pad_w:
        if pad_h >= h or pad_w >= w:
            raise ConfigError(
                f"image {h}x{w} too small to pad to a multiple of {div}")
        data = np.pad(data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    out = model.forward(Tensor(data)).data
    out = out[:, :, :h, :w]
    return Tensor(np.clip(out, 0.0, 1.0))


def evaluate_pairs(model: DemoireNet, pairs: list[ImagePair]):
    """Per-pair and mean input/output PSNR and SSIM rows."""
    rows = []
    for i, pair in enumerate(pairs):
        out = demoire_image(model, pair.moire)
        rows.append({
            "pair": i,
            "psnr_in": psnr(pair.moire, pair.clean),
            "ssim_in": ssim(pair.moire, pair.clean),
            "psnr_out": psnr(out, pair.clean),
            "ssim_out": ssim(out, pair.clean),
        })
    mean = {"pair": "mean"}
    for key in ("psnr_in", "ssim_in", "psnr_out", "ssim_out"):
        mean[key] = float(np.mean([r[key] for r in rows])) if rows else float("nan")
    return rows, mean


def write_loss_log(path: str | Path, rows: list[TrainLogRow]):
    lines = ["epoch,lr,train_loss,val_psnr"]
    for r in rows:
        val = "" if r.val_psnr is None else repr(r.val_psnr)
        lines.append(f"{r.epoch},{r.lr!r},{r.train_loss!r},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
