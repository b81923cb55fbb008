"""Command-line interface: dataset synthesis, training, inference,
evaluation, the gradient-check suite and parameter/FLOP reports.

Exit codes: 0 ok, 1 check failure, 2 divergence, 3 usage/config error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import gradcheck as gc
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .metrics import psnr
from .moire import (
    SynthRanges,
    default_sources,
    load_dataset,
    load_png,
    make_dataset,
    save_png,
    split_dataset,
    write_dataset,
)
from .network import DemoireNet, LossConfig, ModelConfig, branch_costs, count_params
from .optim import Schedule, lr_at
from .train import demoire_image, evaluate_pairs, train, write_loss_log

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_DIVERGENCE = 2
EXIT_CONFIG = 3
EXIT_IO = 4


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(f) for f in text.split(",") if f.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _parse_grow(text: str) -> list[tuple[int, int]]:
    """Growth plan syntax: "epoch:branches[,epoch:branches...]"."""
    plan = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            epoch, branches = item.split(":")
            plan.append((int(epoch), int(branches)))
        except ValueError as exc:
            raise ConfigError(f"bad growth entry {item!r}") from exc
    return plan


# key -> (parser, default)
CONFIG_KEYS = {
    "branches": (int, 3),
    "channels": (int, 16),
    "cdr_counts": (_parse_ints, (0, 2, 3)),
    "dfe_enabled": (_parse_bool, True),
    "nonlocal_grid": (int, 2),
    "nonlocal_from_branch": (int, 2),
    "seed": (int, 0),
    "patch": (int, 32),
    "batch": (int, 4),
    "epochs": (int, 40),
    "lr": (float, 1e-3),
    "decay_every": (int, 30),
    "decay_factor": (float, 10.0),
    "finetune_lr": (float, 1e-5),
    "finetune_decay_every": (int, 50),
    "phase": (str, "base"),
    "grow": (_parse_grow, []),
    "loss_eps": (float, 1e-3),
    "n_pairs": (int, 16),
    "image_size": (int, 64),
    "angle_min": (float, 2.0),
    "angle_max": (float, 12.0),
    "scale_min": (float, 0.85),
    "scale_max": (float, 1.15),
    "period_min": (float, 3.0),
    "period_max": (float, 7.0),
    "intensity_min": (float, 0.5),
    "intensity_max": (float, 0.9),
    "cfa": (str, "RGGB"),
    "source_dir": (str, ""),
    "data_dir": (str, "data"),
    "out": (str, ""),
    "checkpoint": (str, "model.ckpt"),
    "resume": (str, ""),
}


@dataclass
class CliConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            branches=self.branches,
            channels=self.channels,
            cdr_counts=self.cdr_counts,
            dfe_enabled=self.dfe_enabled,
            nonlocal_grid=self.nonlocal_grid,
            nonlocal_from_branch=self.nonlocal_from_branch,
            seed=self.seed,
        )

    def schedule(self) -> Schedule:
        return Schedule(
            initial_lr=self.lr,
            decay_every=self.decay_every,
            decay_factor=self.decay_factor,
            finetune_lr=self.finetune_lr,
            finetune_decay_every=self.finetune_decay_every,
        )

    def synth_ranges(self) -> SynthRanges:
        return SynthRanges(
            angle=(self.angle_min, self.angle_max),
            scale=(self.scale_min, self.scale_max),
            lattice_period=(self.period_min, self.period_max),
            intensity=(self.intensity_min, self.intensity_max),
            cfa=self.cfa,
        )


def _set_key(values: dict, key: str, raw: str, origin: str):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{origin}: unknown configuration key {key!r}")
    parser, _ = CONFIG_KEYS[key]
    try:
        values[key] = parser(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key!r}: {raw!r}") from exc


def parse_config_file(path: str | Path, values: dict):
    text = Path(path).read_text(encoding="utf-8")
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, raw = line.split("=", 1)
        _set_key(values, key.strip(), raw.strip(), f"{path}:{ln}")


def build_config(args) -> CliConfig:
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if args.config:
        if not Path(args.config).exists():
            raise FileNotFoundError(f"config file not found: {args.config}")
        parse_config_file(args.config, values)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_key(values, key.strip(), raw.strip(), "command line")
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out is not None:
        values["out"] = args.out
    return CliConfig(values)


def _clean_sources(cfg: CliConfig):
    if cfg.source_dir:
        paths = sorted(Path(cfg.source_dir).glob("*.png"))
        if not paths:
            raise ConfigError(f"no PNG files in {cfg.source_dir}")
        return [load_png(p) for p in paths]
    return default_sources(cfg.n_pairs, cfg.image_size, cfg.seed)


def cmd_synth(cfg: CliConfig) -> int:
    out_dir = Path(cfg.out or cfg.data_dir)
    sources = _clean_sources(cfg)
    pairs = make_dataset(sources, cfg.synth_ranges(), cfg.n_pairs, cfg.seed)
    manifest = write_dataset(out_dir, pairs)
    mean_psnr = float(np.mean([psnr(p.moire, p.clean) for p in pairs]))
    print(f"wrote {len(pairs)} pairs to {out_dir} (manifest {manifest.name})")
    print(f"mean input psnr: {mean_psnr:.2f} dB")
    return EXIT_OK


def cmd_train(cfg: CliConfig) -> int:
    manifest = Path(cfg.data_dir) / "manifest.tsv"
    if not manifest.exists():
        raise ConfigError(f"dataset manifest not found: {manifest}")
    ckpt_path = Path(cfg.checkpoint)
    csv_path = Path(cfg.out or "loss_log.csv")

    pairs = load_dataset(manifest)
    train_pairs, val_pairs = split_dataset(pairs)

    start_epoch = 0
    adam = None
    if cfg.resume:
        ckpt = ckpt_io.load_checkpoint(cfg.resume)
        model, adam = ckpt_io.restore(ckpt)
        start_epoch = ckpt.epoch
    else:
        model = DemoireNet(cfg.model_config())

    def log_fn(row):
        val = "" if row.val_psnr is None else f" val_psnr={row.val_psnr:.2f}"
        print(f"epoch {row.epoch}: lr={row.lr:g} loss={row.train_loss:.5f}{val}")

    result = train(
        model, train_pairs, schedule=cfg.schedule(), epochs=cfg.epochs,
        batch_size=cfg.batch, patch=cfg.patch, phase=cfg.phase, seed=cfg.seed,
        val_pairs=val_pairs, start_epoch=start_epoch, grow_plan=cfg.grow,
        adam=adam, loss_cfg=LossConfig(cfg.loss_eps), log_fn=log_fn)

    ckpt_io.save_checkpoint(ckpt_path, result.checkpoint)
    write_loss_log(csv_path, result.log)
    if result.diverged:
        print("training diverged; wrote last good checkpoint", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"wrote {ckpt_path} and {csv_path}")
    return EXIT_OK


def cmd_infer(cfg: CliConfig, ckpt_path: str, in_path: str, out_path: str) -> int:
    for p in (ckpt_path, in_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")
    model, _ = ckpt_io.restore(ckpt_io.load_checkpoint(ckpt_path))
    img = load_png(in_path)
    save_png(out_path, demoire_image(model, img))
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_eval(cfg: CliConfig, ckpt_path: str, manifest_path: str) -> int:
    for p in (ckpt_path, manifest_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")
    model, _ = ckpt_io.restore(ckpt_io.load_checkpoint(ckpt_path))
    pairs = load_dataset(manifest_path)
    rows, mean = evaluate_pairs(model, pairs)
    header = f"{'pair':>6} {'psnr_in':>9} {'ssim_in':>8} {'psnr_out':>9} {'ssim_out':>9}"
    print(header)
    for r in rows + [mean]:
        print(f"{r['pair']:>6} {r['psnr_in']:9.3f} {r['ssim_in']:8.4f} "
              f"{r['psnr_out']:9.3f} {r['ssim_out']:9.4f}")
    csv_path = Path(cfg.out or "eval_report.csv")
    lines = ["pair,psnr_in,ssim_in,psnr_out,ssim_out"]
    for r in rows + [mean]:
        lines.append(f"{r['pair']},{r['psnr_in']!r},{r['ssim_in']!r},"
                     f"{r['psnr_out']!r},{r['ssim_out']!r}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_gradcheck(cfg: CliConfig, suite=None) -> int:
    reports = []
    for name, op, inputs in (suite if suite is not None
                             else gc.build_default_suite(cfg.seed)):
        report = gc.finite_diff_check(op, inputs, seed=cfg.seed, name=name)
        reports.append(report)
        print(report)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} operations passed")
    return EXIT_CHECK_FAILURE if failed else EXIT_OK


def cmd_params(cfg: CliConfig) -> int:
    h = w = cfg.image_size
    model_cfg = cfg.model_config()
    costs = branch_costs(model_cfg, h, w)
    print(f"config: branches={model_cfg.branches} channels={model_cfg.channels} "
          f"input={h}x{w}")
    print(f"{'branch':>6} {'params':>10} {'dfe_params':>10} "
          f"{'gflops':>9} {'dfe_gflops':>10}")
    for bc in costs:
        print(f"{bc.branch:>6} {bc.params_base:>10} {bc.params_dfe:>10} "
              f"{bc.flops_base / 1e9:>9.4f} {bc.flops_dfe / 1e9:>10.4f}")
    total_p = sum(bc.params_total for bc in costs)
    total_f = sum(bc.flops_total for bc in costs)
    print(f"{'total':>6} {total_p:>10} {sum(bc.params_dfe for bc in costs):>10} "
          f"{total_f / 1e9:>9.4f} {sum(bc.flops_dfe for bc in costs) / 1e9:>10.4f}")

    print("\nbranch-count sweep (same channel width):")
    print(f"{'branches':>8} {'params':>10} {'params_no_dfe':>13}")
    counts = list(model_cfg.cdr_counts)
    while len(counts) < 6:
        counts.append(counts[-1] + 1 if len(counts) > 1 else 2)
    for b in range(1, 7):
        cfg_b = ModelConfig(
            branches=b, channels=model_cfg.channels, cdr_counts=tuple(counts[:b]),
            dfe_enabled=True, nonlocal_grid=model_cfg.nonlocal_grid,
            nonlocal_from_branch=model_cfg.nonlocal_from_branch, seed=model_cfg.seed)
        cfg_nd = ModelConfig(
            branches=b, channels=model_cfg.channels, cdr_counts=tuple(counts[:b]),
            dfe_enabled=False, nonlocal_grid=model_cfg.nonlocal_grid,
            nonlocal_from_branch=model_cfg.nonlocal_from_branch, seed=model_cfg.seed)
        print(f"{b:>8} {count_params(cfg_b):>10} {count_params(cfg_nd):>13}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demoire",
        description="Multi-resolution demoireing: synthesis, training, inference.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    common(sub.add_parser("train", help="train on a synthesized dataset"))
    p_infer = sub.add_parser("infer", help="demoire a PNG image")
    p_infer.add_argument("checkpoint")
    p_infer.add_argument("input")
    p_infer.add_argument("output")
    common(p_infer)
    p_eval = sub.add_parser("eval", help="report PSNR/SSIM over a manifest")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("manifest")
    common(p_eval)
    common(sub.add_parser("gradcheck", help="verify every backward rule"))
    common(sub.add_parser("params", help="parameter and FLOP report"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        for item in extras:
            if item.startswith("-") or "=" not in item:
                raise ConfigError(f"unrecognized argument {item!r}")
        args.overrides = extras
        cfg = build_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.checkpoint, args.input, args.output)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.manifest)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.command == "params":
            return cmd_params(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
