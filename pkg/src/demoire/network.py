"""Multi-resolution demoireing model: shared downsampling encoder, one
decoder per resolution branch, learned per-branch output scaling, and the
smooth-L1 (Charbonnier) training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    AdaIn,
    CdrBlock,
    Conv2d,
    DfeEncoderStep,
    Downsample,
    Module,
    NonLocalBlock,
    Param,
    PReLU,
    UpsampleBlock,
)
from .tensor import Tensor

GROWTH_SCALE_INIT = 0.05


def attention_reduction(channels: int) -> int:
    """Largest bottleneck reduction <= 16 that divides the channel count."""
    for r in (16, 8, 4, 2, 1):
        if channels % r == 0:
            return r
    raise ConfigError(f"invalid channel count {channels}")


@dataclass(frozen=True)
class ModelConfig:
    """Full architectural description of one model instance."""

    branches: int
    channels: int
    cdr_counts: tuple[int, ...]
    dfe_enabled: bool = True
    nonlocal_grid: int = 2
    nonlocal_from_branch: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cdr_counts", tuple(int(c) for c in self.cdr_counts))
        if not 1 <= self.branches <= 6:
            raise ConfigError(f"branches must be in [1, 6], got {self.branches}")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if len(self.cdr_counts) != self.branches:
            raise ConfigError(
                f"cdr_counts must have {self.branches} entries, got {len(self.cdr_counts)}")
        rest = self.cdr_counts[1:]
        if any(c < 1 for c in rest):
            raise ConfigError("cdr_counts for branches >= 1 must be positive")
        if any(a > b for a, b in zip(rest, rest[1:])):
            raise ConfigError("cdr_counts must be non-decreasing from branch 1 upward")
        if self.nonlocal_grid < 1:
            raise ConfigError("nonlocal_grid must be >= 1")
        if self.nonlocal_from_branch < 1:
            raise ConfigError("nonlocal_from_branch must be >= 1")
        if self.branches > self.nonlocal_from_branch and self.channels % 2:
            raise ConfigError("channels must be even when non-local blocks are present")

    @property
    def required_divisor(self) -> int:
        return 1 << (self.branches - 1)

    @property
    def inference_divisor(self) -> int:
        """Spatial multiple at which every branch's region grid also divides
        its feature map; used when reflect-padding arbitrary images."""
        if any(self.has_nonlocal(i) for i in range(1, self.branches)):
            return self.required_divisor * self.nonlocal_grid
        return self.required_divisor

    def has_nonlocal(self, branch: int) -> bool:
        return branch >= self.nonlocal_from_branch


def desk_config(seed: int = 0, **overrides) -> ModelConfig:
    """Small configuration suitable for CPU-only experiments."""
    base = dict(branches=3, channels=16, cdr_counts=(0, 2, 3), seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


def reference_cdr_counts(branches: int) -> tuple[int, ...]:
    """Progressively deeper branch bodies for the full-size layout."""
    return tuple([0, 3, 4, 5, 6, 7][:branches])


def reference_config(branches: int = 6, seed: int = 0, **overrides) -> ModelConfig:
    base = dict(branches=branches, channels=64,
                cdr_counts=reference_cdr_counts(branches), seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


class Branch0(Module):
    """Full-resolution entry: three 3x3 conv + PReLU stages, 3 -> C channels."""

    def __init__(self, channels: int, seed: int):
        rng = np.random.default_rng([seed, 0])
        self.convs = [
            Conv2d(3, channels, 3, rng=rng, name="branch0.conv1"),
            Conv2d(channels, channels, 3, rng=rng, name="branch0.conv2"),
            Conv2d(channels, channels, 3, rng=rng, name="branch0.conv3"),
        ]
        self.acts = [PReLU(channels, name=f"branch0.act{i + 1}") for i in range(3)]

    def params(self):
        out = []
        for conv, act in zip(self.convs, self.acts):
            out += conv.params() + act.params()
        return out

    def forward(self, img: Tensor) -> Tensor:
        x = img
        for conv, act in zip(self.convs, self.acts):
            x = act.forward(conv.forward(x))
        return x

    def backward(self, gout: np.ndarray) -> np.ndarray:
        for conv, act in zip(reversed(self.convs), reversed(self.acts)):
            gout = conv.backward(act.backward(gout))
        return gout


class Branch(Module):
    """One downsampled resolution branch.

    Consumes the previous encoder feature, halves it, runs the residual
    body (each block optionally modulated by the statistics encoder),
    applies region attention on the deeper branches, and upsamples back to
    the original resolution.
    """

    def __init__(self, index: int, cfg: ModelConfig):
        if index < 1:
            raise ConfigError("Branch index starts at 1")
        rng = np.random.default_rng([cfg.seed, index])
        c = cfg.channels
        red = attention_reduction(c)
        n_cdr = cfg.cdr_counts[index]
        self.index = index
        self.down = Downsample(c, rng=rng, name=f"branch{index}.down")
        self.cdrs = [CdrBlock(c, red, rng=rng, name=f"branch{index}.cdr{j}")
                     for j in range(n_cdr)]
        self.dfe_steps = ([DfeEncoderStep(c, rng=rng, name=f"branch{index}.dfe{j}")
                           for j in range(n_cdr)] if cfg.dfe_enabled else [])
        self.nonlocal_block = (NonLocalBlock(c, cfg.nonlocal_grid, rng=rng,
                                             name=f"branch{index}.nl")
                               if cfg.has_nonlocal(index) else None)
        self.up = UpsampleBlock(c, index, rng=rng, name=f"branch{index}.up")

    def params(self):
        out = self.down.params()
        for cdr in self.cdrs:
            out += cdr.params()
        for step in self.dfe_steps:
            out += step.params()
        if self.nonlocal_block is not None:
            out += self.nonlocal_block.params()
        out += self.up.params()
        return out

    def forward(self, e_prev: Tensor) -> tuple[Tensor, Tensor]:
        e = self.down.forward(e_prev)
        stats_seq = []
        if self.dfe_steps:
            enc = e
            for step in self.dfe_steps:
                enc, stats = step.forward(enc)
                stats_seq.append(stats)
        h = e
        for j, cdr in enumerate(self.cdrs):
            h = cdr.forward(h, stats_seq[j] if stats_seq else None)
        pre = Tensor(h.data + e.data)
        if self.nonlocal_block is not None:
            pre = self.nonlocal_block.forward(pre)
        return e, self.up.forward(pre)

    def backward(self, g_e_ext: np.ndarray | None, g_f: np.ndarray) -> np.ndarray:
        g_pre = self.up.backward(g_f)
        if self.nonlocal_block is not None:
            g_pre = self.nonlocal_block.backward(g_pre)
        g_e = g_pre.copy()
        if g_e_ext is not None:
            g_e += g_e_ext
        g_stats = [None] * len(self.cdrs)
        g = g_pre
        for j in range(len(self.cdrs) - 1, -1, -1):
            g, gs = self.cdrs[j].backward(g)
            g_stats[j] = gs
        g_e += g
        if self.dfe_steps:
            g_enc = None
            for j in range(len(self.dfe_steps) - 1, -1, -1):
                g_enc = self.dfe_steps[j].backward(g_enc, g_stats[j])
            g_e += g_enc
        return self.down.backward(g_e)


class DemoireNet(Module):
    """The full multi-branch model; output has the input's shape."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.branch0 = Branch0(cfg.channels, cfg.seed)
        self.branches = [Branch(i, cfg) for i in range(1, cfg.branches)]
        self.heads = [
            Conv2d(cfg.channels, 3, 3,
                   rng=np.random.default_rng([cfg.seed, 1000 + i]), name=f"head{i}")
            for i in range(cfg.branches)
        ]
        self.scales = Param("scales", np.full(cfg.branches, 1.0 / cfg.branches))

    def params(self):
        out = self.branch0.params()
        for branch in self.branches:
            out += branch.params()
        for head in self.heads:
            out += head.params()
        out.append(self.scales)
        return out

    def named_params(self) -> dict[str, Param]:
        named = {}
        for p in self.params():
            if p.name in named:
                raise ConfigError(f"duplicate parameter name {p.name}")
            named[p.name] = p
        return named

    def randomize_nonlocal_projections(self, rng: np.random.Generator):
        for branch in self.branches:
            if branch.nonlocal_block is not None:
                branch.nonlocal_block.randomize_projection(rng)

    def forward(self, img: Tensor) -> Tensor:
        n, c, h, w = img.shape
        if c != 3:
            raise ShapeError(f"expected 3 input channels, got {c}")
        div = self.cfg.required_divisor
        if h % div or w % div:
            raise ShapeError(
                f"input {h}x{w} must be divisible by {div} for {self.cfg.branches} branches")
        f0 = self.branch0.forward(img)
        feats = [f0]
        e = f0
        for branch in self.branches:
            e, f = branch.forward(e)
            feats.append(f)
        self._head_outs = [head.forward(f).data for head, f in zip(self.heads, feats)]
        out = np.zeros((n, 3, h, w))
        for s, ho in zip(self.scales.data, self._head_outs):
            out += s * ho
        return Tensor(out)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        b = self.cfg.branches
        g_f = []
        for i in range(b):
            self.scales.grad[i] += float((gout * self._head_outs[i]).sum())
            g_f.append(self.heads[i].backward(self.scales.data[i] * gout))
        g_e = None
        for i in range(b - 1, 0, -1):
            g_e = self.branches[i - 1].backward(g_e, g_f[i])
        g0 = g_f[0] if g_e is None else g_f[0] + g_e
        return self.branch0.backward(g0)

    def head_images(self) -> list[np.ndarray]:
        """Per-branch head outputs of the last forward call."""
        return [ho.copy() for ho in self._head_outs]


def reconstruct(branch_images: list[Tensor], scales: np.ndarray) -> Tensor:
    """Weighted sum of per-branch head images."""
    if len(branch_images) != len(scales):
        raise ShapeError("one scale per branch image required")
    first = branch_images[0]
    out = np.zeros_like(first.data)
    for s, img in zip(scales, branch_images):
        if img.shape != first.shape:
            raise ShapeError(f"summand shape {img.shape} != {first.shape}")
        out += float(s) * img.data
    return Tensor(out)


def grow_model(model: DemoireNet, new_branches: int) -> DemoireNet:
    """Extend a trained model with freshly initialized deeper branches.

    Existing parameters are carried over bitwise; new branch scales start
    small so the grown model's output barely moves at the boundary.
    """
    cfg = model.cfg
    if new_branches <= cfg.branches:
        raise ConfigError(
            f"target branches ({new_branches}) must exceed current ({cfg.branches})")
    counts = list(cfg.cdr_counts)
    while len(counts) < new_branches:
        counts.append(counts[-1] + 1 if len(counts) > 1 else 2)
    new_cfg = replace(cfg, branches=new_branches, cdr_counts=tuple(counts))
    grown = DemoireNet(new_cfg)
    old = {p.name: p for p in model.params()}
    for p in grown.params():
        if p.name == "scales":
            p.data[:cfg.branches] = old["scales"].data
            p.data[cfg.branches:] = GROWTH_SCALE_INIT
        elif p.name in old:
            p.data[:] = old[p.name].data
    return grown


@dataclass(frozen=True)
class LossConfig:
    eps: float = 1e-3

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("loss eps must be positive")


def charbonnier_loss(pred: Tensor, target: Tensor,
                     cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Mean sqrt(residual^2 + eps^2); returns (loss, dloss/dpred)."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    root = np.sqrt(diff * diff + cfg.eps * cfg.eps)
    grad = diff / root / diff.size
    return float(root.mean()), grad


class CharbonnierOp(Module):
    """Checker adapter: loss against a fixed target."""

    def __init__(self, target: Tensor, cfg: LossConfig = LossConfig()):
        self.target = target
        self.cfg = cfg

    def forward(self, pred: Tensor) -> float:
        loss, self._grad = charbonnier_loss(pred, self.target, self.cfg)
        return loss

    def backward(self, upstream: float) -> np.ndarray:
        return upstream * self._grad


# ---------------------------------------------------------------------------
# Parameter and FLOP accounting (convolutions only, fused-multiply-add = 2)


@dataclass
class BranchCost:
    branch: int
    params_base: int
    params_dfe: int
    flops_base: int
    flops_dfe: int

    @property
    def params_total(self) -> int:
        return self.params_base + self.params_dfe

    @property
    def flops_total(self) -> int:
        return self.flops_base + self.flops_dfe


def _conv_cost(in_c, out_c, k, oh, ow):
    params = out_c * in_c * k * k + out_c
    flops = 2 * k * k * in_c * out_c * oh * ow
    return params, flops


def branch_costs(cfg: ModelConfig, h: int, w: int) -> list[BranchCost]:
    """Structural walk over every conv/activation/scale in the model."""
    div = cfg.required_divisor
    if h % div or w % div:
        raise ShapeError(f"input {h}x{w} must be divisible by {div}")
    c = cfg.channels
    red = attention_reduction(c)
    costs = []
    for i in range(cfg.branches):
        pb = fb = pd = fd = 0

        def base(p, f):
            nonlocal pb, fb
            pb += p
            fb += f

        if i == 0:
            p, f = _conv_cost(3, c, 3, h, w)
            base(p, f)
            for _ in range(2):
                p, f = _conv_cost(c, c, 3, h, w)
                base(p, f)
            base(3 * c, 0)  # activation slopes
        else:
            rh, rw = h >> i, w >> i
            p, f = _conv_cost(c, c, 3, rh, rw)   # downsample
            base(p + c, f)
            for _ in range(cfg.cdr_counts[i]):
                for _ in range(2):
                    p, f = _conv_cost(c, c, 3, rh, rw)
                    base(p, f)
                base(c, 0)
                p, f = _conv_cost(c, c // red, 1, 1, 1)
                base(p + c // red, f)
                p, f = _conv_cost(c // red, c, 1, 1, 1)
                base(p, f)
            if cfg.dfe_enabled:
                for _ in range(cfg.cdr_counts[i]):
                    p, f = _conv_cost(c, c, 3, rh, rw)
                    pd += p + c
                    fd += f
            if cfg.has_nonlocal(i):
                for _ in range(3):
                    p, f = _conv_cost(c, c // 2, 1, rh, rw)
                    base(p, f)
                p, f = _conv_cost(c // 2, c, 1, rh, rw)
                base(p, f)
            for s in range(i):
                sh, sw = h >> (i - s), w >> (i - s)
                p, f = _conv_cost(c, 4 * c, 3, sh, sw)
                base(p + c, f)
        p, f = _conv_cost(c, 3, 3, h, w)          # reconstruction head
        base(p + 1, f)                             # +1 for the branch scale
        costs.append(BranchCost(i, pb, pd, fb, fd))
    return costs


def count_params(cfg: ModelConfig) -> int:
    # any valid spatial size gives the same parameter count
    d = cfg.required_divisor
    return sum(bc.params_total for bc in branch_costs(cfg, d, d))


def count_flops(cfg: ModelConfig, h: int, w: int) -> int:
    return sum(bc.flops_total for bc in branch_costs(cfg, h, w))
