"""Network building blocks with hand-written forward/backward rules.

Every block follows the same contract: ``forward`` caches whatever the
matching ``backward`` needs, ``backward`` consumes the upstream gradient
(an ndarray shaped like the forward output), accumulates into parameter
``grad`` buffers and returns the gradient with respect to its input.
Composite blocks chain child backward calls in reverse order; there is no
autodiff tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

PRELU_INIT_SLOPE = 0.25


class Param:
    """A named learnable array with its gradient accumulator."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name}, shape={self.data.shape})"


class Module:
    """Minimal base: parameter aggregation and grad zeroing."""

    def params(self) -> list[Param]:
        return []

    def zero_grad(self):
        for p in self.params():
            p.grad[:] = 0.0


def he_uniform(rng: np.random.Generator, shape, fan_in: int,
               slope: float = PRELU_INIT_SLOPE) -> np.ndarray:
    """Fan-in-scaled uniform init with gain for a leaky activation."""
    bound = math.sqrt(6.0 / ((1.0 + slope * slope) * fan_in))
    return rng.uniform(-bound, bound, size=shape)


def _im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather k*k patches of a padded (n,c,hp,wp) array into (n, c*k*k, L)."""
    n, c, _, _ = xp.shape
    i0 = np.repeat(np.arange(k), k)
    j0 = np.tile(np.arange(k), k)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    rows = i0[:, None] + i1[None, :]
    cols = j0[:, None] + j1[None, :]
    patches = xp[:, :, rows, cols]            # (n, c, k*k, L)
    return patches.reshape(n, c * k * k, out_h * out_w)


class Conv2d(Module):
    """Cross-correlation with per-output-channel bias.

    Kernels are square (1 or 3), stride 1 or 2, padding fixed at k // 2 so
    stride-1 convolutions preserve the spatial size.
    """

    def __init__(self, in_c: int, out_c: int, ksize: int, *, stride: int = 1,
                 rng: np.random.Generator | None = None, name: str = "conv",
                 zero_init: bool = False):
        if ksize not in (1, 3):
            raise ShapeError(f"kernel size must be 1 or 3, got {ksize}")
        if stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {stride}")
        self.in_c = in_c
        self.out_c = out_c
        self.ksize = ksize
        self.stride = stride
        self.padding = ksize // 2
        if zero_init:
            w = np.zeros((out_c, in_c, ksize, ksize))
        else:
            rng = rng or np.random.default_rng(0)
            w = he_uniform(rng, (out_c, in_c, ksize, ksize), in_c * ksize * ksize)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(out_c))

    def params(self):
        return [self.weight, self.bias]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.ksize, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_c:
            raise ShapeError(f"expected {self.in_c} input channels, got {c}")
        k, s, p = self.ksize, self.stride, self.padding
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
        oh, ow = self.out_hw(h, w)
        cols = _im2col(xp, k, s, oh, ow)
        out = np.matmul(self.weight.data.reshape(self.out_c, -1), cols)
        out += self.bias.data[:, None]
        self._cols = cols
        self._in_hw = (h, w)
        self._padded_hw = xp.shape[2:]
        return Tensor(out.reshape(n, self.out_c, oh, ow))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        n, oc, oh, ow = gout.shape
        k, s, p = self.ksize, self.stride, self.padding
        gm = gout.reshape(n, oc, oh * ow)
        self.weight.grad += np.einsum("nol,nkl->ok", gm, self._cols).reshape(
            self.weight.data.shape)
        self.bias.grad += gm.sum(axis=(0, 2))

        # input gradient: correlate the stride-dilated upstream gradient
        # with the transposed, 180-degree-rotated kernel
        hp, wp = self._padded_hw
        hd, wd = (oh - 1) * s + 1, (ow - 1) * s + 1
        rest_h = (hp - k) - (oh - 1) * s
        rest_w = (wp - k) - (ow - 1) * s
        gd = np.zeros((n, oc, hd, wd))
        gd[:, :, ::s, ::s] = gout
        gd = np.pad(gd, ((0, 0), (0, 0),
                         (k - 1, k - 1 + rest_h), (k - 1, k - 1 + rest_w)))
        wflip = self.weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        cols = _im2col(gd, k, 1, hp, wp)
        gxp = np.matmul(np.ascontiguousarray(wflip).reshape(self.in_c, -1), cols)
        gxp = gxp.reshape(n, self.in_c, hp, wp)
        if p:
            h, w = self._in_hw
            gxp = gxp[:, :, p:p + h, p:p + w]
        return gxp


class PReLU(Module):
    """Per-channel parametric ReLU; slopes initialized to 0.25."""

    def __init__(self, channels: int, init: float = PRELU_INIT_SLOPE,
                 name: str = "prelu"):
        self.channels = channels
        self.slope = Param(f"{name}.slope", np.full(channels, float(init)))

    def params(self):
        return [self.slope]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[1]}")
        d = x.data
        s = self.slope.data[None, :, None, None]
        self._pos = d > 0
        self._x = d
        return Tensor(np.where(self._pos, d, s * d))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        s = self.slope.data[None, :, None, None]
        self.slope.grad += np.where(self._pos, 0.0, gout * self._x).sum(axis=(0, 2, 3))
        return np.where(self._pos, gout, s * gout)


class Sigmoid(Module):

    def forward(self, x: Tensor) -> Tensor:
        d = x.data
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ex = np.exp(d[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._y = out
        return Tensor(out)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return gout * self._y * (1.0 - self._y)


class GlobalAvgPool(Module):
    """Mean over the spatial dimensions, keeping (n, c, 1, 1)."""

    def forward(self, x: Tensor) -> Tensor:
        self._hw = x.shape[2] * x.shape[3]
        self._in_shape = x.shape
        return Tensor(x.data.mean(axis=(2, 3), keepdims=True))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return np.broadcast_to(gout / self._hw, self._in_shape).copy()


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: pool, bottleneck, sigmoid, rescale.

    The sigmoid output of the last forward call is kept on ``gate`` so
    callers can assert the weights stay strictly inside (0, 1).
    """

    def __init__(self, channels: int, reduction: int, *,
                 rng: np.random.Generator | None = None, name: str = "att"):
        if channels % reduction != 0:
            raise ShapeError(
                f"channels ({channels}) must be divisible by reduction ({reduction})")
        mid = channels // reduction
        self.channels = channels
        self.pool = GlobalAvgPool()
        self.wd = Conv2d(channels, mid, 1, rng=rng, name=f"{name}.wd")
        self.act = PReLU(mid, name=f"{name}.act")
        self.wu = Conv2d(mid, channels, 1, rng=rng, name=f"{name}.wu")
        self.sigmoid = Sigmoid()
        self.gate: np.ndarray | None = None

    def params(self):
        return self.wd.params() + self.act.params() + self.wu.params()

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[1]}")
        squeezed = self.pool.forward(x)
        z = self.wu.forward(self.act.forward(self.wd.forward(squeezed)))
        gate = self.sigmoid.forward(z)
        self.gate = gate.data
        self._x = x.data
        return Tensor(gate.data * x.data)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        ggate = (gout * self._x).sum(axis=(2, 3), keepdims=True)
        gx = gout * self.gate
        gz = self.sigmoid.backward(ggate)
        gsq = self.wd.backward(self.act.backward(self.wu.backward(gz)))
        return gx + self.pool.backward(gsq)


class Downsample(Module):
    """Stride-2 3x3 convolution followed by PReLU; halves even spatial dims."""

    def __init__(self, channels: int, *, rng: np.random.Generator | None = None,
                 name: str = "down"):
        self.conv = Conv2d(channels, channels, 3, stride=2, rng=rng, name=f"{name}.conv")
        self.act = PReLU(channels, name=f"{name}.act")

    def params(self):
        return self.conv.params() + self.act.params()

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"spatial dims must be even to downsample, got {h}x{w}")
        return self.act.forward(self.conv.forward(x))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return self.conv.backward(self.act.backward(gout))


class PixelShuffle(Module):
    """Rearrange (n, c, h, w) into (n, c/r^2, h*r, w*r)."""

    def __init__(self, r: int):
        self.r = r

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        r = self.r
        if c % (r * r) != 0:
            raise ShapeError(f"channels ({c}) not divisible by r^2 ({r * r})")
        oc = c // (r * r)
        self._in_shape = x.shape
        y = x.data.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return Tensor(y.reshape(n, oc, h * r, w * r))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        n, c, h, w = self._in_shape
        r = self.r
        oc = c // (r * r)
        g = gout.reshape(n, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return g.reshape(n, c, h, w).copy()


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    return PixelShuffle(r).forward(x)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial dims ({h}x{w}) not divisible by r ({r})")
    y = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return Tensor(y.reshape(n, c * r * r, h // r, w // r))


class UpsampleBlock(Module):
    """Repeated (3x3 conv to 4c, pixel shuffle x2, PReLU) stages.

    ``stages`` is the log2 of the total upscale factor; zero stages is the
    identity. Channel count is preserved end to end.
    """

    def __init__(self, channels: int, stages: int, *,
                 rng: np.random.Generator | None = None, name: str = "up"):
        self.channels = channels
        self.stages = []
        for s in range(stages):
            conv = Conv2d(channels, 4 * channels, 3, rng=rng, name=f"{name}.stage{s}.conv")
            shuffle = PixelShuffle(2)
            act = PReLU(channels, name=f"{name}.stage{s}.act")
            self.stages.append((conv, shuffle, act))

    def params(self):
        out = []
        for conv, _, act in self.stages:
            out += conv.params() + act.params()
        return out

    def forward(self, x: Tensor) -> Tensor:
        for conv, shuffle, act in self.stages:
            x = act.forward(shuffle.forward(conv.forward(x)))
        return x

    def backward(self, gout: np.ndarray) -> np.ndarray:
        for conv, shuffle, act in reversed(self.stages):
            gout = conv.backward(shuffle.backward(act.backward(gout)))
        return gout


@dataclass
class DfeStats:
    """Per-sample, per-channel mean and variance of an encoder feature."""

    mean: np.ndarray   # (n, c)
    var: np.ndarray    # (n, c)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ShapeError("mean and var must have identical shape")
        if np.any(self.var < 0):
            raise ValueError("variance must be non-negative")


def instance_stats(data: np.ndarray) -> DfeStats:
    """Biased per-(sample, channel) spatial moments of an (n,c,h,w) array."""
    return DfeStats(data.mean(axis=(2, 3)), data.var(axis=(2, 3)))


class AdaIn(Module):
    """Renormalize per-channel instance statistics to supplied targets.

    y = (x - mu) / (sqrt(var) + eps) * sqrt(target_var) + target_mean, with
    eps added outside the square root. Gradients flow into x and into both
    target statistics.
    """

    def __init__(self, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = eps

    def forward(self, x: Tensor, stats: DfeStats) -> Tensor:
        n, c, h, w = x.shape
        if stats.mean.shape != (n, c):
            raise ShapeError(
                f"stats shape {stats.mean.shape} does not match input ({n}, {c})")
        d = x.data
        mu = d.mean(axis=(2, 3))
        var = d.var(axis=(2, 3))
        sig = np.sqrt(var)
        shat = np.sqrt(stats.var)
        k = shat / (sig + self.eps)
        centered = d - mu[:, :, None, None]
        self._centered = centered
        self._k = k
        self._sig = sig
        self._shat = shat
        self._hw = h * w
        return Tensor(centered * k[:, :, None, None] + stats.mean[:, :, None, None])

    def backward(self, gout: np.ndarray):
        """Returns (grad_x, grad_target_mean, grad_target_var)."""
        k = self._k[:, :, None, None]
        sig = self._sig
        denom = sig + self.eps
        m = self._hw

        g_mean_t = gout.sum(axis=(2, 3))
        corr = (gout * self._centered).sum(axis=(2, 3))      # (n, c)
        g_shat = corr / denom
        safe_shat = np.where(self._shat > 0, self._shat, 1.0)
        g_var_t = np.where(self._shat > 0, 0.5 / safe_shat, 0.0) * g_shat

        g_sig = -corr * self._shat / (denom * denom)
        gbar = gout.mean(axis=(2, 3))[:, :, None, None]
        dsig_term = np.where(sig > 0, g_sig / (m * np.where(sig > 0, sig, 1.0)), 0.0)
        gx = k * (gout - gbar) + dsig_term[:, :, None, None] * self._centered
        return gx, g_mean_t, g_var_t


class AdaInOp(Module):
    """AdaIn with the target statistics held as checkable parameters."""

    def __init__(self, channels: int, *, n: int = 1, seed: int = 0, eps: float = 1e-5):
        rng = np.random.default_rng(seed)
        self.adain = AdaIn(eps)
        self.t_mean = Param("adain.t_mean", rng.uniform(-1, 1, size=(n, channels)))
        self.t_var = Param("adain.t_var", rng.uniform(0.2, 2.0, size=(n, channels)))

    def params(self):
        return [self.t_mean, self.t_var]

    def forward(self, x: Tensor) -> Tensor:
        return self.adain.forward(x, DfeStats(self.t_mean.data, self.t_var.data))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        gx, gm, gv = self.adain.backward(gout)
        self.t_mean.grad += gm
        self.t_var.grad += gv
        return gx


class DfeEncoderStep(Module):
    """One layer of the lightweight statistics-encoder branch.

    3x3 stride-1 convolution plus PReLU; emits the activated feature and
    its per-channel instance moments, through both of which gradients flow.
    """

    def __init__(self, channels: int, *, rng: np.random.Generator | None = None,
                 name: str = "dfe"):
        self.conv = Conv2d(channels, channels, 3, rng=rng, name=f"{name}.conv")
        self.act = PReLU(channels, name=f"{name}.act")

    def params(self):
        return self.conv.params() + self.act.params()

    def forward(self, x: Tensor) -> tuple[Tensor, DfeStats]:
        out = self.act.forward(self.conv.forward(x))
        self._out = out.data
        self._mu = out.data.mean(axis=(2, 3))
        self._hw = out.shape[2] * out.shape[3]
        return out, DfeStats(self._mu, out.data.var(axis=(2, 3)))

    def backward(self, g_out: np.ndarray | None, g_stats) -> np.ndarray:
        """Combine gradients on the feature and on its statistics.

        ``g_stats`` is a (grad_mean, grad_var) pair or None.
        """
        g = np.zeros_like(self._out) if g_out is None else g_out.copy()
        if g_stats is not None:
            g_mean, g_var = g_stats
            m = self._hw
            g += g_mean[:, :, None, None] / m
            g += g_var[:, :, None, None] * 2.0 * (self._out - self._mu[:, :, None, None]) / m
        return self.conv.backward(self.act.backward(g))


class DfeStepSumOp(Module):
    """Checker adapter: feature sum plus both statistics of an encoder step."""

    def __init__(self, step: DfeEncoderStep):
        self.step = step

    def params(self):
        return self.step.params()

    def forward(self, x: Tensor):
        out, stats = self.step.forward(x)
        self._nc = stats.mean.shape
        return float(out.data.sum() + stats.mean.sum() + stats.var.sum())

    def backward(self, upstream: float) -> np.ndarray:
        ones_map = np.full_like(self.step._out, upstream)
        ones_nc = np.full(self._nc, upstream)
        return self.step.backward(ones_map, (ones_nc, ones_nc))


class CdrBlock(Module):
    """Residual unit: two 3x3 convs with PReLU, optional statistic
    renormalization of the body output, channel attention, identity skip.
    """

    def __init__(self, channels: int, attention_reduction: int, *,
                 adain_eps: float = 1e-5,
                 rng: np.random.Generator | None = None, name: str = "cdr"):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, rng=rng, name=f"{name}.conv1")
        self.act = PReLU(channels, name=f"{name}.act")
        self.conv2 = Conv2d(channels, channels, 3, rng=rng, name=f"{name}.conv2")
        self.adain = AdaIn(adain_eps)
        self.attention = ChannelAttention(channels, attention_reduction,
                                          rng=rng, name=f"{name}.att")

    def params(self):
        return (self.conv1.params() + self.act.params() + self.conv2.params()
                + self.attention.params())

    def forward(self, x: Tensor, stats: DfeStats | None = None) -> Tensor:
        body = self.conv2.forward(self.act.forward(self.conv1.forward(x)))
        self._used_stats = stats is not None
        if stats is not None:
            body = self.adain.forward(body, stats)
        refined = self.attention.forward(body)
        return Tensor(refined.data + x.data)

    def backward(self, gout: np.ndarray):
        """Returns (grad_x, grad_stats) with grad_stats None when unused."""
        gb = self.attention.backward(gout)
        g_stats = None
        if self._used_stats:
            gb, gm, gv = self.adain.backward(gb)
            g_stats = (gm, gv)
        gx = self.conv1.backward(self.act.backward(self.conv2.backward(gb)))
        return gx + gout, g_stats


class CdrWithStatsOp(Module):
    """Checker adapter: a CdrBlock driven by learnable target statistics."""

    def __init__(self, block: CdrBlock, *, n: int = 1, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.block = block
        c = block.channels
        self.t_mean = Param("cdr.t_mean", rng.uniform(-1, 1, size=(n, c)))
        self.t_var = Param("cdr.t_var", rng.uniform(0.2, 2.0, size=(n, c)))

    def params(self):
        return self.block.params() + [self.t_mean, self.t_var]

    def forward(self, x: Tensor) -> Tensor:
        return self.block.forward(x, DfeStats(self.t_mean.data, self.t_var.data))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        gx, (gm, gv) = self.block.backward(gout)
        self.t_mean.grad += gm
        self.t_var.grad += gv
        return gx


class NonLocalBlock(Module):
    """Region-partitioned embedded-Gaussian self-attention with a residual.

    The feature map is split into a grid x grid lattice of equal regions;
    attention is computed independently inside each region with half-channel
    query/key/value embeddings. The output projection starts at zero so a
    freshly built block is the identity map.
    """

    def __init__(self, channels: int, grid: int = 2, *,
                 rng: np.random.Generator | None = None, name: str = "nl"):
        if channels % 2 != 0:
            raise ShapeError(f"channels must be even, got {channels}")
        self.channels = channels
        self.grid = grid
        mid = channels // 2
        self.mid = mid
        self.theta = Conv2d(channels, mid, 1, rng=rng, name=f"{name}.theta")
        self.phi = Conv2d(channels, mid, 1, rng=rng, name=f"{name}.phi")
        self.g = Conv2d(channels, mid, 1, rng=rng, name=f"{name}.g")
        self.w = Conv2d(mid, channels, 1, name=f"{name}.w", zero_init=True)
        self.last_attention: np.ndarray | None = None

    def params(self):
        return (self.theta.params() + self.phi.params() + self.g.params()
                + self.w.params())

    def randomize_projection(self, rng: np.random.Generator):
        """Replace the zero output projection (used by gradient checks)."""
        self.w.weight.data[:] = he_uniform(rng, self.w.weight.data.shape, self.mid)
        self.w.bias.data[:] = rng.uniform(-0.1, 0.1, size=self.w.bias.data.shape)

    def _to_regions(self, d: np.ndarray) -> np.ndarray:
        n, c, h, w = d.shape
        g = self.grid
        rh, rw = h // g, w // g
        r = d.reshape(n, c, g, rh, g, rw).transpose(0, 2, 4, 1, 3, 5)
        return r.reshape(n, g, g, c, rh * rw)

    def _from_regions(self, r: np.ndarray, h: int, w: int) -> np.ndarray:
        n, g, _, c, _ = r.shape
        rh, rw = h // g, w // g
        d = r.reshape(n, g, g, c, rh, rw).transpose(0, 3, 1, 4, 2, 5)
        return d.reshape(n, c, h, w).copy()

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        if h % self.grid or w % self.grid:
            raise ShapeError(
                f"spatial dims {h}x{w} not divisible by grid {self.grid}")
        t = self._to_regions(self.theta.forward(x).data)
        p = self._to_regions(self.phi.forward(x).data)
        v = self._to_regions(self.g.forward(x).data)
        scores = np.einsum("ngkci,ngkcj->ngkij", t, p)
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        y = np.einsum("ngkij,ngkcj->ngkci", att, v)
        y_map = self._from_regions(y, h, w)
        self._cache = (t, p, v, att, h, w)
        self._x = x.data
        self.last_attention = y_map
        proj = self.w.forward(Tensor(y_map))
        return Tensor(x.data + proj.data)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        t, p, v, att, h, w = self._cache
        gy_map = self.w.backward(gout)
        gy = self._to_regions(gy_map)
        g_att = np.einsum("ngkci,ngkcj->ngkij", gy, v)
        gv = np.einsum("ngkij,ngkci->ngkcj", att, gy)
        inner = (g_att * att).sum(axis=-1, keepdims=True)
        g_scores = att * (g_att - inner)
        gt = np.einsum("ngkij,ngkcj->ngkci", g_scores, p)
        gp = np.einsum("ngkij,ngkci->ngkcj", g_scores, t)
        gx = gout.copy()
        gx += self.theta.backward(self._from_regions(gt, h, w))
        gx += self.phi.backward(self._from_regions(gp, h, w))
        gx += self.g.backward(self._from_regions(gv, h, w))
        return gx
