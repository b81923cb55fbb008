"""Central finite-difference verification of hand-written backward rules.

Any operation that exposes ``forward(*inputs) -> Tensor`` (or a scalar),
``backward(upstream)`` and optionally ``params()`` can be checked. The loss
under test is the plain sum of the forward output, so the upstream gradient
is a tensor of ones and every analytic gradient can be compared coordinate
by coordinate against (f(x+h) - f(x-h)) / 2h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-4
MIN_PROBES = 32


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    max_abs_err: float
    num_probes: int
    passed: bool
    note: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        line = (
            f"{status}  {self.op_name}: rel_err={self.max_rel_err:.3e} "
            f"abs_err={self.max_abs_err:.3e} probes={self.num_probes}"
        )
        if self.note:
            line += f"  [{self.note}]"
        return line


def _scalarize(out) -> float:
    if isinstance(out, Tensor):
        return float(out.data.sum())
    return float(out)


def _upstream_for(out):
    if isinstance(out, Tensor):
        return np.ones_like(out.data)
    return 1.0


def _probe_coords(size: int, rng: np.random.Generator, max_probes: int):
    if size <= max_probes:
        return np.arange(size)
    return rng.choice(size, size=max_probes, replace=False)


def finite_diff_check(
    op,
    inputs,
    *,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
    max_probes: int = MIN_PROBES,
    seed: int = 0,
    name: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``op`` against central differences.

    ``inputs`` is a Tensor or a sequence of Tensors. Gradients are checked
    for every input and every parameter; tensors larger than ``max_probes``
    are probed on a seeded random coordinate subset.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    else:
        inputs = list(inputs)
    op_name = name or type(op).__name__
    rng = np.random.default_rng(seed)

    out = op.forward(*inputs)
    params = list(op.params()) if hasattr(op, "params") else []
    for p in params:
        p.grad[:] = 0.0
    input_grads = op.backward(_upstream_for(out))
    if len(inputs) == 1 and not isinstance(input_grads, tuple):
        input_grads = (input_grads,)

    # (analytic grad array, the writable value array it belongs to)
    targets = [(np.asarray(g), t.data) for g, t in zip(input_grads, inputs)]
    targets += [(p.grad.copy(), p.data) for p in params]

    for analytic, _ in targets:
        if not np.all(np.isfinite(analytic)):
            return GradCheckReport(op_name, float("inf"), float("inf"), 0, False,
                                   "non-finite analytic gradient")

    eps_mach = np.finfo(np.float64).eps

    def measure(flat_vals, idx, h):
        old = flat_vals[idx]
        flat_vals[idx] = old + h
        f_plus = _scalarize(op.forward(*inputs))
        flat_vals[idx] = old - h
        f_minus = _scalarize(op.forward(*inputs))
        flat_vals[idx] = old
        numeric = (f_plus - f_minus) / (2.0 * h)
        # Central differences cannot resolve derivatives below the round-off
        # of f itself; below that floor a discrepancy is noise on a flat
        # direction (e.g. a softmax shift invariance), not an error.
        noise = 64.0 * eps_mach * max(abs(f_plus), abs(f_minus), 1.0) / (2.0 * h)
        return numeric, noise

    max_rel = 0.0
    max_abs = 0.0
    probes = 0
    refined = 0
    for analytic, values in targets:
        flat_vals = values.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for idx in _probe_coords(flat_vals.size, rng, max_probes):
            a = flat_grad[idx]
            numeric, noise = measure(flat_vals, idx, step)
            abs_err = abs(a - numeric)
            max_abs = max(max_abs, abs_err)
            probes += 1
            if abs_err <= noise:
                continue
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-8)
            if rel_err > tol:
                # A step of 1e-4 can straddle an activation kink, biasing the
                # quotient even when the analytic gradient is exact. Shrink
                # the step: a real backward bug disagrees at every step,
                # while a kink artifact converges to the analytic value.
                for h in (step / 10.0, step / 100.0):
                    numeric, noise = measure(flat_vals, idx, h)
                    abs_err = abs(a - numeric)
                    if abs_err <= noise:
                        rel_err = 0.0
                        refined += 1
                        break
                    rel_err = abs_err / max(abs(a), abs(numeric), 1e-8)
                    if rel_err <= tol:
                        refined += 1
                        break
            max_rel = max(max_rel, rel_err)

    note = f"{refined} probes re-measured at smaller steps" if refined else ""
    return GradCheckReport(op_name, max_rel, max_abs, probes, max_rel <= tol, note)


def kink_free_uniform(shape, seed: int, margin: float = 0.05) -> Tensor:
    """Random tensor whose values stay clear of the PReLU kink at zero."""
    rng = np.random.default_rng(seed)
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign)


def build_default_suite(seed: int = 0):
    """Instantiate every differentiable operation on small random configs.

    Returns a list of (name, op, inputs) triples consumed by the gradient
    check command and by the acceptance tests.
    """
    from . import layers as L
    from . import network as N
    from .tensor import Add, EwMul

    suite = []

    suite.append(("add", Add(),
                  [kink_free_uniform((1, 2, 3, 3), seed + 1),
                   kink_free_uniform((1, 2, 3, 3), seed + 2)]))
    suite.append(("elementwise_mul", EwMul(),
                  [kink_free_uniform((2, 2, 3, 3), seed + 3),
                   kink_free_uniform((2, 2, 3, 3), seed + 4)]))

    conv = L.Conv2d(2, 3, 3, rng=np.random.default_rng(seed + 5))
    suite.append(("conv2d_3x3", conv, [kink_free_uniform((1, 2, 5, 5), seed + 6)]))
    conv1 = L.Conv2d(3, 2, 1, rng=np.random.default_rng(seed + 7))
    suite.append(("conv2d_1x1", conv1, [kink_free_uniform((2, 3, 4, 4), seed + 8)]))
    conv_s2 = L.Conv2d(2, 2, 3, stride=2, rng=np.random.default_rng(seed + 9))
    suite.append(("conv2d_stride2", conv_s2, [kink_free_uniform((1, 2, 6, 6), seed + 10)]))

    suite.append(("prelu", L.PReLU(3), [kink_free_uniform((1, 3, 4, 4), seed + 11)]))
    suite.append(("global_avg_pool", L.GlobalAvgPool(),
                  [kink_free_uniform((2, 3, 4, 4), seed + 12)]))

    att = L.ChannelAttention(4, 4, rng=np.random.default_rng(seed + 13))
    suite.append(("channel_attention", att, [kink_free_uniform((1, 4, 4, 4), seed + 14)]))

    down = L.Downsample(3, rng=np.random.default_rng(seed + 15))
    suite.append(("downsample", down, [kink_free_uniform((1, 3, 6, 6), seed + 16)]))

    suite.append(("pixel_shuffle", L.PixelShuffle(2),
                  [kink_free_uniform((1, 8, 2, 2), seed + 17)]))

    up = L.UpsampleBlock(2, 2, rng=np.random.default_rng(seed + 18))
    suite.append(("upsample_block", up, [kink_free_uniform((1, 2, 3, 3), seed + 19)]))

    adain = L.AdaInOp(3, n=2, seed=seed + 20)
    suite.append(("adain", adain, [kink_free_uniform((2, 3, 4, 4), seed + 21)]))

    dfe = L.DfeEncoderStep(3, rng=np.random.default_rng(seed + 22))
    suite.append(("dfe_encoder_step", L.DfeStepSumOp(dfe),
                  [kink_free_uniform((1, 3, 4, 4), seed + 23)]))

    cdr = L.CdrBlock(4, 4, rng=np.random.default_rng(seed + 24))
    suite.append(("cdr_block", L.CdrWithStatsOp(cdr, seed=seed + 25),
                  [kink_free_uniform((1, 4, 4, 4), seed + 26)]))

    nl = L.NonLocalBlock(4, grid=2, rng=np.random.default_rng(seed + 27))
    # zero-initialized output projection blocks all attention gradients;
    # randomize it so the attention backward path is actually exercised
    nl.randomize_projection(np.random.default_rng(seed + 28))
    suite.append(("nonlocal_block", nl, [kink_free_uniform((1, 4, 4, 4), seed + 29)]))

    suite.append(("charbonnier_loss",
                  N.CharbonnierOp(kink_free_uniform((1, 2, 3, 3), seed + 30)),
                  [kink_free_uniform((1, 2, 3, 3), seed + 31)]))

    toy_cfg = N.ModelConfig(branches=3, channels=4, cdr_counts=(0, 1, 2), seed=seed + 32)
    model = N.DemoireNet(toy_cfg)
    model.randomize_nonlocal_projections(np.random.default_rng(seed + 33))
    suite.append(("full_model_b3_c4", model, [kink_free_uniform((1, 3, 16, 16), seed + 34)]))
    return suite


def run_default_suite(seed: int = 0, tol: float = DEFAULT_TOL):
    """Run the default suite; returns the list of reports."""
    reports = []
    for name, op, inputs in build_default_suite(seed):
        reports.append(finite_diff_check(op, inputs, tol=tol, seed=seed, name=name))
    return reports
