"""Portable checkpoint files.

Layout: a magic line, then two blocks, each a text manifest (one line per
tensor: ``name ndim d1 d2 d3 d4``) terminated by a blank line and followed
by the concatenated little-endian float32 payloads in manifest order. The
first block holds model parameters, the second optimizer moments plus
scalar counters and the architecture description (``meta.*`` entries).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import DemoireNet, ModelConfig
from .optim import Adam

MAGIC = b"MDDM1\n"
_MAX_EXACT_F32_INT = 1 << 24


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    optim_m: dict[str, np.ndarray]
    optim_v: dict[str, np.ndarray]
    step: int
    lr: float
    epoch: int


def checkpoint_from(model: DemoireNet, adam: Adam, epoch: int) -> Checkpoint:
    params = {p.name: p.data.copy() for p in model.params()}
    return Checkpoint(
        config=model.cfg,
        params=params,
        optim_m={k: v.copy() for k, v in adam.m.items()},
        optim_v={k: v.copy() for k, v in adam.v.items()},
        step=adam.step_count,
        lr=adam.lr,
        epoch=epoch,
    )


def restore(ckpt: Checkpoint) -> tuple[DemoireNet, Adam]:
    """Rebuild the model and optimizer a checkpoint describes."""
    model = DemoireNet(ckpt.config)
    named = model.named_params()
    for name, values in ckpt.params.items():
        if name not in named:
            raise FormatError(f"checkpoint parameter {name!r} not in model")
        if named[name].data.shape != values.shape:
            raise FormatError(f"shape mismatch for {name!r}")
        named[name].data[:] = values
    adam = Adam(model.params(), lr=ckpt.lr)
    adam.step_count = ckpt.step
    for name in adam.m:
        if name in ckpt.optim_m:
            adam.m[name][:] = ckpt.optim_m[name]
            adam.v[name][:] = ckpt.optim_v[name]
    return model, adam


def _int_entry(value: int, name: str) -> np.ndarray:
    if not 0 <= value < _MAX_EXACT_F32_INT:
        raise FormatError(f"{name} = {value} not exactly representable")
    return np.array([float(value)])


def _seed_entry(seed: int) -> np.ndarray:
    if not 0 <= seed < 1 << 32:
        raise FormatError(f"seed {seed} out of the storable range [0, 2^32)")
    return np.array([float(seed >> 16), float(seed & 0xFFFF)])


def _meta_entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    cfg = ckpt.config
    return [
        ("meta.branches", _int_entry(cfg.branches, "branches")),
        ("meta.channels", _int_entry(cfg.channels, "channels")),
        ("meta.cdr_counts", np.asarray(cfg.cdr_counts, dtype=np.float64)),
        ("meta.dfe_enabled", _int_entry(int(cfg.dfe_enabled), "dfe_enabled")),
        ("meta.nonlocal_grid", _int_entry(cfg.nonlocal_grid, "nonlocal_grid")),
        ("meta.nonlocal_from_branch",
         _int_entry(cfg.nonlocal_from_branch, "nonlocal_from_branch")),
        ("meta.seed", _seed_entry(cfg.seed)),
        ("meta.epoch", _int_entry(ckpt.epoch, "epoch")),
        ("meta.step", _int_entry(ckpt.step, "step")),
        ("meta.lr", np.array([ckpt.lr])),
    ]


def _write_block(chunks: list[bytes], entries: list[tuple[str, np.ndarray]]):
    lines = []
    for name, arr in entries:
        dims = list(arr.shape) + [1] * (4 - arr.ndim)
        lines.append(f"{name} {arr.ndim} {dims[0]} {dims[1]} {dims[2]} {dims[3]}")
    chunks.append(("\n".join(lines) + "\n\n").encode("ascii"))
    for _, arr in entries:
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path: str | Path, ckpt: Checkpoint):
    chunks = [MAGIC]
    _write_block(chunks, list(ckpt.params.items()))
    optim_entries = [(f"adam.m.{k}", v) for k, v in ckpt.optim_m.items()]
    optim_entries += [(f"adam.v.{k}", v) for k, v in ckpt.optim_v.items()]
    optim_entries += _meta_entries(ckpt)
    _write_block(chunks, optim_entries)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, message: str):
        raise FormatError(f"{self.path}: {message} at byte {self.pos}")

    def line(self) -> str:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            self.fail("unterminated header line")
        raw = self.data[self.pos:end]
        self.pos = end + 1
        try:
            return raw.decode("ascii")
        except UnicodeDecodeError:
            self.fail("non-ascii header line")

    def block(self) -> dict[str, np.ndarray]:
        entries = []
        while True:
            line = self.line()
            if line == "":
                break
            fields = line.split(" ")
            if len(fields) != 6:
                self.fail(f"malformed manifest line {line!r}")
            name = fields[0]
            try:
                ndim = int(fields[1])
                dims = [int(f) for f in fields[2:6]]
            except ValueError:
                self.fail(f"non-integer dims in {line!r}")
            if not 1 <= ndim <= 4 or any(d < 1 for d in dims):
                self.fail(f"invalid dims in {line!r}")
            entries.append((name, tuple(dims[:ndim])))
        out: dict[str, np.ndarray] = {}
        for name, shape in entries:
            if name in out:
                self.fail(f"duplicate tensor name {name!r}")
            nbytes = 4 * int(np.prod(shape))
            if self.pos + nbytes > len(self.data):
                self.fail(f"payload for {name!r} truncated")
            arr = np.frombuffer(self.data[self.pos:self.pos + nbytes], dtype="<f4")
            out[name] = arr.astype(np.float64).reshape(shape)
            self.pos += nbytes
        return out


def _take_int(entries: dict[str, np.ndarray], name: str, reader: _Reader) -> int:
    if name not in entries:
        reader.fail(f"missing {name!r} entry")
    return int(round(float(entries[name].reshape(-1)[0])))


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    data = p.read_bytes()
    reader = _Reader(data, str(p))
    if not data.startswith(MAGIC):
        reader.fail("bad magic")
    reader.pos = len(MAGIC)
    params = reader.block()
    optim = reader.block()
    if reader.pos != len(data):
        reader.fail(f"{len(data) - reader.pos} trailing bytes")

    seed_arr = optim.get("meta.seed")
    if seed_arr is None or seed_arr.size != 2:
        reader.fail("missing or malformed meta.seed")
    seed = (int(round(float(seed_arr[0]))) << 16) | int(round(float(seed_arr[1])))
    counts = optim.get("meta.cdr_counts")
    if counts is None:
        reader.fail("missing meta.cdr_counts")
    config = ModelConfig(
        branches=_take_int(optim, "meta.branches", reader),
        channels=_take_int(optim, "meta.channels", reader),
        cdr_counts=tuple(int(round(c)) for c in counts.reshape(-1)),
        dfe_enabled=bool(_take_int(optim, "meta.dfe_enabled", reader)),
        nonlocal_grid=_take_int(optim, "meta.nonlocal_grid", reader),
        nonlocal_from_branch=_take_int(optim, "meta.nonlocal_from_branch", reader),
        seed=seed,
    )
    optim_m = {k[len("adam.m."):]: v for k, v in optim.items() if k.startswith("adam.m.")}
    optim_v = {k[len("adam.v."):]: v for k, v in optim.items() if k.startswith("adam.v.")}
    return Checkpoint(
        config=config,
        params=params,
        optim_m=optim_m,
        optim_v=optim_v,
        step=_take_int(optim, "meta.step", reader),
        lr=float(optim["meta.lr"].reshape(-1)[0]) if "meta.lr" in optim else 1e-4,
        epoch=_take_int(optim, "meta.epoch", reader),
    )
