"""Adam, the step-decay schedule, the end-to-end training loop and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import unreached
from .data import AugmentSpec, color_augment, geometric_augment, prefetch, sample_patch, simulate_hybrid, GEOMETRIC_OPS
from .fusion import LossWeights, total_loss
from .layers import Params
from .lightfield import LightField
from .model import HybridLFNet, ModelConfig, inference

log = logging.getLogger(__name__)

LOG_COLUMNS = ["iter", "lr", "l_fusion", "l_sr", "l_warp", "l_smooth", "total"]


class NumericalError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Params, state: AdamState, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
    """Bias-corrected Adam update, in place.  ``grads`` defaults to ``param.grad``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype)


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    decay: float = 0.5
    decay_period: int = 250
    batch_size: int = 1
    patch_size: int = 128
    scale: int = 4
    epochs: int = 1
    iterations: int = 0  # > 0 overrides ``epochs``
    seed: int = 0
    edge_weight: float = 150.0
    smooth_weight: float = 0.1
    geometric_aug: bool = True
    color_aug: bool = False

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.decay_period < 1:
            raise ValueError("decay period must be >= 1")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")

    def weights(self) -> LossWeights:
        return LossWeights(self.edge_weight, self.smooth_weight)


def lr_at(epoch: int, config: TrainConfig) -> float:
    return config.lr0 * config.decay ** (epoch // config.decay_period)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(tp, value: str):
    if tp in (bool, "bool"):
        return value.lower() in ("1", "true", "yes", "on")
    if tp in (int, "int"):
        return int(value)
    if tp in (float, "float"):
        return float(value)
    return value


def load_run_config(path) -> tuple[TrainConfig, ModelConfig]:
    """Read a ``key=value`` run config holding both training and model keys."""
    kv = parse_kv(Path(path).read_text())
    tfields = {f.name: f.type for f in fields(TrainConfig)}
    mfields = {f.name: f.type for f in fields(ModelConfig)}
    unknown = set(kv) - set(tfields) - set(mfields)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    tc = TrainConfig(**{k: _coerce(tfields[k], v) for k, v in kv.items() if k in tfields})
    mkv = {k: int(v) for k, v in kv.items() if k in mfields}
    mkv.setdefault("scale", tc.scale)
    return tc, ModelConfig(**mkv)


# ---------------------------------------------------------------- training


@dataclass
class Scene:
    lf: LightField
    disparity: np.ndarray | None = None


@dataclass
class TrainResult:
    log: list[dict]
    params: Params
    state: AdamState


def _samples(dataset: Sequence[Scene], config: TrainConfig, n_iter: int):
    """Deterministic stream of (epoch, TrainingSample)."""
    rng = np.random.default_rng(config.seed)
    it = 0
    epoch = 0
    while it < n_iter:
        for idx in rng.permutation(len(dataset)):
            if it >= n_iter:
                return
            scene = dataset[idx]
            lf, disp = scene.lf, scene.disparity
            if config.geometric_aug:
                k = int(rng.integers(0, len(GEOMETRIC_OPS) + 1))
                if k < len(GEOMETRIC_OPS):
                    d0 = disp if disp is not None else np.zeros((lf.H, lf.W))
                    lf, d1 = geometric_augment(lf, d0, GEOMETRIC_OPS[k])
                    disp = d1 if disp is not None else None
            if lf.C != 1:
                raise ValueError("training expects single-channel (Y) light fields")
            hybrid, gt = simulate_hybrid(lf, config.scale)
            sample = sample_patch(gt, hybrid, config.patch_size, rng, disp)
            if config.color_aug:
                seed = int(rng.integers(0, 2**31))
                sample.hybrid = color_augment(sample.hybrid, AugmentSpec(seed=seed))
            yield epoch, sample
            it += 1
        epoch += 1


def fit(
    model: HybridLFNet,
    dataset: Sequence[Scene],
    config: TrainConfig,
    iterations: int | None = None,
    state: AdamState | None = None,
    log_path=None,
    check_coverage: bool = False,
) -> TrainResult:
    """Train end-to-end with batch size 1 for ``iterations`` (default: ``epochs`` passes)."""
    if not dataset:
        raise ValueError("empty dataset")
    if model.config.scale != config.scale:
        raise ValueError("model and training scale differ")
    if iterations is None:
        iterations = config.iterations or config.epochs * len(dataset)
    n_iter = iterations
    state = state or AdamState()
    weights = config.weights()
    rows: list[dict] = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for i, (epoch, sample) in enumerate(prefetch(_samples(dataset, config, n_iter))):
            lr = lr_at(epoch, config)
            model.zero_grad()
            out = model.forward(sample.hybrid)
            loss, terms = total_loss(out.fused, out.sr, out.warp, out.d_h, sample.gt, weights)
            for name, val in terms.items():
                if not math.isfinite(val):
                    raise NumericalError(f"non-finite {name} at iteration {i}")
            loss.backward()
            if check_coverage:
                missing = unreached(model.params)
                if missing:
                    raise RuntimeError(f"parameters without gradient: {missing}")
            adam_step(model.params, state, lr)
            row = {"iter": i, "lr": lr, **terms}
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if i % 50 == 0:
                log.info("iter %d lr %.2e total %.5f", i, lr, terms["total"])
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(rows, model.params, state)


def fixed_patch_loss(
    model: HybridLFNet, dataset: Sequence[Scene], config: TrainConfig, per_scene: int = 2, seed: int = 12345
) -> dict[str, float]:
    """Mean loss terms over a fixed, unaugmented set of training patches.

    The per-iteration log is dominated by which scene happens to be drawn;
    scoring the same patches before and after training measures progress
    without that sampling noise.
    """
    rng = np.random.default_rng(seed)
    weights = config.weights()
    sums: dict[str, float] = {}
    count = 0
    with inference(model):
        for scene in dataset:
            hybrid, gt = simulate_hybrid(scene.lf, config.scale)
            for _ in range(per_scene):
                sample = sample_patch(gt, hybrid, config.patch_size, rng, scene.disparity)
                out = model.forward(sample.hybrid)
                _, terms = total_loss(out.fused, out.sr, out.warp, out.d_h, sample.gt, weights)
                for k, v in terms.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
    return {k: v / count for k, v in sums.items()}


# ---------------------------------------------------------------- checkpoints

MAGIC = b"LFHYBCKP"
VERSION = 1


def save_checkpoint(params: Params, state: AdamState | None, config: ModelConfig, path) -> None:
    """Binary container: magic, version, config text, float32 tensors, optional Adam state."""
    names = list(params)
    cfg = "\n".join(f"{k}={v}" for k, v in config.to_dict().items()).encode()
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(cfg))
    buf += cfg
    buf += struct.pack("<I", len(names))

    def put_array(a: np.ndarray):
        nonlocal buf
        buf += np.ascontiguousarray(a, dtype="<f4").tobytes()

    for n in names:
        a = params[n].data
        nb = n.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
        put_array(a)
    if state is None or not state.m:
        buf += struct.pack("<B", 0)
    else:
        buf += struct.pack("<B", 1)
        buf += struct.pack("<Qddd", state.t, state.beta1, state.beta2, state.eps)
        for n in names:
            put_array(state.m[n])
            put_array(state.v[n])
    Path(path).write_bytes(bytes(buf))


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    state: AdamState | None

    def model(self) -> HybridLFNet:
        """Build a float32 model and load the stored tensors into it."""
        net = HybridLFNet(self.config, dtype=np.float32)
        unknown = set(self.tensors) - set(net.params)
        if unknown:
            raise CheckpointError(f"unknown tensor name(s): {sorted(unknown)}")
        missing = set(net.params) - set(self.tensors)
        if missing:
            raise CheckpointError(f"checkpoint lacks tensor(s): {sorted(missing)}")
        for n, p in net.params.items():
            if p.data.shape != self.tensors[n].shape:
                raise CheckpointError(f"shape mismatch for {n}")
            p.data[...] = self.tensors[n]
        return net

    def resume_state(self) -> AdamState:
        if self.state is None:
            raise CheckpointError("checkpoint has no optimizer state; cannot resume training")
        return self.state


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if len(r.data) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_dict(parse_kv(r.take(cfg_len).decode()))
    (n,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    shapes = []
    for _ in range(n):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        shapes.append((name, shape, count))
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        t, b1, b2, eps = r.unpack("<Qddd")
        state = AdamState(t=t, beta1=b1, beta2=b2, eps=eps)
        for name, shape, count in shapes:
            state.m[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
            state.v[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config, tensors, state)
