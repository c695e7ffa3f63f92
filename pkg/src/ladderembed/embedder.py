"""Trainable embedding functions with hand-written reverse-mode gradients.

Two architectures are provided:

``LINEAR``
    flatten -> dense(d). Parameters: ``d * T * C + d``.

``MINICONV``
    A reduced EEGNet-style stack operating on a (T, C) trial:

    1. temporal convolution, ``f1`` filters of length ``temporal_kernel``,
       same padding, no bias
    2. depthwise spatial convolution over all C channels, ``depth_mult``
       filters per temporal filter (G = f1 * depth_mult maps), ELU,
       average pooling by ``pool1`` (T1 = T // pool1)
    3. depthwise temporal convolution of length ``sep_kernel`` (same padding)
       followed by a pointwise convolution to ``f2`` maps with bias, ELU,
       average pooling by ``pool2`` (T2 = T1 // pool2)
    4. flatten -> dense(d)

    Parameters: ``f1*k1 + G*C + G*k2 + f2*G + f2 + d*f2*T2 + d``; with
    the defaults at a 128 x 8 input that is 256 + 128 + 256 + 272 + 520 = 1432.

Batch normalisation and dropout are not part of either network. Outputs are
not length-normalised. All per-trial products go through stacked ``matmul``
calls so a trial's embedding does not depend on which batch it is part of.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng
from .dataio import Dataset
from .errors import DegenerateData, FormatError, ShapeMismatch
from .losses import LossConfig, builtin_config, product_ladder_loss_and_grad
from .mining import BatchSpec, combination_pools, resolve_combinations, sample_batch

LINEAR = "linear"
MINICONV = "miniconv"

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str = LINEAR
    input_shape: tuple[int, int] = (32, 4)
    embed_dim: int = 8
    f1: int = 8
    depth_mult: int = 2
    f2: int = 16
    temporal_kernel: int = 32
    sep_kernel: int = 16
    pool1: int = 4
    pool2: int = 8

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        t, c = self.input_shape
        if self.kind not in (LINEAR, MINICONV):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if t < 1 or c < 1 or self.embed_dim < 1:
            raise ValueError("input_shape and embed_dim must be positive")
        if self.kind == MINICONV:
            if min(self.f1, self.depth_mult, self.f2, self.temporal_kernel, self.sep_kernel,
                   self.pool1, self.pool2) < 1:
                raise ValueError("MINICONV sizes must be positive")
            if self.temporal_kernel > t or self.sep_kernel > t:
                raise ValueError("kernels must not exceed time_steps")
            if self.pooled_lengths[1] < 1:
                raise ValueError(f"pooling {self.pool1}x{self.pool2} leaves no samples of {t}")

    @property
    def pooled_lengths(self) -> tuple[int, int]:
        t1 = self.input_shape[0] // self.pool1
        return t1, t1 // self.pool2

    @property
    def n_maps(self) -> int:
        return self.f1 * self.depth_mult

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter tensor shapes in checkpoint order."""
        t, c = self.input_shape
        d = self.embed_dim
        if self.kind == LINEAR:
            return {"dense.weight": (d, t * c), "dense.bias": (d,)}
        g = self.n_maps
        _, t2 = self.pooled_lengths
        return {
            "temporal.weight": (self.f1, self.temporal_kernel),
            "spatial.weight": (g, c),
            "depthwise.weight": (g, self.sep_kernel),
            "pointwise.weight": (self.f2, g),
            "pointwise.bias": (self.f2,),
            "dense.weight": (d, self.f2 * t2),
            "dense.bias": (d,),
        }

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    def fans(self) -> dict[str, tuple[int, int]]:
        """(fan_in, fan_out) per weight: inputs feeding one output, outputs fed by one input."""
        t, c = self.input_shape
        if self.kind == LINEAR:
            return {"dense.weight": (t * c, self.embed_dim)}
        _, t2 = self.pooled_lengths
        return {
            "temporal.weight": (self.temporal_kernel, self.f1 * self.temporal_kernel),
            "spatial.weight": (c, self.depth_mult),
            "depthwise.weight": (self.sep_kernel, self.sep_kernel),
            "pointwise.weight": (self.n_maps, self.f2),
            "dense.weight": (self.f2 * t2, self.embed_dim),
        }


_INIT_STREAM = 0x1417
_BATCH_STREAM = 0xBA7C


def init_params(arch: ArchitectureSpec, seed: int) -> Params:
    """Glorot-uniform weights, zero biases."""
    fans = arch.fans()
    params = {}
    for i, (name, shape) in enumerate(arch.shapes().items()):
        if name in fans:
            fan_in, fan_out = fans[name]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniforms(rng.derive_key(seed, _INIT_STREAM, i), 0, math.prod(shape))
            params[name] = ((2.0 * u - 1.0) * bound).reshape(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# --- forward / backward --------------------------------------------------------------------


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _same_pad(x, k, axis=1):
    left = (k - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (left, k - 1 - left)
    return np.pad(x, pad)


def _pool(x, size):
    """Average-pool axis 1 of (n, T, F) by ``size``, dropping the remainder."""
    n, t, f = x.shape
    tp = t // size
    return x[:, : tp * size].reshape(n, tp, size, f).mean(axis=2)


def _pool_backward(dy, size, t):
    n, tp, f = dy.shape
    dx = np.zeros((n, t, f))
    dx[:, : tp * size] = np.repeat(dy / size, size, axis=1)
    return dx


def _check_input(arch, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != arch.input_shape:
        raise ShapeMismatch(f"expected trials of shape {arch.input_shape}, got {X.shape[1:] if X.ndim == 3 else X.shape}")
    return X


def _forward(arch: ArchitectureSpec, params: Params, X):
    """Returns (embeddings (n, d), cache for the backward pass)."""
    n = X.shape[0]
    if arch.kind == LINEAR:
        flat = X.reshape(n, 1, -1)
        out = (flat @ params["dense.weight"].T)[:, 0] + params["dense.bias"]
        return out, {"flat": flat[:, 0]}

    t, c = arch.input_shape
    f1, dm, g = arch.f1, arch.depth_mult, arch.n_maps
    k1, k2 = arch.temporal_kernel, arch.sep_kernel
    t1, _ = arch.pooled_lengths

    win1 = np.ascontiguousarray(sliding_window_view(_same_pad(X, k1), k1, axis=1))  # (n, T, C, k1)
    h1 = (win1.reshape(n, t * c, k1) @ params["temporal.weight"].T).reshape(n, t, c, f1)
    h1t = np.ascontiguousarray(h1.transpose(0, 3, 1, 2))  # (n, f1, T, C)
    w2 = params["spatial.weight"].reshape(f1, dm, c)
    h2 = (h1t @ w2.transpose(0, 2, 1)).transpose(0, 2, 1, 3).reshape(n, t, g)
    p2 = _pool(_elu(h2), arch.pool1)  # (n, T1, G)

    win3 = sliding_window_view(_same_pad(p2, k2), k2, axis=1)  # (n, T1, G, k2)
    h3 = np.sum(win3 * params["depthwise.weight"], axis=-1)
    h4 = h3 @ params["pointwise.weight"].T + params["pointwise.bias"]  # (n, T1, f2)
    p4 = _pool(_elu(h4), arch.pool2)  # (n, T2, f2)

    flat = p4.reshape(n, 1, -1)
    out = (flat @ params["dense.weight"].T)[:, 0] + params["dense.bias"]
    cache = dict(win1=win1, h1t=h1t, h2=h2, p2=p2, win3=win3, h3=h3, h4=h4, flat=flat[:, 0], t1=t1)
    return out, cache


def _backward(arch: ArchitectureSpec, params: Params, cache, dout) -> Params:
    n = dout.shape[0]
    grads = {
        "dense.weight": dout.T @ cache["flat"],
        "dense.bias": dout.sum(axis=0),
    }
    if arch.kind == LINEAR:
        return grads

    t, c = arch.input_shape
    f1, dm, g, f2 = arch.f1, arch.depth_mult, arch.n_maps, arch.f2
    k1, k2 = arch.temporal_kernel, arch.sep_kernel
    t1, t2 = arch.pooled_lengths

    dp4 = (dout @ params["dense.weight"]).reshape(n, t2, f2)
    h4 = cache["h4"]
    dh4 = _pool_backward(dp4, arch.pool2, t1) * _elu_grad(h4)
    grads["pointwise.weight"] = dh4.reshape(-1, f2).T @ cache["h3"].reshape(-1, g)
    grads["pointwise.bias"] = dh4.sum(axis=(0, 1))
    dh3 = dh4 @ params["pointwise.weight"]  # (n, T1, G)

    grads["depthwise.weight"] = np.einsum("ntg,ntgj->gj", dh3, cache["win3"])
    w3 = params["depthwise.weight"]
    dpad = np.zeros((n, t1 + k2 - 1, g))
    for j in range(k2):
        dpad[:, j : j + t1] += dh3 * w3[:, j]
    left = (k2 - 1) // 2
    dp2 = dpad[:, left : left + t1]

    h2 = cache["h2"]
    dh2 = _pool_backward(dp2, arch.pool1, t) * _elu_grad(h2)  # (n, T, G)
    dh2r = np.ascontiguousarray(dh2.reshape(n, t, f1, dm).transpose(0, 2, 1, 3))  # (n, f1, T, dm)
    h1t = cache["h1t"]
    grads["spatial.weight"] = np.einsum("nftd,nftc->fdc", dh2r, h1t).reshape(g, c)
    w2 = params["spatial.weight"].reshape(f1, dm, c)
    dh1t = dh2r @ w2  # (n, f1, T, C)
    dh1 = dh1t.transpose(0, 2, 3, 1).reshape(-1, f1)  # rows ordered (n, T, C)
    grads["temporal.weight"] = dh1.T @ cache["win1"].reshape(-1, k1)
    return {name: grads[name] for name in arch.shapes()}


def forward_batch(arch: ArchitectureSpec, params: Params, trials) -> np.ndarray:
    """Embed a stack of trials, shape (n, T, C) -> (n, d)."""
    X = _check_input(arch, trials)
    return _forward(arch, params, X)[0]


def forward(arch: ArchitectureSpec, params: Params, trial) -> np.ndarray:
    x = np.asarray(getattr(trial, "samples", trial), dtype=np.float64)
    if x.shape != arch.input_shape:
        raise ShapeMismatch(f"expected trial of shape {arch.input_shape}, got {x.shape}")
    return forward_batch(arch, params, x[None])[0]


def loss_gradient(arch: ArchitectureSpec, params: Params, batch, labels, config: LossConfig,
                  reduction: str = "sum") -> tuple[float, Params]:
    """Product ladder loss of the batch embeddings and its exact gradient w.r.t. every parameter."""
    X = _check_input(arch, batch)
    V, cache = _forward(arch, params, X)
    loss, dV = product_ladder_loss_and_grad(V, labels, config, reduction)
    return loss, _backward(arch, params, cache, dV)


# --- optimisation ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    step: int
    m: Params
    v: Params
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def fresh(cls, params: Params, weight_decay: float = 0.01, **hyper) -> "OptimizerState":
        return cls(0, zeros_like(params), zeros_like(params), weight_decay=weight_decay, **hyper)


def adamw_step(params: Params, grads: Params, state: OptimizerState, lr: float
               ) -> tuple[Params, OptimizerState]:
    """Adam moments with bias correction plus decoupled weight decay scaled by lr."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * theta
        new_params[name] = theta - lr * update
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, step=t, m=new_m, v=new_v)


@dataclass(frozen=True)
class LRSchedule:
    total_steps: int
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if not 0 < self.pct_start < 1:
            raise ValueError("pct_start must lie in (0, 1)")
        if self.total_steps < 2:
            raise ValueError("total_steps must be >= 2")


def _cos_interp(start, end, frac):
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))


def onecycle_lr(sched: LRSchedule, t: int) -> float:
    """Cosine warm-up from max_lr/div to max_lr, then cosine decay to max_lr/final_div."""
    if not 0 <= t < sched.total_steps:
        raise ValueError(f"step {t} outside [0, {sched.total_steps})")
    # the peak sits on an integer step; the epsilon absorbs products like 0.7 * 10 = 7.000000000000001
    peak = max(math.ceil(sched.pct_start * sched.total_steps - 1e-9), 1)
    last = sched.total_steps - 1
    if t <= peak:
        return _cos_interp(sched.max_lr / sched.div, sched.max_lr, t / peak)
    if last <= peak:
        return sched.max_lr / sched.final_div
    return _cos_interp(sched.max_lr, sched.max_lr / sched.final_div, (t - peak) / (last - peak))


# --- training loop -----------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSpec:
    loss_config: LossConfig = field(default_factory=lambda: builtin_config("b"))
    batch_spec: BatchSpec = field(default_factory=BatchSpec)
    steps: int = 1000
    seed: int = 0
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div: float = 25.0
    final_div: float = 1e4
    weight_decay: float = 0.01
    reduction: str = "sum"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def schedule(self) -> LRSchedule:
        return LRSchedule(max(self.steps, 2), self.max_lr, self.pct_start, self.div, self.final_div)


def train_embedder(dataset: Dataset, spec: TrainSpec) -> tuple[Params, list[float]]:
    """Sample balanced batches from TRAIN, embed, compute the loss, step AdamW; return params and per-step loss.

    The dataset is used as given; preprocessing is the caller's job.
    """
    arch = spec.architecture
    if dataset.trial_shape != arch.input_shape:
        raise ShapeMismatch(f"dataset trials are {dataset.trial_shape}, architecture expects {arch.input_shape}")
    if not np.any(dataset.is_train):
        raise DegenerateData("dataset has no TRAIN trials")
    pools = combination_pools(dataset, resolve_combinations(dataset, spec.batch_spec))
    sched = spec.schedule()
    params = init_params(arch, rng.derive_key(spec.seed, _INIT_STREAM))
    opt = OptimizerState.fresh(params, spec.weight_decay)
    state = rng.RngState.from_seed(spec.seed, _BATCH_STREAM)
    trace = []
    for step in range(spec.steps):
        batch, state = sample_batch(dataset, spec.batch_spec, state, pools)
        loss, grads = loss_gradient(arch, params, dataset.samples[batch.indices], batch.labels,
                                    spec.loss_config, spec.reduction)
        trace.append(loss)
        params, opt = adamw_step(params, grads, opt, onecycle_lr(sched, step))
    return params, trace


def embed_dataset(arch: ArchitectureSpec, params: Params, dataset: Dataset, chunk: int = 256) -> np.ndarray:
    parts = [forward_batch(arch, params, dataset.samples[i : i + chunk]) for i in range(0, len(dataset), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, arch.embed_dim))


# --- checkpoints ------------------------------------------------------------------------------

_ARCH_FIELDS = ["kind", "time_steps", "channels", "embed_dim", "f1", "depth_mult", "f2",
                "temporal_kernel", "sep_kernel", "pool1", "pool2", "input_scale"]


def params_bytes(arch: ArchitectureSpec, params: Params) -> bytes:
    """Tensors in checkpoint order as little-endian float32."""
    return b"".join(np.ascontiguousarray(params[name], dtype="<f4").tobytes() for name in arch.shapes())


def save_checkpoint(path, arch: ArchitectureSpec, params: Params, input_scale: float = 1.0) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    t, c = arch.input_shape
    values = [arch.kind, t, c, arch.embed_dim, arch.f1, arch.depth_mult, arch.f2,
              arch.temporal_kernel, arch.sep_kernel, arch.pool1, arch.pool2, repr(float(input_scale))]
    with open(path / "meta.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ARCH_FIELDS)
        w.writerow(values)
    (path / "params.bin").write_bytes(params_bytes(arch, params))


def load_checkpoint(path) -> tuple[ArchitectureSpec, Params, float]:
    path = Path(path)
    meta_path = path / "meta.csv"
    try:
        rows = list(csv.reader(meta_path.read_text(encoding="utf-8").splitlines()))
    except FileNotFoundError:
        raise FormatError("file not found", path=meta_path) from None
    if len(rows) != 2 or rows[0] != _ARCH_FIELDS or len(rows[1]) != len(_ARCH_FIELDS):
        raise FormatError(f"expected header {','.join(_ARCH_FIELDS)} and one value row", path=meta_path, line=1)
    row = dict(zip(_ARCH_FIELDS, rows[1]))
    try:
        ints = {k: int(row[k]) for k in _ARCH_FIELDS[1:-1]}
        scale = float(row["input_scale"])
        arch = ArchitectureSpec(kind=row["kind"], input_shape=(ints.pop("time_steps"), ints.pop("channels")), **ints)
    except ValueError as exc:
        raise FormatError(str(exc), path=meta_path, line=2) from None
    blob_path = path / "params.bin"
    if not blob_path.exists():
        raise FormatError("file not found", path=blob_path)
    blob = blob_path.read_bytes()
    if len(blob) != 4 * arch.n_params():
        raise ShapeMismatch(f"{blob_path}: {len(blob)} bytes, architecture needs {4 * arch.n_params()}")
    params, off = {}, 0
    for name, shape in arch.shapes().items():
        size = math.prod(shape)
        params[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).astype(np.float64).reshape(shape)
        off += 4 * size
    return arch, params, scale


def arch_from_fields(**kwargs) -> ArchitectureSpec:
    known = {f.name for f in fields(ArchitectureSpec)}
    return ArchitectureSpec(**{k: v for k, v in kwargs.items() if k in known})
