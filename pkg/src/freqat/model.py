"""The small fixed CNN: parameters, initialization, forward/backward, checkpoints.

Architecture (for 3x32x32 inputs)::

    conv1 3->16 (3x3, pad 1) -> relu -> maxpool2
    conv2 16->32 (3x3, pad 1) -> relu -> maxpool2
    flatten (channel, row, column) -> fc1 2048->128 -> relu -> fc2 128->10

There is no normalization layer, so an averaged (SWA) model can be evaluated
as-is.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import layers, rng
from .io import write_atomic
from .layers import ConvLayerParams, DenseLayerParams

ARCH_TAG = "fr-cnn4-v1"
MAGIC = b"FRCKPT1"


@dataclass
class ModelParams:
    conv1: ConvLayerParams
    conv2: ConvLayerParams
    fc1: DenseLayerParams
    fc2: DenseLayerParams
    arch: str = ARCH_TAG

    def tensors(self) -> list[np.ndarray]:
        """All arrays in the fixed checkpoint order."""
        return [
            self.conv1.kernels, self.conv1.bias,
            self.conv2.kernels, self.conv2.bias,
            self.fc1.weight, self.fc1.bias,
            self.fc2.weight, self.fc2.bias,
        ]

    @classmethod
    def from_tensors(cls, ts: list[np.ndarray], arch: str = ARCH_TAG) -> "ModelParams":
        if len(ts) != 8:
            raise ValueError(f"expected 8 tensors, got {len(ts)}")
        return cls(
            ConvLayerParams(ts[0], ts[1]),
            ConvLayerParams(ts[2], ts[3]),
            DenseLayerParams(ts[4], ts[5]),
            DenseLayerParams(ts[6], ts[7]),
            arch,
        )

    def map(self, fn: Callable[..., np.ndarray], *others: "ModelParams") -> "ModelParams":
        """Apply ``fn`` tensor-wise across this and ``others`` (shape-congruent)."""
        for o in others:
            self.check_congruent(o)
        cols = zip(self.tensors(), *(o.tensors() for o in others))
        return ModelParams.from_tensors([fn(*c) for c in cols], self.arch)

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def check_congruent(self, other: "ModelParams") -> None:
        if other.arch != self.arch:
            raise ValueError(f"architecture tag mismatch: {self.arch!r} vs {other.arch!r}")
        for a, b in zip(self.tensors(), other.tensors()):
            if a.shape != b.shape:
                raise ValueError(f"tensor shape mismatch: {a.shape} vs {b.shape}")

    @property
    def in_channels(self) -> int:
        return self.conv1.in_ch

    @property
    def input_side(self) -> int:
        per_channel = self.fc1.weight.shape[1] // self.conv2.out_ch
        return 4 * math.isqrt(per_channel)

    @property
    def num_classes(self) -> int:
        return self.fc2.weight.shape[0]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors())


# gradients share the parameter structure
ParamGrads = ModelParams


def check_structure(params: ModelParams) -> None:
    """Raise ValueError unless the layer shapes chain into a valid network."""
    k1, k2 = params.conv1.kernels.shape, params.conv2.kernels.shape
    if k1[2:] != (3, 3) or k2[2:] != (3, 3):
        raise ValueError("kernels must be 3x3")
    if k2[1] != k1[0]:
        raise ValueError(f"conv2 expects {k2[1]} channels, conv1 makes {k1[0]}")
    flat = params.fc1.weight.shape[1]
    side = params.input_side
    if side < 4 or k2[0] * (side // 4) ** 2 != flat:
        raise ValueError(f"fc1 input {flat} is not conv2 channels x a square map")
    if params.fc2.weight.shape[1] != params.fc1.weight.shape[0]:
        raise ValueError("fc2 input does not match fc1 output")


def zeros_like(params: ModelParams) -> ModelParams:
    return params.map(np.zeros_like)


def init(
    seed: int,
    in_ch: int = 3,
    conv1: int = 16,
    conv2: int = 32,
    hidden: int = 128,
    classes: int = 10,
    side: int = 32,
) -> ModelParams:
    """He-normal weights (std = sqrt(2 / fan_in)) and zero biases.

    Weights are drawn from the INIT stream of :mod:`freqat.rng` in layer
    order, row-major within each layer. The keyword arguments exist for
    small gradient-check variants; the defaults are the fixed architecture.
    """
    if side % 4:
        raise ValueError("input side must be divisible by 4")
    g = rng.stream(seed, rng.INIT)
    shapes = [
        (conv1, in_ch, 3, 3),
        (conv2, conv1, 3, 3),
        (hidden, conv2 * (side // 4) ** 2),
        (classes, hidden),
    ]
    ts = []
    for shape in shapes:
        fan_in = int(np.prod(shape[1:]))
        ts.append(g.standard_normal(shape) * math.sqrt(2.0 / fan_in))
        ts.append(np.zeros(shape[0]))
    return ModelParams.from_tensors(ts)


@dataclass
class ForwardCache:
    params: ModelParams
    x: np.ndarray
    cols1: np.ndarray
    a1: np.ndarray
    idx1: np.ndarray
    h1: np.ndarray
    cols2: np.ndarray
    a2: np.ndarray
    idx2: np.ndarray
    flat: np.ndarray
    z3: np.ndarray
    r3: np.ndarray
    single: bool = field(default=False)


def forward(params: ModelParams, image: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Logits for one image ``[C, H, W]`` or a batch ``[B, C, H, W]``."""
    x = np.asarray(image, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    side = params.input_side
    if x.ndim != 4 or x.shape[1:] != (params.in_channels, side, side):
        raise ValueError(
            f"expected image shape {(params.in_channels, side, side)}, got {np.shape(image)}"
        )
    a1, cols1 = layers.conv_forward(x, params.conv1)
    p1, idx1 = layers.maxpool2(layers.relu(a1))
    a2, cols2 = layers.conv_forward(p1, params.conv2)
    p2, idx2 = layers.maxpool2(layers.relu(a2))
    flat = p2.reshape(len(x), -1)
    z3 = layers.dense(flat, params.fc1)
    r3 = layers.relu(z3)
    logits = layers.dense(r3, params.fc2)
    cache = ForwardCache(params, x, cols1, a1, idx1, p1, cols2, a2, idx2, flat, z3, r3, single)
    return (logits[0] if single else logits), cache


def backward(
    params: ModelParams,
    cache: ForwardCache,
    grad_logits: np.ndarray,
    param_grads: bool = True,
    input_grad: bool = True,
) -> tuple[ParamGrads | None, np.ndarray | None]:
    """Chain rule through :func:`forward`.

    Parameter gradients are summed over the batch. Either output can be
    switched off (it is then returned as None): attacks only need the input
    gradient, the optimizer only the parameter gradients.
    """
    if cache.params is not params:
        raise ValueError("forward cache was produced with different parameters")
    g = np.asarray(grad_logits, dtype=np.float64)
    if cache.single:
        g = g[None]
    if g.shape != (len(cache.x), params.num_classes):
        raise ValueError(f"grad_logits shape {np.shape(grad_logits)} does not match cache")

    g_r3, g_fc2 = layers.dense_grad(cache.r3, params.fc2, g)
    g_z3 = layers.relu_grad(cache.z3, g_r3)
    g_flat, g_fc1 = layers.dense_grad(cache.flat, params.fc1, g_z3)
    g_p2 = g_flat.reshape(cache.idx2.shape)
    g_a2 = layers.relu_grad(cache.a2, layers.maxpool2_grad(g_p2, cache.idx2))
    g_p1, g_conv2 = layers.conv_backward(
        cache.cols2, cache.h1.shape, params.conv2, g_a2, need_params=param_grads
    )
    g_a1 = layers.relu_grad(cache.a1, layers.maxpool2_grad(g_p1, cache.idx1))
    g_x, g_conv1 = layers.conv_backward(
        cache.cols1, cache.x.shape, params.conv1, g_a1,
        need_input=input_grad, need_params=param_grads,
    )

    grads = ModelParams(g_conv1, g_conv2, g_fc1, g_fc2, params.arch) if param_grads else None
    if g_x is not None and cache.single:
        g_x = g_x[0]
    return grads, g_x


def predict_logits(logits: np.ndarray) -> np.ndarray | int:
    """Argmax with ties broken by the lowest class index."""
    out = np.argmax(logits, axis=-1)  # first maximum wins
    return int(out) if np.ndim(out) == 0 else out


def predict(params: ModelParams, image: np.ndarray):
    logits, _ = forward(params, image)
    return predict_logits(logits)


# -- checkpoints -------------------------------------------------------------
#
# Layout (all integers unsigned 64-bit little-endian, floats IEEE-754 binary64
# little-endian):
#   b"FRCKPT1"
#   u64 len, architecture tag (UTF-8)
#   u64 len, metadata (UTF-8, "key=value" pairs separated by ";")
#   u64 tensor count (8)
#   per tensor in ModelParams.tensors() order: u64 rank, rank x u64 dims, data


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(params: ModelParams, metadata: str = "") -> bytes:
    out = [MAGIC]
    for s in (params.arch, metadata):
        b = s.encode("utf-8")
        out += [struct.pack("<Q", len(b)), b]
    ts = params.tensors()
    out.append(struct.pack("<Q", len(ts)))
    for t in ts:
        out.append(struct.pack(f"<Q{t.ndim}Q", t.ndim, *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(params: ModelParams, path, metadata: str = "") -> None:
    write_atomic(path, checkpoint_bytes(params, metadata))


def parse_checkpoint(data: bytes) -> tuple[ModelParams, str]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    def u64() -> int:
        return struct.unpack("<Q", take(8))[0]

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic (not an FRCKPT1 checkpoint)")
    try:
        arch = take(u64()).decode("utf-8")
        meta = take(u64()).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"bad header string: {e}") from None
    if arch != ARCH_TAG:
        raise CheckpointError(f"unknown architecture tag {arch!r}")
    count = u64()
    if count != 8:
        raise CheckpointError(f"expected 8 tensors, found {count}")
    ts = []
    for _ in range(count):
        rank = u64()
        if rank > 4:
            raise CheckpointError(f"implausible tensor rank {rank}")
        dims = [u64() for _ in range(rank)]
        n = math.prod(dims)  # exact; a corrupt dim fails the length check below
        ts.append(np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims))
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    try:
        params = ModelParams.from_tensors(ts, arch)
        check_structure(params)
    except ValueError as e:
        raise CheckpointError(f"inconsistent tensor shapes: {e}") from None
    return params, meta


def load_checkpoint(path) -> tuple[ModelParams, str]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
