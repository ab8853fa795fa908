"""Forward and gradient rules for the layer primitives of the small CNN.

Every function accepts either a single example or a batch with a leading
axis, and returns new arrays (inputs are never modified). All values are
``float64``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConvLayerParams:
    kernels: np.ndarray  # [out_ch, in_ch, kh, kw]
    bias: np.ndarray  # [out_ch]

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.bias.shape != (self.kernels.shape[0],):
            raise ValueError(
                f"bad conv shapes: kernels {self.kernels.shape}, bias {self.bias.shape}"
            )

    @property
    def out_ch(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernels.shape[1]


@dataclass
class DenseLayerParams:
    weight: np.ndarray  # [out_dim, in_dim]
    bias: np.ndarray  # [out_dim]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bad dense shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )


def _as_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * p, w + 2 * p))
    out[:, :, p : p + h, p : p + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # padded [B, C, Hp, Wp] -> [B, C*kh*kw, Ho*Wo], rows ordered (c, i, j)
    b, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    taps = [xp[:, :, i : i + ho, j : j + wo] for i in range(kh) for j in range(kw)]
    return np.stack(taps, axis=2).reshape(b, c * kh * kw, ho * wo)


def conv_forward(
    x: np.ndarray, params: ConvLayerParams, padding: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Batched conv on ``[B, C, H, W]``; also returns the im2col matrix so the
    backward pass can reuse it."""
    bsz, c, h, w = x.shape
    oc, ic, kh, kw = params.kernels.shape
    if c != ic:
        raise ValueError(f"input has {c} channels, kernels expect {ic}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    cols = _im2col(_pad(x, padding), kh, kw)
    out = np.matmul(params.kernels.reshape(oc, -1), cols) + params.bias[:, None]
    return out.reshape(bsz, oc, ho, wo), cols


def conv_backward(
    cols: np.ndarray,
    in_shape: tuple[int, ...],
    params: ConvLayerParams,
    upstream: np.ndarray,
    padding: int = 1,
    need_input: bool = True,
    need_params: bool = True,
) -> tuple[np.ndarray | None, ConvLayerParams | None]:
    bsz, c, h, w = in_shape
    oc, ic, kh, kw = params.kernels.shape
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if upstream.shape != (bsz, oc, ho, wo):
        raise ValueError(f"upstream shape {upstream.shape} != conv output {(bsz, oc, ho, wo)}")
    g = upstream.reshape(bsz, oc, ho * wo)
    gparams = gx = None
    if need_params:
        grad_k = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
        gparams = ConvLayerParams(grad_k.reshape(oc, ic, kh, kw), g.sum(axis=(0, 2)))
    if need_input:
        gcols = np.matmul(params.kernels.reshape(oc, -1).T, g)
        gcols = gcols.reshape(bsz, ic, kh, kw, ho, wo)
        gp = np.zeros((bsz, ic, h + 2 * padding, w + 2 * padding))
        for i in range(kh):
            for j in range(kw):
                gp[:, :, i : i + ho, j : j + wo] += gcols[:, :, i, j]
        gx = np.ascontiguousarray(gp[:, :, padding : padding + h, padding : padding + w])
    return gx, gparams


def conv2d(x: np.ndarray, params: ConvLayerParams, padding: int = 1) -> np.ndarray:
    """Zero-padded, stride-1 cross-correlation plus bias.

    ``x`` is ``[C_in, H, W]`` or ``[B, C_in, H, W]``.
    """
    xb, single = _as_batch(np.asarray(x, dtype=np.float64), 3)
    out, _ = conv_forward(xb, params, padding)
    return out[0] if single else out


def conv2d_grad(
    x: np.ndarray, params: ConvLayerParams, upstream: np.ndarray, padding: int = 1
) -> tuple[np.ndarray, ConvLayerParams]:
    """Gradients of :func:`conv2d` w.r.t. its input, kernels and bias.

    Parameter gradients are summed over the batch axis when one is present.
    """
    xb, single = _as_batch(np.asarray(x, dtype=np.float64), 3)
    gb, _ = _as_batch(np.asarray(upstream, dtype=np.float64), 3)
    if xb.shape[1] != params.in_ch:
        raise ValueError(f"input has {xb.shape[1]} channels, kernels expect {params.in_ch}")
    cols = _im2col(_pad(xb, padding), *params.kernels.shape[2:])
    gx, gparams = conv_backward(cols, xb.shape, params, gb, padding)
    return (gx[0] if single else gx), gparams


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return upstream * (x > 0)


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 non-overlapping max pooling over the last two axes.

    Returns the pooled array and the in-window argmax (0..3, row-major within
    the window). Ties go to the first position in scan order.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    a, b = x[..., 0::2, 0::2], x[..., 0::2, 1::2]
    c, d = x[..., 1::2, 0::2], x[..., 1::2, 1::2]
    best = np.maximum(np.maximum(a, b), np.maximum(c, d))
    # first window position (row-major) that attains the max
    idx = np.where(a == best, 0, np.where(b == best, 1, np.where(c == best, 2, 3)))
    return best, idx.astype(np.int8)


def maxpool2_grad(upstream: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    """Route each pooled gradient back to its recorded argmax position."""
    if upstream.shape != argmax.shape:
        raise ValueError(f"upstream {upstream.shape} != argmax {argmax.shape}")
    ho, wo = upstream.shape[-2:]
    out = np.empty((*upstream.shape[:-2], 2 * ho, 2 * wo))
    for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        np.multiply(upstream, argmax == k, out=out[..., i::2, j::2])
    return out


def dense(x: np.ndarray, params: DenseLayerParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(f"input length {x.shape[-1]} != in_dim {params.weight.shape[1]}")
    return x @ params.weight.T + params.bias


def dense_grad(
    x: np.ndarray, params: DenseLayerParams, upstream: np.ndarray
) -> tuple[np.ndarray, DenseLayerParams]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weight.shape[1]:
        raise ValueError(f"input length {x.shape[-1]} != in_dim {params.weight.shape[1]}")
    if upstream.shape[-1] != params.weight.shape[0]:
        raise ValueError(f"upstream length {upstream.shape[-1]} != out_dim")
    gx = upstream @ params.weight
    if x.ndim == 1:
        return gx, DenseLayerParams(np.outer(upstream, x), upstream.copy())
    return gx, DenseLayerParams(upstream.T @ x, upstream.sum(axis=0))


def softmax_cross_entropy(logits: np.ndarray, label) -> tuple:
    """Cross-entropy of softmax(logits) against integer labels.

    For 1-D logits returns ``(loss: float, grad [C])``; for ``[B, C]`` logits
    with a label array returns per-example losses ``[B]`` and grads ``[B, C]``.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(label)
    c = z.shape[-1]
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range [0, {c})")
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    probs = np.exp(shifted - lse[..., None])
    onehot = np.arange(c) == labels[..., None]
    loss = lse - np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    grad = probs - onehot
    if z.ndim == 1:
        return float(loss), grad
    return loss, grad
