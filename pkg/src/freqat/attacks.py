"""L-infinity white-box attacks: FGSM, PGD with random start, and margin-loss
PGD (the C&W-style evaluation attack, confidence 0).

All attacks work on one image ``[C, H, W]`` or a batch ``[B, C, H, W]`` and
always return points inside both the epsilon-ball around the original input
and the [0, 1] pixel box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from . import model as M
from .layers import softmax_cross_entropy

CROSS_ENTROPY = "cross_entropy"
CW_MARGIN = "cw_margin"
LOSS_KINDS = (CROSS_ENTROPY, CW_MARGIN)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    loss_kind: str = CROSS_ENTROPY

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


class InputTransform(Protocol):
    """A differentiable preprocessing stage placed in front of the model."""

    def __call__(self, x: np.ndarray) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray: ...


def cw_margin_loss(logits: np.ndarray, label) -> tuple:
    """``max_{j != y} z_j - z_y`` and its subgradient.

    The +1 goes to the best wrong class (lowest index on ties), -1 to the
    true class. Batched like :func:`softmax_cross_entropy`.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(label)
    c = z.shape[-1]
    if c < 2:
        raise ValueError("margin loss needs at least two classes")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range [0, {c})")
    onehot = np.arange(c) == labels[..., None]
    others = np.where(onehot, -np.inf, z)
    j = others.argmax(axis=-1)
    loss = np.take_along_axis(z, j[..., None], -1)[..., 0] - np.take_along_axis(
        z, labels[..., None], -1
    )[..., 0]
    grad = (np.arange(c) == j[..., None]).astype(np.float64) - onehot
    if z.ndim == 1:
        return float(loss), grad
    return loss, grad


LOSSES: dict[str, Callable] = {
    CROSS_ENTROPY: softmax_cross_entropy,
    CW_MARGIN: cw_margin_loss,
}


def input_gradient(
    params: M.ModelParams,
    images: np.ndarray,
    labels: np.ndarray,
    loss_kind: str = CROSS_ENTROPY,
    transform: Optional[InputTransform] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses ``[B]`` and their gradient w.r.t. the batch."""
    fed = images if transform is None else transform(images)
    logits, cache = M.forward(params, fed)
    losses, g = LOSSES[loss_kind](logits, labels)
    _, gx = M.backward(params, cache, g, param_grads=False)
    if transform is not None:
        gx = transform.vjp(images, gx)
    return losses, gx


def _batched(images, labels):
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim == 3:
        return x[None], y.reshape(1), True
    return x, y, False


def fgsm(params: M.ModelParams, images, labels, epsilon: float) -> np.ndarray:
    """Single signed-gradient step of size epsilon on the cross-entropy loss."""
    x, y, single = _batched(images, labels)
    _, g = input_gradient(params, x, y)
    adv = np.clip(x + epsilon * np.sign(g), 0.0, 1.0)
    return adv[0] if single else adv


def random_start_noise(
    rng: np.random.Generator, shape: tuple[int, ...], epsilon: float
) -> np.ndarray:
    return rng.uniform(-epsilon, epsilon, size=shape)


def pgd(
    params: M.ModelParams,
    images,
    labels,
    cfg: AttackConfig,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    transform: Optional[InputTransform] = None,
) -> np.ndarray:
    """Projected gradient ascent on ``cfg.loss_kind`` inside the epsilon-ball.

    With ``cfg.random_start`` the iterate starts from ``x + U(-eps, eps)``,
    clamped to [0, 1]. The noise is drawn from ``rng`` unless a pre-drawn
    ``noise`` array is passed (used by callers that split a batch into
    chunks but want one noise draw per batch).
    """
    x, y, single = _batched(images, labels)
    eps = cfg.epsilon
    adv = x.copy()
    if cfg.random_start and eps > 0:
        if noise is None:
            if rng is None:
                raise ValueError("random start needs an rng or pre-drawn noise")
            noise = random_start_noise(rng, x.shape, eps)
        adv = np.clip(x + noise.reshape(x.shape), 0.0, 1.0)
    lo, hi = x - eps, x + eps
    for _ in range(cfg.steps):
        _, g = input_gradient(params, adv, y, cfg.loss_kind, transform)
        adv = adv + cfg.alpha * np.sign(g)
        adv = np.clip(np.clip(adv, lo, hi), 0.0, 1.0)
    return adv[0] if single else adv

