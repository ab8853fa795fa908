"""Natural training, PGD adversarial training and the frequency-regularized
objective, plus SGD with momentum, the step schedule, SWA and evaluation.

The regularized objective for a batch of n examples is::

    mean_i [ CE(f(x'_i), y_i) + lam * sum_k |Re D_i[k]| + |Im D_i[k]| ]
    D_i = DFT(f(x_i)) - DFT(f(x'_i))

where f(.) are the pre-softmax logits and x'_i is the PGD example. The
attack is treated as a constant when differentiating, but both the natural
and the adversarial forward passes contribute parameter gradients.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import model as M
from . import rng
from .attacks import AttackConfig, pgd, random_start_noise
from .data import Dataset, hflip
from .io import csv_bytes
from .layers import softmax_cross_entropy
from .spectral import dft1d, dft1d_adjoint

# Fixed work unit for every batched computation. Keeping it independent of
# the worker count makes results bit-identical for any degree of parallelism.
CHUNK = 32


def default_drops(epochs: int) -> tuple[tuple[int, float], ...]:
    """One-tenth at 75% and again at 90% of the run (1-based epochs)."""
    return ((max(1, round(0.75 * epochs)), 0.1), (max(1, round(0.9 * epochs)), 0.1))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr0: float = 0.01
    lr_drops: Optional[tuple[tuple[int, float], ...]] = None  # None -> default_drops
    momentum: float = 0.9
    weight_decay: float = 5e-4
    fr_lambda: float = 0.1
    fr_on_softmax: bool = False
    train_attack: Optional[AttackConfig] = field(default_factory=AttackConfig)
    val_attack: AttackConfig = field(default_factory=lambda: AttackConfig(steps=20))
    swa_enabled: bool = True
    swa_start: Optional[int] = None  # None -> first LR drop epoch
    augment_flip: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.fr_lambda < 0:
            raise ValueError("fr_lambda must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def drops(self) -> tuple[tuple[int, float], ...]:
        return default_drops(self.epochs) if self.lr_drops is None else tuple(self.lr_drops)

    @property
    def swa_first_epoch(self) -> int:
        if self.swa_start is not None:
            return self.swa_start
        return min(e for e, _ in self.drops) if self.drops else 1

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch."""
        lr = self.lr0
        for e, factor in sorted(self.drops):
            if epoch >= e:
                lr *= factor
        return lr


@dataclass
class MetricsRow:
    epoch: int
    learning_rate: float
    train_loss: float
    standard_acc: float
    robust_acc: float
    wall_seconds: float


METRICS_COLUMNS = ["epoch", "learning_rate", "train_loss", "standard_acc", "robust_acc"]


def metrics_csv(rows: Sequence[MetricsRow], seed: int) -> bytes:
    # wall-clock time is kept out of this file so reruns are byte-identical
    return csv_bytes(
        METRICS_COLUMNS,
        [[getattr(r, c) for c in METRICS_COLUMNS] for r in rows],
        comments=[f"seed={seed}"],
    )


def timing_csv(rows: Sequence[MetricsRow], seed: int) -> bytes:
    return csv_bytes(
        ["epoch", "wall_seconds"], [[r.epoch, r.wall_seconds] for r in rows], [f"seed={seed}"]
    )


# -- frequency regularization ------------------------------------------------


def fr_loss(out_nat: np.ndarray, out_adv: np.ndarray):
    """L1 distance between the DFTs of two output vectors, real and imaginary
    parts taken separately and summed.

    Returns ``(loss, grad_nat, grad_adv)``; batched inputs ``[B, C]`` give a
    loss per example. ``sign(0) = 0`` at the kinks.
    """
    a = np.asarray(out_nat, dtype=np.float64)
    b = np.asarray(out_adv, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"output shapes differ: {a.shape} vs {b.shape}")
    d = dft1d(a - b)
    loss = np.abs(d.re).sum(axis=-1) + np.abs(d.im).sum(axis=-1)
    g = dft1d_adjoint(np.sign(d.re), np.sign(d.im))
    if a.ndim == 1:
        loss = float(loss)
    return loss, g, -g


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    return p * (g - (g * p).sum(axis=-1, keepdims=True))


# -- objectives ----------------------------------------------------------------


def _chunk_objective(params, x, y, cfg: TrainConfig, noise, x_adv):
    """Summed (not averaged) loss and parameter gradients over one chunk."""
    if cfg.train_attack is None:
        logits, cache = M.forward(params, x)
        ce, g = softmax_cross_entropy(logits, y)
        grads, _ = M.backward(params, cache, g, input_grad=False)
        return float(ce.sum()), grads

    if x_adv is None:
        x_adv = pgd(params, x, y, cfg.train_attack, noise=noise)
    lam = cfg.fr_lambda
    z_adv, cache_adv = M.forward(params, x_adv)
    z_nat, cache_nat = M.forward(params, x)
    ce, g_ce = softmax_cross_entropy(z_adv, y)
    if cfg.fr_on_softmax:
        p_nat, p_adv = _softmax(z_nat), _softmax(z_adv)
        fr, g_pn, g_pa = fr_loss(p_nat, p_adv)
        g_nat, g_adv = _softmax_vjp(p_nat, g_pn), _softmax_vjp(p_adv, g_pa)
    else:
        fr, g_nat, g_adv = fr_loss(z_nat, z_adv)
    grads_adv, _ = M.backward(params, cache_adv, g_ce + lam * g_adv, input_grad=False)
    grads_nat, _ = M.backward(params, cache_nat, lam * g_nat, input_grad=False)
    return float((ce + lam * fr).sum()), grads_adv.map(np.add, grads_nat)


def _plain_at_chunk(params, x, y, attack_cfg: AttackConfig, noise):
    x_adv = pgd(params, x, y, attack_cfg, noise=noise)
    logits, cache = M.forward(params, x_adv)
    ce, g = softmax_cross_entropy(logits, y)
    grads, _ = M.backward(params, cache, g, input_grad=False)
    return float(ce.sum()), grads


def _map_chunks(fn: Callable[[slice], tuple], n: int, workers: int) -> list:
    slices = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if workers <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))


def _reduce(results: list, n: int) -> tuple[float, M.ParamGrads]:
    # fixed chunk order -> deterministic sums
    loss, grads = results[0]
    for l, g in results[1:]:
        loss += l
        grads = grads.map(np.add, g)
    return loss / n, grads.map(lambda t: t / n)


def _batch(images, labels):
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim == 3:
        return x[None], y.reshape(1)
    return x, y


def at_objective(
    params: M.ModelParams,
    images,
    labels,
    cfg: TrainConfig,
    attack_rng: Optional[np.random.Generator] = None,
    adv_images: Optional[np.ndarray] = None,
) -> tuple[float, M.ParamGrads]:
    """Mean training objective over a batch and its parameter gradient.

    The kind of objective follows ``cfg``: natural cross-entropy when
    ``cfg.train_attack`` is None, otherwise adversarial cross-entropy plus
    ``cfg.fr_lambda`` times the frequency term. ``adv_images`` skips the
    attack and uses the given adversarial batch instead.
    """
    x, y = _batch(images, labels)
    noise = None
    atk = cfg.train_attack
    if atk is not None and adv_images is None and atk.random_start and atk.epsilon > 0:
        if attack_rng is None:
            raise ValueError("random-start attack needs attack_rng")
        noise = random_start_noise(attack_rng, x.shape, atk.epsilon)
    xa = None if adv_images is None else np.asarray(adv_images, dtype=np.float64).reshape(x.shape)

    def run(s: slice):
        return _chunk_objective(
            params, x[s], y[s], cfg,
            None if noise is None else noise[s],
            None if xa is None else xa[s],
        )

    return _reduce(_map_chunks(run, len(x), cfg.workers), len(x))


def plain_at_objective(
    params: M.ModelParams,
    images,
    labels,
    attack_cfg: AttackConfig,
    attack_rng: Optional[np.random.Generator] = None,
    workers: int = 1,
) -> tuple[float, M.ParamGrads]:
    """Mean adversarial cross-entropy (PGD-AT without any regularizer)."""
    x, y = _batch(images, labels)
    noise = None
    if attack_cfg.random_start and attack_cfg.epsilon > 0:
        noise = random_start_noise(attack_rng, x.shape, attack_cfg.epsilon)

    def run(s: slice):
        return _plain_at_chunk(params, x[s], y[s], attack_cfg, None if noise is None else noise[s])

    return _reduce(_map_chunks(run, len(x), workers), len(x))


# -- optimizer and weight averaging -------------------------------------------


def sgd_step(
    params: M.ModelParams,
    grads: M.ParamGrads,
    velocity: Optional[M.ModelParams],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> tuple[M.ModelParams, M.ModelParams]:
    """Classical momentum SGD with L2 weight decay folded into the gradient:
    ``v <- momentum*v + (g + wd*p)``, ``p <- p - lr*v``."""
    if velocity is None:
        velocity = M.zeros_like(params)
    velocity = velocity.map(lambda v, g, p: momentum * v + (g + weight_decay * p), grads, params)
    return params.map(lambda p, v: p - lr * v, velocity), velocity


@dataclass
class SwaState:
    avg: Optional[M.ModelParams] = None
    count: int = 0


def swa_update(state: SwaState, checkpoint: M.ModelParams) -> SwaState:
    """Fold one more checkpoint into the running arithmetic mean."""
    if state.count == 0 or state.avg is None:
        return SwaState(checkpoint.copy(), 1)
    k = state.count + 1
    if k == 2:
        # the plain midpoint is correctly rounded and still maps (a, a) to a
        avg = state.avg.map(lambda a, c: (a + c) / 2, checkpoint)
    else:
        # incremental form: absorbing a checkpoint equal to the mean leaves
        # it bit-for-bit unchanged
        avg = state.avg.map(lambda a, c: a + (c - a) / k, checkpoint)
    return SwaState(avg, k)


# -- evaluation ----------------------------------------------------------------


def adversarial_examples(
    params: M.ModelParams,
    images: np.ndarray,
    labels: np.ndarray,
    attack: AttackConfig,
    seed: int = 0,
    workers: int = 1,
    transform=None,
) -> np.ndarray:
    """Attack a whole dataset chunk by chunk with a seeded random start."""
    g = rng.stream(seed, rng.ATTACK)
    n = len(images)
    noise = None
    if attack.random_start and attack.epsilon > 0:
        noise = random_start_noise(g, images.shape, attack.epsilon)

    def run(s: slice):
        return pgd(params, images[s], labels[s], attack,
                   noise=None if noise is None else noise[s], transform=transform)

    chunks = _map_chunks(run, n, workers)
    return np.concatenate(chunks) if chunks else images.copy()


def logits_of(params: M.ModelParams, images: np.ndarray, workers: int = 1) -> np.ndarray:
    chunks = _map_chunks(lambda s: M.forward(params, images[s])[0], len(images), workers)
    return np.concatenate(chunks) if chunks else np.zeros((0, params.num_classes))


def accuracy_and_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    if len(labels) == 0:
        return 0.0, 0.0
    pred = M.predict_logits(logits)
    ce, _ = softmax_cross_entropy(logits, labels)
    return float(np.mean(pred == labels)), float(np.mean(ce))


def evaluate(
    params: M.ModelParams,
    dataset: Dataset,
    attack: Optional[AttackConfig] = None,
    seed: int = 0,
    workers: int = 1,
) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on clean or attacked inputs."""
    x = dataset.images
    if attack is not None:
        x = adversarial_examples(params, x, dataset.labels, attack, seed, workers)
    return accuracy_and_loss(logits_of(params, x, workers), dataset.labels)


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    final: M.ModelParams
    swa: Optional[M.ModelParams]
    metrics: list[MetricsRow]


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    params: Optional[M.ModelParams] = None,
    on_epoch: Optional[Callable[[MetricsRow], None]] = None,
) -> TrainResult:
    """Run the full schedule. ``params`` defaults to ``model.init(config.seed)``."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if params is None:
        params = M.init(config.seed, classes=train_set.class_count)
    data_rng = rng.stream(config.seed, rng.DATA)
    attack_rng = rng.stream(config.seed, rng.ATTACK)
    aug_rng = rng.stream(config.seed, rng.AUGMENT)
    velocity = None
    swa = SwaState()
    rows: list[MetricsRow] = []
    n = len(train_set)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        order = data_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = train_set.images[idx]
            if config.augment_flip:
                x = hflip(x, aug_rng.random(len(idx)) < 0.5)
            loss, grads = at_objective(params, x, train_set.labels[idx], config, attack_rng)
            params, velocity = sgd_step(
                params, grads, velocity, lr, config.momentum, config.weight_decay
            )
            total += loss * len(idx)
        if not all(np.isfinite(t).all() for t in params.tensors()):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}; lower lr0")

        std_acc, _ = evaluate(params, val_set, None, config.seed, config.workers)
        rob_acc, _ = evaluate(params, val_set, config.val_attack, config.seed, config.workers)
        if config.swa_enabled and epoch >= config.swa_first_epoch:
            swa = swa_update(swa, params)
        row = MetricsRow(epoch, lr, total / n, std_acc, rob_acc, time.perf_counter() - t0)
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)

    return TrainResult(params, swa.avg if config.swa_enabled else None, rows)

