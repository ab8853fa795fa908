"""Frequency-domain analyses of trained models.

* low-pass-filter sweeps of clean and adversarial accuracy,
* first-layer kernel smoothness measured as mean adjacent-weight variation,
* centered spectra of natural-vs-adversarial input differences, with PGM
  export for viewing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as M
from .attacks import AttackConfig
from .data import Dataset
from .io import csv_bytes, write_atomic
from .spectral import fft2d, fftshift2d, lpf
from .training import accuracy_and_loss, adversarial_examples, logits_of


@dataclass
class SweepRow:
    bandwidth: int
    clean_acc: float
    robust_acc: float


class LowPassTransform:
    """``clamp(lpf(x))`` as a differentiable input stage for adaptive attacks.

    The unclamped filter is a real, symmetric spectral mask, hence
    self-adjoint; the clamp passes gradient only where it does not bind.
    """

    def __init__(self, bandwidth: int):
        self.bandwidth = bandwidth

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return lpf(x, self.bandwidth)

    def vjp(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        y = lpf(x, self.bandwidth, clamp=False)
        return lpf(grad_out * ((y > 0.0) & (y < 1.0)), self.bandwidth, clamp=False)


def lpf_sweep(
    params: M.ModelParams,
    dataset: Dataset,
    bandwidths: Sequence[int],
    attack: AttackConfig,
    seed: int = 0,
    adaptive: bool = False,
    workers: int = 1,
) -> list[SweepRow]:
    """Clean and robust accuracy with inputs low-pass filtered at each bandwidth.

    By default the adversarial examples are computed once, against the model
    on unfiltered inputs, and then filtered like the clean ones. With
    ``adaptive=True`` the attack is rerun per bandwidth through the filter.
    A bandwidth equal to the image side means no filtering at all.
    """
    bands = [int(b) for b in bandwidths]
    side = dataset.images.shape[-1]
    if any(b > side or b < 1 for b in bands):
        raise ValueError(f"bandwidths must lie in [1, {side}]")
    if any(a <= b for a, b in zip(bands, bands[1:])):
        raise ValueError("bandwidths must be strictly decreasing")
    x, y = dataset.images, dataset.labels
    x_adv = None if adaptive else adversarial_examples(params, x, y, attack, seed, workers)

    rows = []
    for b in bands:
        full = b == side
        if adaptive:
            tf = None if full else LowPassTransform(b)
            xa = adversarial_examples(params, x, y, attack, seed, workers, transform=tf)
        else:
            xa = x_adv
        xc = x if full else lpf(x, b)
        xa = xa if full else lpf(xa, b)
        clean, _ = accuracy_and_loss(logits_of(params, xc, workers), y)
        robust, _ = accuracy_and_loss(logits_of(params, xa, workers), y)
        rows.append(SweepRow(b, clean, robust))
    return rows


def sweep_csv(rows: Sequence[SweepRow], seed: int) -> bytes:
    return csv_bytes(
        ["bandwidth", "clean_acc", "robust_acc"],
        [[r.bandwidth, r.clean_acc, r.robust_acc] for r in rows],
        [f"seed={seed}"],
    )


def kernel_tv(kernel: np.ndarray) -> float:
    """Mean absolute difference over horizontally and vertically adjacent
    weight pairs; 0 for a constant kernel."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ValueError(f"expected a 2-D kernel, got shape {k.shape}")
    dh = np.abs(np.diff(k, axis=1))
    dv = np.abs(np.diff(k, axis=0))
    pairs = dh.size + dv.size
    return float((dh.sum() + dv.sum()) / pairs) if pairs else 0.0


@dataclass
class SmoothnessReport:
    layer: str
    scores: np.ndarray  # [out_ch, in_ch]
    mean: float
    std: float

    def rows(self) -> list[tuple[int, int, float]]:
        o, i = self.scores.shape
        return [(a, b, float(self.scores[a, b])) for a in range(o) for b in range(i)]


def smoothness_report(params: M.ModelParams, layer: str = "conv1") -> SmoothnessReport:
    kernels = getattr(params, layer).kernels
    scores = np.array([[kernel_tv(k) for k in per_out] for per_out in kernels])
    return SmoothnessReport(layer, scores, float(scores.mean()), float(scores.std()))


def smoothness_csv(report: SmoothnessReport, seed: int) -> bytes:
    return csv_bytes(
        ["layer", "out_ch", "in_ch", "tv"],
        [[report.layer, o, i, s] for o, i, s in report.rows()],
        [f"seed={seed}", f"mean={report.mean!r}", f"std={report.std!r}"],
    )


def spectrum_diff(x: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    """Channel-mean magnitude of the centered spectral difference, scaled so
    its maximum is 1 (an all-zero map stays zero)."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(f"shapes differ: {x.shape} vs {x_adv.shape}")
    a, b = fftshift2d(fft2d(x)), fftshift2d(fft2d(x_adv))
    mag = np.hypot(a.re - b.re, a.im - b.im)
    if mag.ndim == 3:
        mag = mag.mean(axis=0)
    peak = mag.max()
    return mag / peak if peak > 0 else np.zeros_like(mag)


def low_frequency_fraction(diff_map: np.ndarray) -> float:
    """Share of the map's energy (sum of squares) inside the centered
    N/2 x N/2 patch. A spectrally flat map gives 0.25; NaN for an all-zero map."""
    m = np.asarray(diff_map, dtype=np.float64)
    h, w = m.shape
    total = float((m**2).sum())
    if total == 0.0:
        return float("nan")
    r0, c0 = h // 2 - h // 4, w // 2 - w // 4
    inner = m[r0 : r0 + h // 2, c0 : c0 + w // 2]
    return float((inner**2).sum()) / total


def pgm_bytes(grid: np.ndarray, comment: str | None = None) -> bytes:
    """Binary greyscale PGM (P5, maxval 255), pixels rounded half-up."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {g.shape}")
    if not np.all((g >= 0.0) & (g <= 1.0)):
        raise ValueError("grid values must lie in [0, 1]")
    h, w = g.shape
    header = "P5\n" + (f"# {comment}\n" if comment else "") + f"{w} {h}\n255\n"
    px = np.floor(g * 255.0 + 0.5).astype(np.uint8)
    return header.encode("ascii") + px.tobytes()


def export_pgm(grid: np.ndarray, path: str | os.PathLike, comment: str | None = None) -> None:
    write_atomic(path, pgm_bytes(grid, comment))
