"""Discrete Fourier transforms, spectrum centering and the low-pass filter.

Convention: the forward transform is unnormalized,
``X[k] = sum_n x[n] exp(-2j*pi*k*n/N)``; the inverse carries the ``1/N``
(``1/N**2`` in 2D).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class Spectrum:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re {self.re.shape} and im {self.im.shape} differ")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "Spectrum":
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape


@lru_cache(maxsize=None)
def _dft_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    # angle 2*pi*k*n/N with k*n reduced mod N to keep the argument small
    kn = np.outer(np.arange(n), np.arange(n)) % n
    theta = 2.0 * np.pi * kn / n
    cos, sin = np.cos(theta), np.sin(theta)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


def dft1d(signal: np.ndarray) -> Spectrum:
    """Direct O(N^2) DFT of a real signal along its last axis."""
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ValueError("empty signal")
    cos, sin = _dft_basis(x.shape[-1])
    # basis matrices are symmetric, so x @ M sums over n for each k
    return Spectrum(x @ cos, -(x @ sin))


def dft1d_adjoint(grad_re: np.ndarray, grad_im: np.ndarray) -> np.ndarray:
    """Pull a gradient on (re, im) of :func:`dft1d` back to the real signal.

    This is the real part of ``W^H (grad_re + 1j*grad_im)`` where ``W`` is the
    DFT matrix: ``g[n] = sum_k grad_re[k] cos(2pi kn/N) - grad_im[k] sin(2pi kn/N)``.
    """
    gr = np.asarray(grad_re, dtype=np.float64)
    gi = np.asarray(grad_im, dtype=np.float64)
    if gr.shape != gi.shape:
        raise ValueError(f"grad_re {gr.shape} and grad_im {gi.shape} differ")
    cos, sin = _dft_basis(gr.shape[-1])
    return gr @ cos - gi @ sin


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last(z: np.ndarray) -> np.ndarray:
    """Forward transform along the last axis: iterative radix-2 when N is a
    power of two, direct DFT otherwise."""
    n = z.shape[-1]
    if not _is_pow2(n):
        cos, sin = _dft_basis(n)
        return z @ (cos - 1j * sin)
    lead = z.shape[:-1]
    z = z[..., _bitrev(n)]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = z.reshape(*lead, n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        z = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    return z


def _fft2_complex(z: np.ndarray) -> np.ndarray:
    z = _fft_last(z)
    return np.swapaxes(_fft_last(np.swapaxes(z, -1, -2)), -1, -2)


def fft2d(plane: np.ndarray) -> Spectrum:
    """2D DFT over the last two axes (rows, then columns)."""
    z = np.asarray(plane, dtype=np.float64).astype(np.complex128)
    return Spectrum.from_complex(_fft2_complex(z))


def ifft2d(spectrum: Spectrum) -> tuple[np.ndarray, float]:
    """Inverse 2D DFT.

    Returns the real part and the largest absolute imaginary residue, which
    is round-off sized when the spectrum came from a real plane.
    """
    z = spectrum.to_complex()
    h, w = z.shape[-2:]
    out = np.conj(_fft2_complex(np.conj(z))) / (h * w)
    residue = float(np.abs(out.imag).max()) if out.size else 0.0
    return np.ascontiguousarray(out.real), residue


def fftshift2d(spectrum: Spectrum) -> Spectrum:
    """Move the zero-frequency coefficient to index (N//2, M//2)."""
    h, w = spectrum.shape[-2:]
    shift = (h // 2, w // 2)
    return Spectrum(
        np.roll(spectrum.re, shift, axis=(-2, -1)),
        np.roll(spectrum.im, shift, axis=(-2, -1)),
    )


def ifftshift2d(spectrum: Spectrum) -> Spectrum:
    h, w = spectrum.shape[-2:]
    shift = (-(h // 2), -(w // 2))
    return Spectrum(
        np.roll(spectrum.re, shift, axis=(-2, -1)),
        np.roll(spectrum.im, shift, axis=(-2, -1)),
    )


def _patch_1d(n: int, b: int) -> np.ndarray:
    c = n // 2
    keep = np.zeros(n, dtype=bool)
    if b % 2 == 0:
        keep[c - b // 2 : c + b // 2] = True
    else:
        keep[c - (b - 1) // 2 : c + (b - 1) // 2 + 1] = True
    return keep


def lowpass_mask(n: int, bandwidth: int) -> np.ndarray:
    """Boolean [n, n] mask over a *centered* spectrum.

    Starts from the centered ``bandwidth x bandwidth`` patch and keeps only the
    frequencies whose conjugate partner is also inside it. For even bandwidths
    below ``n`` this drops the single unpaired edge row and column; without
    that the filtered output of a real image would not be band-limited to the
    patch and the filter would not be a projection.
    """
    if not 1 <= bandwidth <= n:
        raise ValueError(f"bandwidth must be in [1, {n}], got {bandwidth}")
    patch = _patch_1d(n, bandwidth)
    freq = np.arange(n) - n // 2  # centered index -> signed frequency
    partner = (-freq) % n
    partner_idx = (partner + n // 2) % n  # back to centered index
    keep = patch & patch[partner_idx]
    return np.outer(keep, keep)


def lpf(image: np.ndarray, bandwidth: int, clamp: bool = True) -> np.ndarray:
    """Low-pass filter each square plane of ``image`` (shape [..., N, N]).

    fft2d -> fftshift -> zero everything outside the centered band ->
    ifftshift -> ifft2d -> real part, then clamp to [0, 1] unless disabled.
    """
    x = np.asarray(image, dtype=np.float64)
    n = x.shape[-1]
    if x.shape[-2] != n:
        raise ValueError(f"lpf needs square planes, got {x.shape[-2:]}")
    if bandwidth > n:
        raise ValueError(f"bandwidth {bandwidth} exceeds image side {n}")
    mask = lowpass_mask(n, bandwidth)
    spec = fftshift2d(fft2d(x))
    spec = Spectrum(spec.re * mask, spec.im * mask)
    out, _ = ifft2d(ifftshift2d(spec))
    return np.clip(out, 0.0, 1.0) if clamp else out
