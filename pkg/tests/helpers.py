"""Independent oracles shared by the test modules.

Everything here is written the slow, obvious way on purpose: loops instead
of im2col, math.cos instead of FFT butterflies, central differences instead
of backprop.
"""

import math

import numpy as np

from freqat import layers
from freqat import model as M
from freqat.spectral import dft1d

H = 1e-5  # finite-difference step
KINK = 1e-3  # distance from a nondifferentiable point we refuse to probe


def conv_loop(x, kernels, bias, pad=1):
    """Direct sliding-window cross-correlation, one output element at a time."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernels.shape
    xp = np.zeros((c_in, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = bias[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += kernels[o, c, u, v] * xp[c, i + u, j + v]
                out[o, i, j] = acc
    return out


def maxpool_loop(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[k, i, j] = max(x[k, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
    return out


def naive_dft1d(x):
    n = len(x)
    re, im = np.zeros(n), np.zeros(n)
    for k in range(n):
        for t in range(n):
            ang = 2.0 * math.pi * k * t / n
            re[k] += x[t] * math.cos(ang)
            im[k] -= x[t] * math.sin(ang)
    return re, im


def naive_dft2d(plane):
    """Double loop over output frequencies; each coefficient is a full sum."""
    h, w = plane.shape
    r = np.arange(h)[:, None]
    c = np.arange(w)[None, :]
    out = np.zeros((h, w), dtype=np.complex128)
    for k in range(h):
        for l in range(w):
            out[k, l] = np.sum(plane * np.exp(-2j * np.pi * (k * r / h + l * c / w)))
    return out


def naive_lpf(plane, b):
    """Explicit centered mask (patch intersected with its conjugate mirror)
    applied to the naive DFT, inverted with the naive DFT of the conjugate."""
    n = plane.shape[0]
    spectrum = np.roll(naive_dft2d(plane), (n // 2, n // 2), axis=(0, 1))
    lo = n // 2 - b // 2 if b % 2 == 0 else n // 2 - (b - 1) // 2
    in_patch = lambda i: lo <= i < lo + b  # noqa: E731
    mask = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            fi, fj = i - n // 2, j - n // 2
            mi, mj = (-fi) % n, (-fj) % n
            mi, mj = (mi + n // 2) % n, (mj + n // 2) % n
            if in_patch(i) and in_patch(j) and in_patch(mi) and in_patch(mj):
                mask[i, j] = 1.0
    spectrum = np.roll(spectrum * mask, (-(n // 2), -(n // 2)), axis=(0, 1))
    return np.conj(naive_dft2d(np.conj(spectrum))).real / (n * n)


def central_diff(f, x, h=H):
    """Numerical gradient of scalar ``f`` w.r.t. every entry of array ``x``
    (perturbed in place and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric):
    """Max-norm relative error between two gradient arrays."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def tiny_params(seed, classes=10):
    """8x8 input, 2 -> 2 -> 2 channels, random biases."""
    p = M.init(seed, in_ch=2, conv1=2, conv2=2, hidden=6, classes=classes, side=8)
    g = np.random.default_rng(1000 + seed)
    for t in p.tensors()[1::2]:
        t[:] = g.normal(0.0, 0.1, t.shape)
    return p


def _pool_gap(r):
    """Smallest gap between the top and runner-up of each 2x2 window whose
    max is positive (windows of all zeros are locally constant)."""
    w = np.stack([r[..., 0::2, 0::2], r[..., 0::2, 1::2], r[..., 1::2, 0::2], r[..., 1::2, 1::2]])
    s = np.sort(w, axis=0)
    gap = s[-1] - s[-2]
    live = s[-1] > 0
    return gap[live].min(initial=np.inf)


def kink_margin(params, x):
    """Distance of the forward pass at ``x`` from the nearest ReLU or
    max-pool kink."""
    _, c = M.forward(params, x)
    return min(
        np.abs(c.a1).min(),
        np.abs(c.a2).min(),
        np.abs(c.z3).min(),
        _pool_gap(layers.relu(c.a1)),
        _pool_gap(layers.relu(c.a2)),
    )


def smooth_tiny_case(seed, batch=None):
    """Tiny params and an input batch at least KINK away from every kink,
    resampling the input until that holds."""
    params = tiny_params(seed)
    g = np.random.default_rng(seed)
    shape = (2, 8, 8) if batch is None else (batch, 2, 8, 8)
    for _ in range(200):
        x = g.uniform(0.0, 1.0, shape)
        if kink_margin(params, x) > KINK:
            return params, x
    raise RuntimeError("no smooth sample found")


def fr_margin(a, b):
    """Distance of the L1-of-DFT term from its sign kinks. The imaginary
    parts of bins 0 and N/2 vanish identically for real input; they
    contribute sign(0) = 0 and there is no kink to cross."""
    d = dft1d(np.asarray(a) - np.asarray(b))
    n = d.re.shape[-1]
    im = np.delete(d.im, [0, n // 2] if n % 2 == 0 else [0], axis=-1)
    return min(np.abs(d.re).min(), np.abs(im).min(initial=np.inf))


def fr_smooth_pair(seed):
    g = np.random.default_rng(seed)
    while True:
        a, b = g.normal(size=10), g.normal(size=10)
        if fr_margin(a, b) > KINK:
            return a, b


def fixed_adv_case(seed, batch=2):
    """Tiny params, a natural batch and a fixed adversarial batch, all clear
    of ReLU/max-pool kinks and of the frequency term's sign kinks."""
    p = tiny_params(seed)
    g = np.random.default_rng(100 + seed)
    xs, advs = [], []
    while len(advs) < batch:
        x = g.uniform(size=(2, 8, 8))
        if kink_margin(p, x) <= KINK:
            continue
        for _ in range(50):
            xa = np.clip(x + g.uniform(-0.03, 0.03, x.shape), 0, 1)
            if kink_margin(p, xa) <= KINK:
                continue
            if fr_margin(M.forward(p, x)[0], M.forward(p, xa)[0]) > KINK:
                xs.append(x)
                advs.append(xa)
                break
    return p, np.stack(xs), np.stack(advs)


def read_pgm(data: bytes):
    """Minimal P5 reader: returns (comments, uint8 grid)."""
    assert data[:2] == b"P5"
    pos, tokens, comments = 2, [], []
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1 : end].decode().strip())
            pos = end + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    assert maxval == 255
    grid = np.frombuffer(data[pos:], dtype=np.uint8)
    assert grid.size == w * h
    return comments, grid.reshape(h, w)


# acceptance suite results, filled by ``judge`` and printed by conftest.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
