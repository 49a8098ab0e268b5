"""Dense float64 kernels and the deterministic random source.

Every kernel accepts either a single sample or a leading batch axis, so
callers can fold time into the batch and push a whole spike train through
one convolution call.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DomainError

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    # splitmix64 finaliser
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based generator keyed by ``(seed, stream)``.

    Backed by Philox-4x64, whose output depends only on the 128-bit key and
    the counter, so a given ``(seed, stream)`` pair reproduces the same
    sequence on every platform.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def derive(self, *parts: int) -> "Rng":
        """Child generator on a stream derived from this one and ``parts``."""
        s = self.stream
        for p in parts:
            s = _mix64(s ^ _mix64(int(p) & _MASK64))
        return Rng(self.seed, s)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def uniform(self, low, high, size):
        return self._gen.uniform(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def bernoulli_mask(probabilities, rng: Rng) -> np.ndarray:
    """Independent 0/1 draws, each 1 with the matching probability."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size and (np.isnan(p).any() or p.min() < 0.0 or p.max() > 1.0):
        raise DomainError("probabilities must lie in [0, 1]")
    # random() is in [0, 1): p=0 never fires, p=1 always fires
    return (rng.random(p.shape) < p).astype(np.float64)


def _as_batch(x: np.ndarray, ndim: int):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ConfigurationError(f"expected {ndim}-d or batched {ndim + 1}-d input, got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"kernel {k} with stride {stride} and padding {padding} does not tile input of size {size}"
        )
    return span // stride + 1


def conv2d_forward(x, weights, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of ``x[(N,)C,H,W]`` with ``weights[K,C,kh,kw]``."""
    xb, single = _as_batch(x, 3)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4 or w.shape[1] != xb.shape[1]:
        raise ConfigurationError(f"weight shape {w.shape} does not match input channels {xb.shape[1]}")
    k, _, kh, kw = w.shape
    conv_output_size(xb.shape[2], kh, stride, padding)
    conv_output_size(xb.shape[3], kw, stride, padding)
    if bias is not None and np.shape(bias) != (k,):
        raise ConfigurationError(f"bias shape {np.shape(bias)} != ({k},)")
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(grad_out, x, weights, stride: int = 1, padding: int = 0):
    """Adjoints of :func:`conv2d_forward`: ``(grad_input, grad_weights, grad_bias)``."""
    xb, single = _as_batch(x, 3)
    gb, _ = _as_batch(grad_out, 3)
    w = np.asarray(weights, dtype=np.float64)
    k, c, kh, kw = w.shape
    ho = conv_output_size(xb.shape[2], kh, stride, padding)
    wo = conv_output_size(xb.shape[3], kw, stride, padding)
    if gb.shape != (xb.shape[0], k, ho, wo):
        raise ConfigurationError(f"grad_out shape {gb.shape} inconsistent with forward output")
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    grad_w = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = gb.sum(axis=(0, 2, 3))
    gpad = np.zeros_like(xp)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            # (N,K,ho,wo) x (K,C) -> (N,ho,wo,C)
            contrib = np.tensordot(gb, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            gpad[:, :, i:i + hs:stride, j:j + ws:stride] += contrib
    grad_in = gpad[:, :, padding:padding + xb.shape[2], padding:padding + xb.shape[3]] if padding else gpad
    grad_in = np.ascontiguousarray(grad_in)
    return (grad_in[0] if single else grad_in), grad_w, grad_b


def avgpool2d_forward(x, k: int) -> np.ndarray:
    """Non-overlapping ``k x k`` mean over the last two axes."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % k or w % k:
        raise ConfigurationError(f"spatial dims {(h, w)} not divisible by pool size {k}")
    shp = x.shape[:-2] + (h // k, k, w // k, k)
    return x.reshape(shp).mean(axis=(-3, -1))


def avgpool2d_backward(grad_out, k: int) -> np.ndarray:
    g = np.asarray(grad_out, dtype=np.float64) / (k * k)
    return np.repeat(np.repeat(g, k, axis=-2), k, axis=-1)


def fc_forward(x, weights, bias=None) -> np.ndarray:
    """Affine map ``weights @ x + bias`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ConfigurationError(f"fc weights {w.shape} do not accept input of width {x.shape[-1]}")
    out = x @ w.T
    if bias is not None:
        if np.shape(bias) != (w.shape[0],):
            raise ConfigurationError(f"bias shape {np.shape(bias)} != ({w.shape[0]},)")
        out = out + bias
    return out


def fc_backward(grad_out, x, weights):
    """Adjoints of :func:`fc_forward`: ``(grad_input, grad_weights, grad_bias)``."""
    g = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if g.shape[-1] != w.shape[0] or g.shape[:-1] != x.shape[:-1]:
        raise ConfigurationError(f"grad_out shape {g.shape} inconsistent with input {x.shape}")
    g2 = g.reshape(-1, w.shape[0])
    x2 = x.reshape(-1, w.shape[1])
    return g @ w, g2.T @ x2, g2.sum(axis=0)
