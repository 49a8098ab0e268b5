"""Surrogate-gradient BPTT, losses, soft relaxation and the training step."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..errors import ConfigurationError, DomainError, UsageError
from .core import CONV, LifState, NetworkModel, run_network


class LossKind(str, enum.Enum):
    MSE = "mse"
    CE = "ce"


def surrogate_deriv(u, u_th: float, a: float) -> np.ndarray:
    """Rectangular window: ``1/a`` where ``|u - u_th| <= a/2``, else 0."""
    if not a > 0:
        raise DomainError(f"surrogate width must be positive, got {a}")
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u - u_th) <= a / 2.0, 1.0 / a, 0.0)


def _targets(label, k: int, batch_shape) -> np.ndarray:
    lab = np.asarray(label)
    if lab.dtype.kind in "iu" or (lab.dtype.kind == "f" and lab.shape == batch_shape):
        lab = lab.astype(np.int64)
        if np.any(lab < 0) or np.any(lab >= k):
            raise DomainError(f"label {label} out of range for {k} classes")
        return np.eye(k)[lab]
    lab = lab.astype(np.float64)
    if lab.shape != batch_shape + (k,):
        raise DomainError(f"target distribution shape {lab.shape} does not match rates")
    return lab


def loss(rate, label, kind: LossKind = LossKind.MSE):
    """Loss of a rate vector (or batch of them) and its gradient w.r.t. the rates.

    ``label`` is a class index, an array of indices for a batch, or a target
    distribution. Batches use the mean loss.
    """
    y = np.asarray(rate, dtype=np.float64)
    k = y.shape[-1]
    target = _targets(label, k, y.shape[:-1])
    n = 1 if y.ndim == 1 else y.shape[0]
    kind = LossKind(kind)
    if kind is LossKind.MSE:
        diff = y - target
        value = float(np.sum(diff * diff)) / (k * n)
        grad = 2.0 * diff / (k * n)
    else:
        z = y - y.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logp = z - logsum
        value = float(-np.sum(target * logp)) / n
        grad = (np.exp(logp) * target.sum(axis=-1, keepdims=True) - target) / n
    return value, grad


def soft_forward(model: NetworkModel, x, threshold_override=None, record: bool = False):
    """Forward pass with firing replaced by ``clamp((u-u_th)/a + 1/2, 0, 1)``.

    The reset gate stays the hard step, so the analytic gradient of this
    relaxation is exactly what :func:`backward` computes. Only meant for
    finite-difference verification.
    """
    rate, state = run_network(model, x, record=record, threshold_override=threshold_override, soft=True)
    return (rate, state) if record else rate


def backward(model: NetworkModel, state: LifState, dL_drate, *, weights: bool = False,
             input_grad: bool = True):
    """BPTT from ``dL/d(rate)`` back to the input spikes.

    Returns the input gradient (same shape as the forward input), or
    ``(input_gradient, weight_grads)`` when ``weights`` is set, where
    ``weight_grads`` aligns with :meth:`NetworkModel.params`.
    """
    if state is None or not state.inputs:
        raise UsageError("backward needs the state recorded by forward(record=True)")
    g_rate = np.asarray(dL_drate, dtype=np.float64)
    if not state.batched:
        g_rate = g_rate[None]
    b, T = state.out[-1].shape[:2]
    a = model.surrogate_width
    decay = model.decay
    # output spikes are averaged over time: dy/do[t] = 1/T
    g = np.broadcast_to(g_rate[:, None, :] / T, (b, T, g_rate.shape[-1]))
    grads = []
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        need_in = input_grad or idx > 0
        if not layer.spiking:
            g = nx.avgpool2d_backward(g, layer.pool) if need_in else None
            continue
        surr = surrogate_deriv(state.u[idx], state.thresholds[idx], a)
        leak = decay * (1.0 - state.spikes[idx])
        du = np.empty_like(surr)
        du[:, T - 1] = g[:, T - 1] * surr[:, T - 1]
        for t in range(T - 2, -1, -1):
            du[:, t] = g[:, t] * surr[:, t] + du[:, t + 1] * leak[:, t]
        x_in = state.inputs[idx]
        m = b * T
        dflat = du.reshape((m,) + layer.out_shape)
        if layer.kind == CONV:
            xin = x_in.reshape((m,) + layer.in_shape)
            gi, gw, gb = nx.conv2d_backward(dflat, xin, layer.weight, layer.stride, layer.padding)
        else:
            xin = x_in.reshape(m, -1)
            gi, gw, gb = nx.fc_backward(dflat, xin, layer.weight)
        if weights:
            if layer.bias is not None:
                grads.append(gb)
            grads.append(gw)
        g = gi.reshape((b, T) + layer.in_shape) if need_in else None
    if g is not None and not state.batched:
        g = g[0]
    if weights:
        return g, grads[::-1]
    return g


@dataclass
class SGD:
    """Momentum SGD over :meth:`NetworkModel.params`."""

    lr: float = 0.1
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v


def train_step(model: NetworkModel, xs, ys, kind: LossKind, optimizer: SGD) -> float:
    """One BPTT update on a batch ``xs[B,T,C,H,W]``; mutates ``model`` in place."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.ndim != len(model.input_shape) + 2 or xs.shape[0] != ys.shape[0]:
        raise ConfigurationError("batch inputs and labels disagree in shape")
    rate, state = run_network(model, xs, record=True)
    value, g = loss(rate, ys, kind)
    _, grads = backward(model, state, g, weights=True, input_grad=False)
    optimizer.step(model.params(), grads)
    return value


def accuracy(model: NetworkModel, xs, ys, batch_size: int = 64) -> float:
    xs = np.asarray(xs)
    if len(xs) == 0:
        return 0.0
    hits = 0
    for i in range(0, len(xs), batch_size):
        rate, _ = run_network(model, xs[i:i + batch_size])
        hits += int(np.sum(np.argmax(rate, axis=-1) == np.asarray(ys[i:i + batch_size])))
    return hits / len(xs)


__all__ = ["LossKind", "surrogate_deriv", "loss", "soft_forward", "backward", "SGD", "train_step",
           "accuracy"]
