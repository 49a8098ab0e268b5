"""Iterative LIF network: model description, forward pass and rate decoding.

Layers are evaluated one at a time over the whole time window. The input
current of a layer at every timestep depends only on the previous layer's
outputs, so all ``T`` convolutions run as one batched call and only the
membrane recurrence loops over time.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import numerics as nx
from ..errors import ConfigurationError

CONV, POOL, FC = "conv", "avgpool", "fc"


@dataclass
class Layer:
    kind: str
    in_shape: tuple
    out_shape: tuple
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    pool: int = 2
    u_th: float = 0.3

    @property
    def spiking(self) -> bool:
        return self.kind != POOL

    def currents(self, x: np.ndarray) -> np.ndarray:
        """Map layer inputs ``(M, *in_shape)`` to ``(M, *out_shape)``."""
        if self.kind == CONV:
            return nx.conv2d_forward(x, self.weight, self.bias, self.stride, self.padding)
        if self.kind == POOL:
            return nx.avgpool2d_forward(x, self.pool)
        return nx.fc_forward(x.reshape(x.shape[0], -1), self.weight, self.bias)

    def describe(self) -> dict:
        d = {"kind": self.kind, "in_shape": list(self.in_shape), "out_shape": list(self.out_shape)}
        if self.kind == CONV:
            d.update(channels=self.out_shape[0], kernel=self.weight.shape[-1], stride=self.stride,
                     padding=self.padding, u_th=self.u_th, bias=self.bias is not None)
        elif self.kind == FC:
            d.update(units=self.out_shape[0], u_th=self.u_th, bias=self.bias is not None)
        else:
            d.update(pool=self.pool)
        return d


@dataclass
class NetworkModel:
    layers: list
    input_shape: tuple
    decay: float = 0.25
    surrogate_width: float = 1.0
    T: int = 15
    num_classes: int = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.validate()

    def validate(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError(f"decay must lie in (0, 1), got {self.decay}")
        if self.surrogate_width <= 0:
            raise ConfigurationError("surrogate width must be positive")
        if self.T < 1:
            raise ConfigurationError("time window must be at least one step")
        if not self.layers:
            raise ConfigurationError("network has no layers")
        last = self.layers[-1]
        if last.kind != FC or last.out_shape != (self.num_classes,):
            raise ConfigurationError("last layer must be a spiking FC layer of width num_classes")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if tuple(layer.in_shape) != shape:
                raise ConfigurationError(f"layer {i} expects {layer.in_shape}, receives {shape}")
            if layer.spiking and not layer.u_th > 0:
                raise ConfigurationError(f"layer {i} threshold must be positive")
            shape = tuple(layer.out_shape)

    @property
    def spiking_indices(self) -> list:
        return [i for i, layer in enumerate(self.layers) if layer.spiking]

    @property
    def penultimate_index(self) -> int:
        """Index (into ``layers``) of the spiking layer feeding the output layer."""
        idx = self.spiking_indices
        if len(idx) < 2:
            raise ConfigurationError("network has no penultimate spiking layer")
        return idx[-2]

    def thresholds(self, override=None) -> list:
        th = [layer.u_th for layer in self.layers]
        if override is not None:
            i, value = override
            i = int(i)
            if not 0 <= i < len(self.layers) or not self.layers[i].spiking:
                raise ConfigurationError(f"threshold override targets non-spiking layer {i}")
            if not value > 0:
                raise ConfigurationError("override threshold must be positive")
            th[i] = float(value)
        return th

    def params(self) -> list:
        """Flat list of trainable arrays, in layer order (weight then bias)."""
        out = []
        for layer in self.layers:
            if layer.weight is not None:
                out.append(layer.weight)
                if layer.bias is not None:
                    out.append(layer.bias)
        return out

    def copy(self) -> "NetworkModel":
        return copy.deepcopy(self)


@dataclass
class LifState:
    """Per-layer record of one forward pass, batched as ``(B, T, ...)``.

    ``spikes`` holds the hard fire/no-fire gate that drives the reset; ``out``
    is what the layer emits downstream. They are the same arrays except in
    the soft relaxation, where ``out`` is the ramp.
    """

    inputs: list
    u: list
    spikes: list
    out: list
    thresholds: list
    soft: bool = False
    batched: bool = False


def lif_step(u_prev, o_prev, current, decay: float, u_th: float):
    """One iterative LIF update with reset-to-zero; returns ``(u_next, o_next)``."""
    u_prev = np.asarray(u_prev, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if np.shape(u_prev) != np.shape(current) or np.shape(o_prev) != np.shape(current):
        raise ConfigurationError("lif_step operands must share a shape")
    u_next = decay * u_prev * (1.0 - np.asarray(o_prev, dtype=np.float64)) + current
    return u_next, (u_next >= u_th).astype(np.float64)


def _ramp(u, u_th, a):
    return np.clip((u - u_th) / a + 0.5, 0.0, 1.0)


def run_network(model: NetworkModel, x, *, record: bool = False, threshold_override=None,
                soft: bool = False):
    x = np.asarray(x, dtype=np.float64)
    expected = (model.T,) + model.input_shape
    if x.shape == expected:
        batched = False
        x = x[None]
    elif x.shape[1:] == expected:
        batched = True
    else:
        raise ConfigurationError(f"input shape {x.shape} does not match model {expected}")
    thresholds = model.thresholds(threshold_override)
    b, T = x.shape[:2]
    inputs, us, spikes, outs = [], [], [], []
    h = x
    for layer, th in zip(model.layers, thresholds):
        cur = layer.currents(h.reshape((b * T,) + layer.in_shape)).reshape((b, T) + layer.out_shape)
        if record:
            inputs.append(h)
        if not layer.spiking:
            h = cur
            if record:
                us.append(None)
                spikes.append(None)
                outs.append(h)
            continue
        u_all = np.empty_like(cur) if record else None
        s_all = np.empty_like(cur)
        o_all = np.empty_like(cur) if soft else s_all
        u = np.zeros_like(cur[:, 0])
        gate = np.zeros_like(u)
        for t in range(T):
            u = model.decay * u * (1.0 - gate) + cur[:, t]
            gate = (u >= th).astype(np.float64)
            s_all[:, t] = gate
            if soft:
                o_all[:, t] = _ramp(u, th, model.surrogate_width)
            if record:
                u_all[:, t] = u
        if record:
            us.append(u_all)
            spikes.append(s_all)
            outs.append(o_all)
        h = o_all
    rate = h.mean(axis=1)
    state = None
    if record:
        state = LifState(inputs, us, spikes, outs, thresholds, soft=soft, batched=batched)
    if not batched:
        rate = rate[0]
    return rate, state


def forward(model: NetworkModel, x, record: bool = False, threshold_override=None):
    """Run the spike train ``x`` (``(T,C,H,W)`` or batched) through ``model``.

    Returns ``(rate, state)``; ``state`` is None unless ``record`` is set.
    ``threshold_override`` is ``(layer_index, u_th)`` and only affects this call.
    """
    return run_network(model, x, record=record, threshold_override=threshold_override)


def predict(rate) -> np.ndarray | int:
    """Winning class; ties go to the lowest index."""
    r = np.asarray(rate)
    if r.ndim == 1:
        return int(np.argmax(r))
    return np.argmax(r, axis=-1)


def spike_count_per_layer(state: LifState) -> list:
    return [int(s.sum()) for s in state.spikes if s is not None]


_TOKEN = re.compile(r"^(?:(\d+)C(\d+)|AP(\d+)|(\d+)FC)$")


def build_network(spec: str, input_shape, *, T: int = 15, decay: float = 0.25, surrogate_width: float = 1.0,
                  u_th: float = 0.3, seed: int = 0, bias: bool = False) -> NetworkModel:
    """Instantiate a network from a string like ``Input-16C3-AP2-32C3-AP2-128FC-10FC``.

    Convolutions use stride 1 and size-preserving padding. Weights are drawn
    uniformly from ``+-sqrt(1/fan_in)``.
    """
    tokens = spec.strip().split("-")
    if tokens and tokens[0].lower() == "input":
        tokens = tokens[1:]
    if not tokens:
        raise ConfigurationError(f"empty network spec {spec!r}")
    rng = nx.Rng(seed, 0x5EED)
    shape = tuple(int(s) for s in input_shape)
    layers = []
    for tok in tokens:
        m = _TOKEN.match(tok)
        if not m:
            raise ConfigurationError(f"cannot parse layer token {tok!r} in {spec!r}")
        if m.group(1):
            if len(shape) != 3:
                raise ConfigurationError(f"convolution {tok} after a flattened layer")
            k_out, k = int(m.group(1)), int(m.group(2))
            pad = k // 2
            out_hw = [nx.conv_output_size(s, k, 1, pad) for s in shape[1:]]
            fan_in = shape[0] * k * k
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, (k_out, shape[0], k, k))
            layer = Layer(CONV, shape, (k_out, *out_hw), weight=w, padding=pad, u_th=u_th,
                          bias=np.zeros(k_out) if bias else None)
        elif m.group(3):
            if len(shape) != 3:
                raise ConfigurationError(f"pooling {tok} after a flattened layer")
            k = int(m.group(3))
            if shape[1] % k or shape[2] % k:
                raise ConfigurationError(f"pooling {tok} does not divide {shape}")
            layer = Layer(POOL, shape, (shape[0], shape[1] // k, shape[2] // k), pool=k)
        else:
            units = int(m.group(4))
            fan_in = int(np.prod(shape))
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, (units, fan_in))
            layer = Layer(FC, shape, (units,), weight=w, u_th=u_th, bias=np.zeros(units) if bias else None)
        layers.append(layer)
        shape = layer.out_shape
    return NetworkModel(layers, tuple(int(s) for s in input_shape), decay=decay, surrogate_width=surrogate_width,
                        T=T, num_classes=shape[0], meta={"spec": spec})
