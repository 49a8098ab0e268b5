"""Iterative gradient attack on SNNs with spike-compatible gradients.

Each iteration takes the BPTT input gradient, turns it into a ternary
``{-1, 0, 1}`` update that keeps spike inputs binary (gradient-to-spike
conversion), or, when the gradient is exactly zero everywhere, flips a
random ``gamma`` fraction of input spikes instead. For image inputs the
ternary update is averaged over time and added to the pixel intensities.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import bernoulli_encode
from .errors import ConfigurationError, UsageError
from .numerics import Rng, bernoulli_mask
from .snn.core import NetworkModel, forward, predict, spike_count_per_layer
from .snn.grad import LossKind, backward, loss

# sub-stream tags for the per-iteration generators
ENCODE, G2S, RSF = 1, 2, 3

SUCCESS = "success"
FAILED_BUDGET = "failed_budget"
FAILED_MAX_ITER = "failed_max_iter"


class InputKind(str, enum.Enum):
    SPIKE = "spike"
    IMAGE = "image"


@dataclass
class AttackConfig:
    mode: str = "untargeted"
    target: Optional[int] = None
    max_iter: int = 25
    p: float = 2
    epsilon: float = math.inf
    eta: float = 1.0  # recorded only; no update rule consumes it
    gamma: float = 0.05
    cw_c: float = 0.0
    threshold_override: Optional[tuple] = None
    input_kind: str = "spike"
    seed: int = 0
    loss_kind: Optional[str] = None  # defaults to the model's training loss

    def validate(self) -> "AttackConfig":
        if self.mode not in ("untargeted", "targeted"):
            raise ConfigurationError(f"unknown attack mode {self.mode!r}")
        if self.mode == "targeted" and self.target is None:
            raise ConfigurationError("targeted attack needs a target class")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.cw_c < 0:
            raise ConfigurationError("cw_c must be non-negative")
        InputKind(self.input_kind)
        if self.loss_kind is not None:
            LossKind(self.loss_kind)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon"] = None if math.isinf(self.epsilon) else self.epsilon
        if self.threshold_override is not None:
            d["threshold_override"] = [int(self.threshold_override[0]), float(self.threshold_override[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if d.get("epsilon") is None:
            d["epsilon"] = math.inf
        if d.get("threshold_override") is not None:
            d["threshold_override"] = tuple(d["threshold_override"])
        return cls(**d)


@dataclass
class IterationRecord:
    loss: float
    predicted: int
    penultimate_spikes: int
    vanished: bool


@dataclass
class AttackOutcome:
    status: str
    iterations_used: int
    perturbation: float
    flip_iterations: int
    adversarial_example: np.ndarray
    true_label: int
    config: AttackConfig
    trace: list = field(default_factory=list)
    # image mode: (seed, stream) of the encoding used by the final success check
    encoding: Optional[tuple] = None

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    @property
    def first_vanished(self) -> bool:
        return bool(self.trace) and self.trace[0].vanished


def g2s_convert(grad, current_input, rng: Rng) -> np.ndarray:
    """Continuous input gradient -> ternary update that keeps ``current_input`` binary."""
    g = np.asarray(grad, dtype=np.float64)
    x = np.asarray(current_input)
    if g.shape != x.shape:
        raise ConfigurationError(f"gradient shape {g.shape} != input shape {x.shape}")
    mag = np.abs(g)
    top = mag.max(initial=0.0)
    if top == 0.0:
        raise UsageError("all-zero gradient must be handled by rsf_flip")
    mask = bernoulli_mask(mag / top, rng)
    s = np.sign(g * mask)
    # a +1 on an existing spike or -1 on silence would leave {0, 1}
    s[(s > 0) & (x == 1)] = 0.0
    s[(s < 0) & (x == 0)] = 0.0
    return s


def rsf_flip(current_input, gamma: float, rng: Rng) -> np.ndarray:
    """Ternary update flipping each element independently with probability ``gamma``."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError("gamma must lie in [0, 1]")
    x = np.asarray(current_input, dtype=np.float64)
    mask = bernoulli_mask(np.full(x.shape, float(gamma)), rng)
    return mask * (1.0 - 2.0 * x)


def temporal_aggregate(g, T: int) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != T:
        raise ConfigurationError(f"gradient has {g.shape[0]} timesteps, expected {T}")
    return g.mean(axis=0)


def cw_regularize(delta_img, current, original, c: float) -> np.ndarray:
    """Subtract ``c`` times the gradient of ``||current - original||_2^2``."""
    delta = np.asarray(delta_img, dtype=np.float64)
    if c == 0:
        return delta
    return delta - c * 2.0 * (np.asarray(current, dtype=np.float64) - np.asarray(original, dtype=np.float64))


def perturbation_metric(x_adv, x_orig, p: float = 2) -> float:
    """``(1/N) * ||x_adv - x_orig||_p`` with ``N`` the element count."""
    a = np.asarray(x_adv, dtype=np.float64)
    b = np.asarray(x_orig, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm((a - b).ravel(), ord=p)) / a.size


def goal_reached(pred: int, true_label: int, config: AttackConfig) -> bool:
    if config.mode == "targeted":
        return pred == config.target
    return pred != true_label


def _check_binary(x):
    if not np.all((x == 0) | (x == 1)):
        raise AssertionError("spike input left {0, 1} after update")


def run_attack(model: NetworkModel, x, true_label: int, config: AttackConfig, rng: Optional[Rng] = None,
               on_iteration: Optional[Callable] = None) -> AttackOutcome:
    """Iterate gradient steps on ``x`` until the goal is met or a budget runs out.

    ``x`` is a ``(T, C, H, W)`` spike train or a ``(C, H, W)`` image in [0, 1],
    per ``config.input_kind``. ``on_iteration(k, grad, ternary, state)`` is
    called after each update, mostly for tests and instrumentation.
    """
    config.validate()
    rng = rng or Rng(config.seed)
    image = InputKind(config.input_kind) is InputKind.IMAGE
    kind = LossKind(config.loss_kind or model.meta.get("loss", "mse"))
    label = config.target if config.mode == "targeted" else true_label
    sign = -1.0 if config.mode == "targeted" else 1.0
    penult = model.penultimate_index if len(model.spiking_indices) > 1 else None
    if config.cw_c and not image:
        warnings.warn("cw_c only applies to image inputs; ignored for spike inputs", stacklevel=2)

    x0 = np.array(x, dtype=np.float64)
    cur = x0.copy()
    if not image:
        _check_binary(cur)
    trace = []
    flips = 0
    status = FAILED_MAX_ITER
    pert = 0.0
    encoding = None
    k = 0
    for k in range(1, config.max_iter + 1):
        enc_rng = rng.derive(k, ENCODE)
        xs = bernoulli_encode(cur, model.T, enc_rng) if image else cur
        rate, state = forward(model, xs, record=True, threshold_override=config.threshold_override)
        value, dy = loss(rate, label, kind)
        grad = sign * backward(model, state, dy)
        vanished = not np.any(grad)
        if vanished:
            tern = rsf_flip(xs, config.gamma, rng.derive(k, RSF))
            flips += 1
        else:
            tern = g2s_convert(grad, xs, rng.derive(k, G2S))

        if image:
            step = cw_regularize(temporal_aggregate(tern, model.T), cur, x0, config.cw_c)
            cur = np.clip(cur + step, 0.0, 1.0)
            # success is judged on the updated image under this iteration's encoding stream
            check = bernoulli_encode(cur, model.T, rng.derive(k, ENCODE))
        else:
            cur = xs + tern
            _check_binary(cur)
            check = cur
        pert = perturbation_metric(cur, x0, config.p)
        pred = predict(forward(model, check)[0])
        spikes = spike_count_per_layer(state)
        trace.append(IterationRecord(value, int(pred), spikes[-2] if penult is not None else 0, vanished))
        if on_iteration is not None:
            on_iteration(k, grad, tern, state)
        if pert >= config.epsilon:
            status = FAILED_BUDGET
            break
        if goal_reached(pred, true_label, config):
            status = SUCCESS
            if image:
                encoding = (enc_rng.seed, enc_rng.stream)
            break
    return AttackOutcome(status, k, pert, flips, cur, int(true_label), config, trace, encoding)


def verify_outcome(model: NetworkModel, outcome: AttackOutcome) -> bool:
    """Re-run the success check for ``outcome`` on the unmodified model."""
    x = outcome.adversarial_example
    if InputKind(outcome.config.input_kind) is InputKind.IMAGE:
        if outcome.encoding is None:
            return False
        x = bernoulli_encode(x, model.T, Rng(*outcome.encoding))
    else:
        if not np.all((x == 0) | (x == 1)):
            return False
    return goal_reached(predict(forward(model, x)[0]), outcome.true_label, outcome.config)
