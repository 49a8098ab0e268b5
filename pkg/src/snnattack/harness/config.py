"""Experiment configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..errors import ConfigurationError
from ..snn.grad import LossKind

MNIST_NET = "Input-16C3-AP2-32C3-AP2-128FC-10FC"


@dataclass
class DatasetSpec:
    kind: str = "mnist"  # mnist | nmnist | synthetic
    path: Optional[str] = "data/mnist"
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    bin_ms: float = 5.0
    # synthetic only
    num_classes: int = 2
    samples_per_class: int = 100
    shape: tuple = (1, 8, 8)

    @property
    def input_kind(self) -> str:
        return "image" if self.kind == "mnist" else "spike"


@dataclass
class TrainSpec:
    loss: str = "mse"
    decay: float = 0.25
    surrogate_width: float = 1.0
    T: int = 15
    u_th: float = 0.3
    epochs: int = 4
    lr: float = 0.5
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0


@dataclass
class AttackGrid:
    modes: list = field(default_factory=lambda: ["untargeted"])
    gammas: list = field(default_factory=lambda: [0.05])
    epsilons: list = field(default_factory=lambda: [None])  # None = unbounded
    overrides: list = field(default_factory=lambda: [None])  # penultimate u_th; None = no override
    cw_cs: list = field(default_factory=lambda: [0.0])
    samples_per_class: int = 10
    targeted_per_class: int = 2
    max_iter: int = 25
    p: float = 2
    eta: float = 1.0
    loss: Optional[str] = None
    seed: int = 0
    workers: int = 1
    save_outcomes: bool = False

    def cells(self) -> list:
        out = []
        for mode in self.modes:
            for gamma in self.gammas:
                for eps in self.epsilons:
                    for ov in self.overrides:
                        for c in self.cw_cs:
                            out.append((mode, float(gamma), None if eps is None else float(eps),
                                        None if ov is None else float(ov), float(c)))
        return out


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    network: str = MNIST_NET
    train: TrainSpec = field(default_factory=TrainSpec)
    attack: AttackGrid = field(default_factory=AttackGrid)

    def validate(self) -> "ExperimentConfig":
        t = self.train
        LossKind(t.loss)
        if not 0 < t.decay < 1:
            raise ConfigurationError("decay must lie in (0, 1)")
        if t.surrogate_width <= 0 or t.u_th <= 0 or t.T < 1:
            raise ConfigurationError("surrogate width, threshold and T must be positive")
        if t.epochs < 0 or t.batch_size < 1 or t.lr < 0:
            raise ConfigurationError("invalid training schedule")
        a = self.attack
        for name in ("modes", "gammas", "epsilons", "overrides", "cw_cs"):
            if not getattr(a, name):
                raise ConfigurationError(f"attack grid '{name}' is empty")
        for m in a.modes:
            if m not in ("untargeted", "targeted"):
                raise ConfigurationError(f"unknown attack mode {m!r}")
        if any(not 0 <= g <= 1 for g in a.gammas):
            raise ConfigurationError("gamma values must lie in [0, 1]")
        if any(e is not None and not e > 0 for e in a.epsilons):
            raise ConfigurationError("epsilon values must be positive")
        if any(o is not None and not o > 0 for o in a.overrides):
            raise ConfigurationError("threshold overrides must be positive")
        if any(c < 0 for c in a.cw_cs):
            raise ConfigurationError("cw_c values must be non-negative")
        if a.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.dataset.kind not in ("mnist", "nmnist", "synthetic"):
            raise ConfigurationError(f"unknown dataset kind {self.dataset.kind!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        ds = dict(d.get("dataset", {}))
        if "shape" in ds:
            ds["shape"] = tuple(ds["shape"])
        try:
            return cls(
                dataset=DatasetSpec(**ds),
                network=d.get("network", MNIST_NET),
                train=TrainSpec(**d.get("train", {})),
                attack=AttackGrid(**d.get("attack", {})),
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fmt_eps(eps) -> str:
    return "inf" if eps is None or math.isinf(eps) else repr(float(eps))
