"""Turn a :class:`DatasetSpec` into arrays the trainer and campaigns consume."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import bin_events, bernoulli_encode, load_mnist_dir, load_nmnist, synth_spikes
from ..numerics import Rng
from .config import DatasetSpec

# stream tags
TRAIN_ENC, TEST_ENC = 11, 12


@dataclass
class Split:
    x: np.ndarray  # images (N,C,H,W) or spikes (N,T,C,H,W)
    y: np.ndarray
    kind: str  # "image" | "spike"

    def __len__(self):
        return len(self.y)

    def spikes(self, i: int, T: int, rng: Rng) -> np.ndarray:
        if self.kind == "image":
            return bernoulli_encode(self.x[i], T, rng)
        return self.x[i]


def _limit(split: Split, n) -> Split:
    if n is None or n >= len(split):
        return split
    return Split(split.x[:n], split.y[:n], split.kind)


def load_split(spec: DatasetSpec, which: str, T: int) -> Split:
    """Load ``which`` in {"train", "test"}; raises FileNotFoundError with the path tried."""
    if spec.kind == "mnist":
        root = Path(spec.path)
        if not root.is_dir():
            raise FileNotFoundError(
                f"MNIST directory {root} not found; expected train-/t10k- IDX files "
                "(see scripts/mnist_subset_to_idx.py)")
        samples = load_mnist_dir(root, "train" if which == "train" else "test")
        split = Split(np.stack([s.pixels for s in samples]), np.array([s.label for s in samples]), "image")
    elif spec.kind == "nmnist":
        root = Path(spec.path) / ("Train" if which == "train" else "Test")
        streams = load_nmnist(root)
        x = np.stack([bin_events(s, spec.bin_ms, T) for s in streams]) if streams else np.zeros((0, T, 2, 34, 34))
        split = Split(x, np.array([s.label for s in streams], dtype=np.int64), "spike")
    else:
        ds = synth_spikes(spec.num_classes, spec.samples_per_class, spec.shape, T, seed=0,
                          sample_stream=0 if which == "train" else 1)
        split = Split(ds.spikes, ds.labels, "spike")
    return _limit(split, spec.train_limit if which == "train" else spec.test_limit)
