"""Dataset ingestion: MNIST IDX, N-MNIST AER events, rate encoding, synthetic spikes."""
from __future__ import annotations

import gzip
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .numerics import Rng, bernoulli_mask

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class ImageSample:
    pixels: np.ndarray  # (C, H, W) in [0, 1]
    label: int


@dataclass
class EventStream:
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    timestamp: np.ndarray  # microseconds
    label: int = -1
    skipped: int = 0

    def __len__(self):
        return len(self.timestamp)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(f"{path} not found")
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx_images(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 16:
        raise FormatError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: bad image magic {magic:#010x}")
    if len(data) != 16 + n * rows * cols:
        raise FormatError(f"{path}: expected {n * rows * cols} pixel bytes, found {len(data) - 16}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: bad label magic {magic:#010x}")
    if len(data) != 8 + n:
        raise FormatError(f"{path}: expected {n} labels, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).copy()


def load_mnist_idx(images_path, labels_path) -> list[ImageSample]:
    """Load an IDX image/label pair (optionally gzipped) as 1x28x28 samples in [0, 1]."""
    imgs = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(imgs) != len(labels):
        raise FormatError(f"{len(imgs)} images but {len(labels)} labels")
    pixels = imgs.astype(np.float64) / 255.0
    return [ImageSample(pixels[i][None], int(labels[i])) for i in range(len(labels))]


def load_mnist_dir(root, split: str = "train") -> list[ImageSample]:
    root = Path(root)
    prefix = "train" if split == "train" else "t10k"
    return load_mnist_idx(root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte")


def bernoulli_encode(pixels, T: int, rng: Rng) -> np.ndarray:
    """Rate-code an image into a ``(T, C, H, W)`` spike train."""
    if isinstance(pixels, ImageSample):
        pixels = pixels.pixels
    p = np.asarray(pixels, dtype=np.float64)
    return bernoulli_mask(np.broadcast_to(p, (T,) + p.shape), rng)


def parse_aer(data: bytes, width: int = 34, height: int = 34, label: int = -1) -> EventStream:
    """Decode N-MNIST 40-bit address-event records.

    Out-of-bounds addresses are dropped and counted in ``skipped``.
    """
    if len(data) % 5:
        raise FormatError(f"AER payload of {len(data)} bytes is not a whole number of 5-byte records")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x = rec[:, 0]
    y = rec[:, 1]
    pol = rec[:, 2] >> 7
    ts = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    ok = (x < width) & (y < height)
    skipped = int((~ok).sum())
    x, y, pol, ts = x[ok], y[ok], pol[ok], ts[ok]
    order = np.argsort(ts, kind="stable")
    return EventStream(x[order], y[order], pol[order], ts[order], label=label, skipped=skipped)


def encode_aer(stream: EventStream) -> bytes:
    """Inverse of :func:`parse_aer`; used to build fixtures."""
    ts = np.asarray(stream.timestamp, dtype=np.int64)
    if np.any(ts >= 1 << 23) or np.any(ts < 0):
        raise ConfigurationError("AER timestamps must fit in 23 bits")
    rec = np.empty((len(ts), 5), dtype=np.uint8)
    rec[:, 0] = stream.x
    rec[:, 1] = stream.y
    rec[:, 2] = (np.asarray(stream.polarity, dtype=np.int64) << 7) | (ts >> 16)
    rec[:, 3] = (ts >> 8) & 0xFF
    rec[:, 4] = ts & 0xFF
    return rec.tobytes()


def load_nmnist(root, width: int = 34, height: int = 34) -> list[EventStream]:
    """Read ``root/<digit>/*.bin`` recordings."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"N-MNIST directory {root} not found")
    streams = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir() and p.name.isdigit()):
        for f in sorted(class_dir.glob("*.bin")):
            s = parse_aer(f.read_bytes(), width, height, label=int(class_dir.name))
            if s.skipped:
                log.debug("%s: skipped %d out-of-bounds events", f, s.skipped)
            streams.append(s)
    return streams


def bin_events(stream: EventStream, bin_ms: float, T: int, height: int = 34, width: int = 34) -> np.ndarray:
    """Bin events into a binary ``(T, 2, H, W)`` frame stack; late events are dropped."""
    out = np.zeros((T, 2, height, width), dtype=np.float64)
    if len(stream) == 0:
        return out
    t = np.floor(np.asarray(stream.timestamp, dtype=np.float64) / (bin_ms * 1000.0)).astype(np.int64)
    keep = (t >= 0) & (t < T) & (stream.x < width) & (stream.y < height)
    out[t[keep], stream.polarity[keep], stream.y[keep], stream.x[keep]] = 1.0
    return out


@dataclass
class SpikeDataset:
    spikes: np.ndarray  # (N, T, C, H, W) in {0, 1}
    labels: np.ndarray
    seed: int = 0

    def __len__(self):
        return len(self.labels)


def synth_templates(num_classes: int, shape, seed: int) -> np.ndarray:
    """Per-class rate maps: each class lights up its own random quarter of the sites."""
    rng = Rng(seed, 0x7E)
    c, h, w = shape
    n = c * h * w
    templates = np.full((num_classes, n), 0.05)
    for k in range(num_classes):
        idx = rng.permutation(n)[: max(1, n // 4)]
        templates[k, idx] = 0.7
    return templates.reshape((num_classes,) + tuple(shape))


def synth_spikes(num_classes: int = 2, samples_per_class: int = 50, shape=(1, 8, 8), T: int = 8,
                 seed: int = 0, sample_stream: int = 0) -> SpikeDataset:
    """Deterministic class-conditional Bernoulli spike patterns.

    Templates depend on ``seed`` only; ``sample_stream`` draws a fresh set of
    samples from the same templates (e.g. a held-out split).
    """
    shape = tuple(shape)
    templates = synth_templates(num_classes, shape, seed)
    n = num_classes * samples_per_class
    spikes = np.zeros((n, T) + shape)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    base = Rng(seed, 0x5A).derive(sample_stream)
    for i in range(n):
        spikes[i] = bernoulli_encode(templates[labels[i]], T, base.derive(i))
    return SpikeDataset(spikes, labels, seed)


def save_spike_dataset(ds: SpikeDataset, path) -> None:
    """Raw little-endian u8 blocks plus a ``.json`` sidecar."""
    path = Path(path)
    path.write_bytes(ds.spikes.astype("<u1").tobytes())
    meta = {"shape": list(ds.spikes.shape), "labels": [int(v) for v in ds.labels], "seed": int(ds.seed)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_spike_dataset(path) -> SpikeDataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    shape = tuple(meta["shape"])
    raw = path.read_bytes()
    if len(raw) != int(np.prod(shape)):
        raise FormatError(f"{path}: expected {int(np.prod(shape))} bytes, found {len(raw)}")
    spikes = np.frombuffer(raw, dtype="<u1").reshape(shape).astype(np.float64)
    if spikes.max(initial=0) > 1:
        raise FormatError(f"{path}: non-binary spike values")
    return SpikeDataset(spikes, np.asarray(meta["labels"], dtype=np.int64), int(meta.get("seed", 0)))
