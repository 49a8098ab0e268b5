"""Model and attack-outcome serialization.

Model file layout (little-endian)::

    b"SNNM" | u32 version | u32 header_len | header JSON (utf-8)
    | u64 payload_len | u32 crc32(payload) | payload (f32 weights, layer order)

Outcome files are a ``<name>.json`` metadata document plus, for successful
attacks, a ``<name>.bin`` raw blob holding the adversarial example (u8 for
spike inputs, f64 for images).
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .attack import AttackConfig, AttackOutcome, InputKind, IterationRecord
from .errors import FormatError
from .snn.core import POOL, Layer, NetworkModel

MAGIC = b"SNNM"
VERSION = 1
OUTCOME_SCHEMA = 1


def _f32(a):
    return np.asarray(a, dtype="<f4")


def save_model(model: NetworkModel, path) -> None:
    layers, blobs = [], []
    for layer in model.layers:
        spec = {
            "kind": layer.kind, "in_shape": list(layer.in_shape), "out_shape": list(layer.out_shape),
            "stride": layer.stride, "padding": layer.padding, "pool": layer.pool, "u_th": layer.u_th,
        }
        if layer.weight is not None:
            spec["weight_shape"] = list(layer.weight.shape)
            blobs.append(_f32(layer.weight).tobytes())
        if layer.bias is not None:
            spec["bias_shape"] = list(layer.bias.shape)
            blobs.append(_f32(layer.bias).tobytes())
        layers.append(spec)
    header = json.dumps({
        "layers": layers, "input_shape": list(model.input_shape), "decay": model.decay,
        "surrogate_width": model.surrogate_width, "T": model.T, "num_classes": model.num_classes,
        "meta": model.meta,
    }, sort_keys=True).encode()
    payload = b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        fh.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        fh.write(payload)


def load_model(path) -> NetworkModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a model file (magic {data[:4]!r})")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    pos = 12 + hlen
    if len(data) < pos + 12:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:pos])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header JSON") from exc
    plen, crc = struct.unpack_from("<QI", data, pos)
    payload = data[pos + 12:]
    if len(payload) != plen:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header says {plen}")
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: weight checksum mismatch")

    need = 0
    for spec in header["layers"]:
        for key in ("weight_shape", "bias_shape"):
            if key in spec:
                need += 4 * int(np.prod(spec[key]))
    if need != plen:
        raise FormatError(f"{path}: layer specs need {need} payload bytes, found {plen}")

    off = 0

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
        return arr

    layers = []
    for spec in header["layers"]:
        layer = Layer(spec["kind"], tuple(spec["in_shape"]), tuple(spec["out_shape"]), stride=spec["stride"],
                      padding=spec["padding"], pool=spec["pool"], u_th=spec["u_th"])
        if spec["kind"] != POOL:
            layer.weight = take(spec["weight_shape"])
            if "bias_shape" in spec:
                layer.bias = take(spec["bias_shape"])
        layers.append(layer)
    return NetworkModel(layers, tuple(header["input_shape"]), decay=header["decay"],
                        surrogate_width=header["surrogate_width"], T=header["T"],
                        num_classes=header["num_classes"], meta=header.get("meta", {}))


def quantize_weights(model: NetworkModel) -> NetworkModel:
    """Round weights to float32 in place, matching what :func:`save_model` keeps."""
    for p in model.params():
        p[...] = p.astype(np.float32)
    return model


def save_outcome(outcome: AttackOutcome, path, extra: dict | None = None, original=None) -> Path:
    """Write ``<path>.json`` and, on success, ``<path>.bin``; returns the JSON path.

    ``original`` (the clean input) is stored next to a successful example as
    ``<path>.orig.bin`` so reports can recompute the perturbation.
    """
    path = Path(path)
    meta_path = path.with_name(path.name + ".json")
    blob_path = path.with_name(path.name + ".bin")
    orig_path = path.with_name(path.name + ".orig.bin")
    example = {"present": False}
    if outcome.success and outcome.adversarial_example is not None:
        x = np.asarray(outcome.adversarial_example)
        spike = InputKind(outcome.config.input_kind) is InputKind.SPIKE
        dtype = "<u1" if spike else "<f8"
        blob_path.write_bytes(x.astype(dtype).tobytes())
        example = {"present": True, "file": blob_path.name, "dtype": dtype, "shape": list(x.shape)}
        if original is not None:
            orig_path.write_bytes(np.asarray(original).astype(dtype).tobytes())
            example["original"] = orig_path.name
    else:
        for stale in (blob_path, orig_path):
            if stale.exists():
                stale.unlink()
    doc = {
        "schema": OUTCOME_SCHEMA,
        "status": outcome.status,
        "iterations_used": outcome.iterations_used,
        "perturbation": outcome.perturbation,
        "flip_iterations": outcome.flip_iterations,
        "true_label": outcome.true_label,
        "encoding": list(outcome.encoding) if outcome.encoding is not None else None,
        "config": outcome.config.to_dict(),
        "trace": [vars(r) for r in outcome.trace],
        "example": example,
    }
    if extra:
        doc.update(extra)
    meta_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return meta_path


def _read_blob(path: Path, ex: dict, name: str):
    raw = path.read_bytes()
    dt = np.dtype(ex["dtype"])
    if len(raw) != dt.itemsize * int(np.prod(ex["shape"])):
        raise FormatError(f"{path}: blob has wrong size")
    return np.frombuffer(raw, dtype=dt).reshape(ex["shape"]).astype(np.float64)


def load_original(meta_path, doc: dict):
    """Clean input stored alongside an outcome, or None."""
    ex = doc["example"]
    if not ex.get("present") or "original" not in ex:
        return None
    return _read_blob(Path(meta_path).parent / ex["original"], ex, "original")


def load_outcome(path):
    """Read an outcome written by :func:`save_outcome`; returns ``(outcome, document)``."""
    meta_path = Path(path)
    if meta_path.suffix != ".json":
        meta_path = meta_path.with_name(meta_path.name + ".json")
    try:
        doc = json.loads(meta_path.read_text())
    except ValueError as exc:
        raise FormatError(f"{meta_path}: not valid JSON") from exc
    if doc.get("schema") != OUTCOME_SCHEMA:
        raise FormatError(f"{meta_path}: unsupported outcome schema {doc.get('schema')}")
    ex = doc["example"]
    x = None
    if ex.get("present"):
        x = _read_blob(meta_path.parent / ex["file"], ex, "example")
    enc = tuple(doc["encoding"]) if doc.get("encoding") is not None else None
    outcome = AttackOutcome(
        status=doc["status"], iterations_used=doc["iterations_used"], perturbation=doc["perturbation"],
        flip_iterations=doc["flip_iterations"], adversarial_example=x, true_label=doc["true_label"],
        config=AttackConfig.from_dict(doc["config"]), trace=[IterationRecord(**r) for r in doc["trace"]],
        encoding=enc,
    )
    return outcome, doc
