"""Epoch loop around :func:`snnattack.snn.train_step`."""
from __future__ import annotations

import logging
import time

import numpy as np

from ..numerics import Rng
from ..snn import SGD, NetworkModel, build_network, forward, train_step
from ..store import quantize_weights
from .config import ExperimentConfig
from .datasets import TEST_ENC, TRAIN_ENC, Split

log = logging.getLogger(__name__)


def evaluate(model: NetworkModel, split: Split, seed: int, batch_size: int = 100) -> float:
    """Accuracy on ``split``; image samples get a fixed per-index encoding."""
    if len(split) == 0:
        return 0.0
    rng = Rng(seed, TEST_ENC)
    hits = 0
    for start in range(0, len(split), batch_size):
        idx = range(start, min(start + batch_size, len(split)))
        xs = np.stack([split.spikes(i, model.T, rng.derive(i)) for i in idx])
        rate, _ = forward(model, xs)
        hits += int(np.sum(np.argmax(rate, axis=-1) == split.y[start:start + len(idx)]))
    return hits / len(split)


def train_model(cfg: ExperimentConfig, train: Split, test: Split) -> tuple[NetworkModel, list]:
    t = cfg.train
    shape = train.x.shape[1:] if train.kind == "image" else train.x.shape[2:]
    model = build_network(cfg.network, shape, T=t.T, decay=t.decay, surrogate_width=t.surrogate_width,
                          u_th=t.u_th, seed=t.seed)
    opt = SGD(lr=t.lr, momentum=t.momentum)
    rng = Rng(t.seed, TRAIN_ENC)
    history = []
    for epoch in range(t.epochs):
        t0 = time.time()
        order = rng.derive(epoch).permutation(len(train))
        losses = []
        for start in range(0, len(order), t.batch_size):
            idx = order[start:start + t.batch_size]
            xs = np.stack([train.spikes(i, t.T, rng.derive(epoch, i)) for i in idx])
            losses.append(train_step(model, xs, train.y[idx], t.loss, opt))
        acc = evaluate(model, test, t.seed)
        rec = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "test_accuracy": acc,
               "seconds": round(time.time() - t0, 1)}
        history.append(rec)
        log.info("epoch %d loss %.5f test acc %.4f (%.0fs)", epoch + 1, rec["loss"], acc, rec["seconds"])
    quantize_weights(model)
    final = evaluate(model, test, t.seed)
    model.meta.update(loss=t.loss, seed=t.seed, epochs=t.epochs, test_accuracy=final, spec=cfg.network)
    return model, history
