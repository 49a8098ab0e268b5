from .core import (
    CONV,
    FC,
    POOL,
    Layer,
    LifState,
    NetworkModel,
    build_network,
    forward,
    lif_step,
    predict,
    spike_count_per_layer,
)
from .grad import SGD, LossKind, accuracy, backward, loss, soft_forward, surrogate_deriv, train_step

__all__ = [
    "CONV", "FC", "POOL", "Layer", "LifState", "NetworkModel", "build_network", "forward", "lif_step",
    "predict", "spike_count_per_layer", "SGD", "LossKind", "accuracy", "backward", "loss", "soft_forward",
    "surrogate_deriv", "train_step",
]
