from .campaign import run_campaign, select_samples
from .config import AttackGrid, DatasetSpec, ExperimentConfig, TrainSpec
from .training import evaluate, train_model

__all__ = ["run_campaign", "select_samples", "AttackGrid", "DatasetSpec", "ExperimentConfig", "TrainSpec",
           "evaluate", "train_model"]
