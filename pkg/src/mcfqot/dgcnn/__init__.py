from .io import read_model, write_model
from .model import (
    DgcnnConfig,
    DgcnnModel,
    Graph,
    fit_normalizer,
    forward,
    init_model,
    loss_and_gradients,
    prepare,
    sort_pooling,
)
from .optim import AdamState, adam_step
from .train import FEASIBLE, INFEASIBLE, History, classify_state, predict, train

__all__ = [
    "AdamState",
    "DgcnnConfig",
    "DgcnnModel",
    "FEASIBLE",
    "Graph",
    "History",
    "INFEASIBLE",
    "adam_step",
    "classify_state",
    "fit_normalizer",
    "forward",
    "init_model",
    "loss_and_gradients",
    "predict",
    "prepare",
    "read_model",
    "sort_pooling",
    "train",
    "write_model",
]
