from corgipile.sgd.model import ALIASES, KINDS, Model, gradient, loss_and_coef, objective, resolve_kind
from corgipile.sgd.schedule import ETA_GRID, LrSchedule
from corgipile.sgd.train import (
    HISTORY_COLUMNS,
    EpochStats,
    Metrics,
    TrainResult,
    evaluate,
    margins,
    minibatch_epoch,
    predict,
    read_history,
    sgd_epoch,
    train,
    write_history,
)

__all__ = [
    "ALIASES", "KINDS", "Model", "gradient", "loss_and_coef", "objective", "resolve_kind", "ETA_GRID", "LrSchedule",
    "HISTORY_COLUMNS", "EpochStats", "Metrics", "TrainResult", "evaluate", "margins", "minibatch_epoch", "predict",
    "read_history", "sgd_epoch", "train", "write_history",
]
