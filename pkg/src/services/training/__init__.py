"""Training Service - SGD 学習ループ、学習率スケジュール、学習ログ、λ スイープ"""

from src.services.training.plotting import plot_sweep
from src.services.training.schedule import build_optimizer, build_scheduler, lr_at, trainable_parameters
from src.services.training.sweep import (
    DEFAULT_LAMBDAS,
    SWEEP_CSV,
    SweepReport,
    SweepRow,
    parse_lambdas,
    read_sweep_csv,
    sweep_lambda,
    write_sweep,
)
from src.services.training.train_log import TRAIN_LOG_FILE, TrainLogWriter, read_train_log
from src.services.training.trainer import (
    FINAL_CHECKPOINT,
    LAST_GOOD_CHECKPOINT,
    Trainer,
    TrainResult,
    checkpoint_name,
    train,
)

__all__ = [
    "plot_sweep",
    "build_optimizer",
    "build_scheduler",
    "lr_at",
    "trainable_parameters",
    "DEFAULT_LAMBDAS",
    "SWEEP_CSV",
    "SweepReport",
    "SweepRow",
    "parse_lambdas",
    "read_sweep_csv",
    "sweep_lambda",
    "write_sweep",
    "TRAIN_LOG_FILE",
    "TrainLogWriter",
    "read_train_log",
    "FINAL_CHECKPOINT",
    "LAST_GOOD_CHECKPOINT",
    "Trainer",
    "TrainResult",
    "checkpoint_name",
    "train",
]
