"""SGD と段階的な学習率スケジュール"""

from bisect import bisect_right
from typing import Iterable

import torch
from torch import nn

from src.core.exceptions import DataValidationError
from src.domain.models.training import TrainConfig


def lr_at(step: int, config: TrainConfig) -> float:
    """step（0 始まり、その更新で使う）での学習率

    初期値から、decay_steps の各ステップに達するごとに decay_factor 倍されます。
    """
    if step < 0:
        raise DataValidationError("step must be non-negative", details={"step": step})
    return config.effective_lr * config.decay_factor ** bisect_right(config.decay_steps, step)


def trainable_parameters(model: nn.Module) -> Iterable[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def build_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        trainable_parameters(model),
        lr=config.effective_lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def build_scheduler(optimizer: torch.optim.Optimizer, config: TrainConfig) -> torch.optim.lr_scheduler.MultiStepLR:
    """lr_at と一致する MultiStepLR（1 更新ごとに step() する）"""
    return torch.optim.lr_scheduler.MultiStepLR(
        optimizer,
        milestones=list(config.decay_steps),
        gamma=config.decay_factor,
    )
