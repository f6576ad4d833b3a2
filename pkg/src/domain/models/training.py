"""学習設定と学習ログの型"""

from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.constants import (
    BASE_LR,
    CROP_MIN_FRACTION,
    DECAY_FACTOR,
    DECAY_STEPS,
    DEFAULT_LAMBDA,
    DESK_BATCH_SIZE,
    GRAD_CLIP_NORM,
    MOMENTUM,
    FULL_BATCH_SIZE,
    FULL_TOTAL_STEPS,
    ROTATE_PROBABILITY,
)
from src.core.exceptions import DataValidationError


class TrainConfig(BaseModel):
    """SGD の学習設定

    Attributes:
        base_lr: 初期学習率
        momentum: モーメンタム
        weight_decay: 重み減衰
        batch_size: バッチサイズ
        decay_steps: 学習率を decay_factor 倍するステップ（狭義単調増加）
        decay_factor: 減衰率
        total_steps: 総ステップ数
        lam: L_cls の重み λ
        seed: 乱数シード（モデル初期化、サンプル順、拡張、領域サンプリング）
        checkpoint_every: チェックポイント間隔（0 なら最終のみ）
        eval_every: 評価間隔（0 なら最終のみ）
        scale_lr_with_batch: base_lr を batch_size / 32 倍するか
        grad_clip_norm: 勾配ノルムのクリップ値
        augment: 回転・クロップ拡張を行うか
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    base_lr: float = Field(default=BASE_LR, gt=0)
    momentum: float = Field(default=MOMENTUM, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    batch_size: int = Field(default=FULL_BATCH_SIZE, gt=0)
    decay_steps: Tuple[int, ...] = DECAY_STEPS
    decay_factor: float = Field(default=DECAY_FACTOR, gt=0, le=1)
    total_steps: int = Field(default=FULL_TOTAL_STEPS, gt=0)
    lam: float = Field(default=DEFAULT_LAMBDA, ge=0, alias="lambda")
    seed: int = 0
    checkpoint_every: int = Field(default=0, ge=0)
    eval_every: int = Field(default=0, ge=0)
    scale_lr_with_batch: bool = False
    grad_clip_norm: float = Field(default=GRAD_CLIP_NORM, gt=0)
    augment: bool = True
    rotate_probability: float = Field(default=ROTATE_PROBABILITY, ge=0, le=1)
    crop_min_fraction: float = Field(default=CROP_MIN_FRACTION, gt=0, le=1)

    @field_validator('decay_steps')
    @classmethod
    def validate_decay_steps(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(s < 0 for s in v):
            raise ValueError("decay steps must be non-negative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("decay steps must be strictly increasing")
        return v

    @property
    def effective_lr(self) -> float:
        """バッチサイズによる線形スケーリング後の初期学習率"""
        if self.scale_lr_with_batch:
            return self.base_lr * self.batch_size / FULL_BATCH_SIZE
        return self.base_lr

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, total_steps: int, **overrides) -> "TrainConfig":
        """総ステップの 75% / 87.5% で減衰する小規模設定"""
        first = max(1, int(total_steps * 0.75))
        second = max(first + 1, int(total_steps * 0.875))
        values = dict(
            total_steps=total_steps,
            decay_steps=(first, second),
            batch_size=DESK_BATCH_SIZE,
        )
        values.update(overrides)
        return cls(**values)


class StepRecord(BaseModel):
    """1 ステップ分のログ"""

    event: Literal["step"] = "step"
    step: int = Field(..., ge=0)
    l_box: float
    l_genus: float
    l_cls: float
    l_total: float
    lam: float = Field(..., alias="lambda")
    lr: float
    grad_norm: float
    wall_time: float

    model_config = ConfigDict(populate_by_name=True)


class EvalRecord(BaseModel):
    """評価点のログ"""

    event: Literal["eval"] = "eval"
    step: int = Field(..., ge=0)
    map_genus: Optional[float] = None
    map_class: Optional[float] = None
    aca_genus: Optional[float] = None
    aca_class: Optional[float] = None


TrainLogRecord = Union[StepRecord, EvalRecord]


class TrainLog(BaseModel):
    """ステップごとの損失と評価点の mAP

    ステップ番号はそれぞれの系列で狭義単調増加です。
    """

    steps: List[StepRecord] = Field(default_factory=list)
    evals: List[EvalRecord] = Field(default_factory=list)

    def add_step(self, record: StepRecord) -> None:
        if self.steps and record.step <= self.steps[-1].step:
            raise DataValidationError(
                "Train log steps must be strictly increasing",
                details={"previous": self.steps[-1].step, "step": record.step}
            )
        self.steps.append(record)

    def add_eval(self, record: EvalRecord) -> None:
        if self.evals and record.step <= self.evals[-1].step:
            raise DataValidationError(
                "Eval points must be strictly increasing",
                details={"previous": self.evals[-1].step, "step": record.step}
            )
        self.evals.append(record)

    @property
    def last_eval(self) -> Optional[EvalRecord]:
        return self.evals[-1] if self.evals else None

    def max_identity_error(self) -> float:
        """全ステップでの |L_total − (L_box + L_genus + λ·L_cls)| / max(1, L_total) の最大値"""
        worst = 0.0
        for r in self.steps:
            expected = r.l_box + r.l_genus + r.lam * r.l_cls
            worst = max(worst, abs(r.l_total - expected) / max(1.0, abs(r.l_total)))
        return worst

    def trailing_mean(self, end_step: int, window: int = 100) -> float:
        """end_step 以前の直近 window ステップの L_total 平均"""
        values = [r.l_total for r in self.steps if r.step <= end_step][-window:]
        if not values:
            raise DataValidationError("No steps before the requested point", details={"step": end_step})
        return sum(values) / len(values)
