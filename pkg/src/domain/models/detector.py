"""検出器の設定と損失の型"""

from dataclasses import dataclass
import math
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.constants import (
    ANCHOR_RATIOS,
    ANCHOR_SIZES,
    DEFAULT_LAMBDA,
    DESK_ANCHOR_SIZES,
    DESK_STRIDES,
    DETECTIONS_PER_IMAGE,
    IMAGE_SIZE,
    NUM_CLASSES,
    FULL_STRIDES,
    ROI_POSITIVE_FRACTION,
    ROI_SAMPLES_PER_IMAGE,
    RPN_POSITIVE_FRACTION,
    RPN_SAMPLES_PER_IMAGE,
)
from src.core.exceptions import NumericError
from src.domain.models.geometry import AnchorGrid

LOSS_IDENTITY_TOLERANCE = 1e-6


class ModelConfig(BaseModel):
    """三分岐検出器の設定

    Attributes:
        num_genera: 属数（マージ後、"else" を含む）
        num_classes: 綱数（常に 6）
        roi_feature_dim: 領域ごとの共有特徴ベクトルの次元 m
        anchor_grid: アンカー配置
        backbone: バックボーン種別（BackboneFactory に登録された名前）
        backbone_width: desk バックボーンの基本チャネル数
        fpn_channels: FPN の出力チャネル数
        image_size: 入力画像の一辺
        class_branch: Branch-3（綱分類ヘッド）を持つか
    """

    model_config = ConfigDict(frozen=True)

    num_genera: int = Field(..., ge=2)
    num_classes: int = Field(default=NUM_CLASSES)
    roi_feature_dim: int = Field(default=256, gt=0)
    anchor_grid: AnchorGrid = Field(default_factory=AnchorGrid)
    backbone: str = Field(default="desk")
    backbone_width: int = Field(default=32, gt=0)
    fpn_channels: int = Field(default=64, gt=0)
    image_size: int = Field(default=IMAGE_SIZE, gt=0)
    class_branch: bool = True

    # RPN
    rpn_pre_nms_top_n_train: int = Field(default=2000, gt=0)
    rpn_post_nms_top_n_train: int = Field(default=1000, gt=0)
    rpn_pre_nms_top_n_test: int = Field(default=1000, gt=0)
    rpn_post_nms_top_n_test: int = Field(default=300, gt=0)
    rpn_nms_iou: float = Field(default=0.7, gt=0, le=1)
    rpn_fg_iou: float = Field(default=0.7, gt=0, le=1)
    rpn_bg_iou: float = Field(default=0.3, ge=0, le=1)
    rpn_batch_size_per_image: int = Field(default=RPN_SAMPLES_PER_IMAGE, gt=0)
    rpn_positive_fraction: float = Field(default=RPN_POSITIVE_FRACTION, gt=0, le=1)

    # RoI
    roi_pool_size: int = Field(default=7, gt=0)
    roi_sampling_ratio: int = Field(default=2, ge=0)
    roi_fg_iou: float = Field(default=0.5, gt=0, le=1)
    roi_batch_size_per_image: int = Field(default=ROI_SAMPLES_PER_IMAGE, gt=0)
    roi_positive_fraction: float = Field(default=ROI_POSITIVE_FRACTION, gt=0, le=1)
    box_weights: Tuple[float, float, float, float] = (10.0, 10.0, 5.0, 5.0)
    detections_per_image: int = Field(default=DETECTIONS_PER_IMAGE, gt=0)

    @field_validator('num_classes')
    @classmethod
    def validate_num_classes(cls, v: int) -> int:
        if v != NUM_CLASSES:
            raise ValueError(f"num_classes must be {NUM_CLASSES}")
        return v

    @model_validator(mode='after')
    def _check_thresholds(self) -> "ModelConfig":
        if self.rpn_bg_iou > self.rpn_fg_iou:
            raise ValueError("rpn_bg_iou must not exceed rpn_fg_iou")
        if self.rpn_post_nms_top_n_train > self.rpn_pre_nms_top_n_train:
            raise ValueError("rpn_post_nms_top_n_train must not exceed rpn_pre_nms_top_n_train")
        if self.rpn_post_nms_top_n_test > self.rpn_pre_nms_top_n_test:
            raise ValueError("rpn_post_nms_top_n_test must not exceed rpn_pre_nms_top_n_test")
        return self

    @classmethod
    def desk(cls, num_genera: int, **overrides) -> "ModelConfig":
        """CPU で回る小さな 3 段ピラミッド構成"""
        values = dict(
            num_genera=num_genera,
            anchor_grid=AnchorGrid(
                ratios=ANCHOR_RATIOS,
                sizes=tuple(float(s) for s in DESK_ANCHOR_SIZES),
                strides=DESK_STRIDES,
            ),
            backbone="desk",
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def full(cls, num_genera: int, **overrides) -> "ModelConfig":
        """ResNet-50 + FPN、5 段ピラミッド構成"""
        values = dict(
            num_genera=num_genera,
            anchor_grid=AnchorGrid(
                ratios=ANCHOR_RATIOS,
                sizes=tuple(float(s) for s in ANCHOR_SIZES),
                strides=FULL_STRIDES,
            ),
            backbone="resnet50_fpn",
            fpn_channels=256,
            roi_feature_dim=1024,
            roi_batch_size_per_image=ROI_SAMPLES_PER_IMAGE,
        )
        values.update(overrides)
        return cls(**values)


class LossWeights(BaseModel):
    """損失の重み（λ は L_cls に掛かる）"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(default=DEFAULT_LAMBDA, ge=0, alias="lambda")

    @field_validator('lam')
    @classmethod
    def validate_lambda(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("lambda must be finite")
        return v


@dataclass(frozen=True)
class LossBreakdown:
    """L_total = L_box + L_genus + λ·L_cls の 4 成分と λ

    Raises:
        NumericError: 成分が有限でない、負、または恒等式が崩れている場合
    """
    l_box: float
    l_genus: float
    l_cls: float
    l_total: float
    lam: float

    def __post_init__(self):
        values = {
            "l_box": self.l_box,
            "l_genus": self.l_genus,
            "l_cls": self.l_cls,
            "l_total": self.l_total,
            "lambda": self.lam,
        }
        bad = {k: v for k, v in values.items() if not math.isfinite(v)}
        if bad:
            raise NumericError("Non-finite loss component", details=bad)
        negative = {k: v for k, v in values.items() if v < 0}
        if negative:
            raise NumericError("Negative loss component", details=negative)
        if self.identity_error() > LOSS_IDENTITY_TOLERANCE:
            raise NumericError(
                "L_total does not match L_box + L_genus + lambda * L_cls",
                details=values
            )

    def identity_error(self) -> float:
        """|L_total − (L_box + L_genus + λ·L_cls)| / max(1, L_total)"""
        expected = self.l_box + self.l_genus + self.lam * self.l_cls
        return abs(self.l_total - expected) / max(1.0, abs(self.l_total))

    @classmethod
    def compose(cls, l_box: float, l_genus: float, l_cls: float, lam: float) -> "LossBreakdown":
        return cls(
            l_box=l_box,
            l_genus=l_genus,
            l_cls=l_cls,
            l_total=l_box + l_genus + lam * l_cls,
            lam=lam,
        )

    def as_dict(self) -> dict:
        return {
            "l_box": self.l_box,
            "l_genus": self.l_genus,
            "l_cls": self.l_cls,
            "l_total": self.l_total,
            "lambda": self.lam,
        }
