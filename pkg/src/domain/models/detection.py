"""検出結果と評価入力の型"""

from dataclasses import dataclass
import math
from typing import Dict, Mapping, Optional, Sequence, Tuple

from src.core.exceptions import DataValidationError
from src.domain.models.geometry import BoundingBox

PROBABILITY_TOLERANCE = 1e-5


def _check_distribution(name: str, values: Sequence[float]) -> Tuple[float, ...]:
    values = tuple(float(v) for v in values)
    if any(not math.isfinite(v) or v < 0 for v in values):
        raise DataValidationError(f"{name} must be finite and non-negative")
    if abs(sum(values) - 1.0) > PROBABILITY_TOLERANCE:
        raise DataValidationError(
            f"{name} must sum to 1",
            details={"sum": sum(values)}
        )
    return values


@dataclass(frozen=True)
class Detection:
    """モデルの出力 1 件

    Attributes:
        box: ボックス（元画像の座標系）
        genus: 予測された属（NMS を通過したラベル）
        confidence: その属のスコア（背景込みの softmax）
        genus_scores: 前景で正規化した属の確率ベクトル
        class_scores: 前景で正規化した綱の確率ベクトル
        class_name: 予測された綱（Branch-3 の argmax）
    """
    box: BoundingBox
    genus: str
    confidence: float
    genus_scores: Optional[Tuple[float, ...]] = None
    class_scores: Optional[Tuple[float, ...]] = None
    class_name: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0) or not math.isfinite(self.confidence):
            raise DataValidationError(
                "Detection confidence must lie in [0, 1]",
                details={"confidence": self.confidence, "genus": self.genus}
            )
        if self.genus_scores is not None:
            object.__setattr__(self, "genus_scores", _check_distribution("genus_scores", self.genus_scores))
        if self.class_scores is not None:
            object.__setattr__(self, "class_scores", _check_distribution("class_scores", self.class_scores))

    def as_scored(self) -> "ScoredBox":
        return ScoredBox(box=self.box, label=self.genus, score=self.confidence)


@dataclass(frozen=True)
class ScoredBox:
    """評価用の予測（ボックス + ラベル + スコア）"""
    box: BoundingBox
    label: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataValidationError("Score must be finite", details={"label": self.label})


@dataclass(frozen=True)
class LabeledBox:
    """評価用の正解（ボックス + ラベル）"""
    box: BoundingBox
    label: str


@dataclass(frozen=True)
class DetectionMatch:
    """1 件の予測に対する照合結果"""
    image_id: str
    det_index: int
    label: str
    score: float
    is_tp: bool
    gt_index: Optional[int] = None


@dataclass(frozen=True)
class MatchResult:
    """IoU 閾値での照合結果

    ``matches`` は入力順（画像順、画像内の予測順）に並びます。
    """
    matches: Tuple[DetectionMatch, ...]
    gt_labels: Mapping[str, Tuple[str, ...]]
    gt_matched: Mapping[str, Tuple[bool, ...]]
    iou_threshold: float

    def labels(self) -> Tuple[str, ...]:
        """予測または正解に現れるラベル（初出順）"""
        seen: Dict[str, None] = {}
        for labels in self.gt_labels.values():
            for label in labels:
                seen.setdefault(label, None)
        for m in self.matches:
            seen.setdefault(m.label, None)
        return tuple(seen)

    def num_gt(self, label: str) -> int:
        return sum(1 for labels in self.gt_labels.values() for l in labels if l == label)

    def for_label(self, label: str) -> Tuple[DetectionMatch, ...]:
        return tuple(m for m in self.matches if m.label == label)

    @property
    def num_tp(self) -> int:
        return sum(1 for m in self.matches if m.is_tp)
