"""ドメインモデル"""

from src.domain.models.geometry import AnchorGrid, BoundingBox
from src.domain.models.taxonomy import GenusCensus, Taxonomy
from src.domain.models.dataset import AnnotatedImage, DatasetSplit, Instance, NormalizationStats
from src.domain.models.detection import (
    Detection,
    DetectionMatch,
    LabeledBox,
    MatchResult,
    ScoredBox,
)
from src.domain.models.detector import LossBreakdown, LossWeights, ModelConfig
from src.domain.models.training import EvalRecord, StepRecord, TrainConfig, TrainLog
from src.domain.models.synthgen import GenusStyle, SceneSpec
from src.domain.models.evaluation import EvalConfig, EvalReport, LabelScore

__all__ = [
    "AnchorGrid",
    "BoundingBox",
    "GenusCensus",
    "Taxonomy",
    "AnnotatedImage",
    "DatasetSplit",
    "Instance",
    "NormalizationStats",
    "Detection",
    "DetectionMatch",
    "LabeledBox",
    "MatchResult",
    "ScoredBox",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "EvalRecord",
    "StepRecord",
    "TrainConfig",
    "TrainLog",
    "GenusStyle",
    "SceneSpec",
    "EvalConfig",
    "EvalReport",
    "LabelScore",
]
