"""学習済みモデルでのテスト集合評価"""

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from src.core.constants import MATCH_IOU, NMS_IOU, SCORE_FLOOR
from src.core.exceptions import ConfigurationError
from src.core.logging_config import get_structured_logger
from src.core.metrics import metrics
from src.domain.models.dataset import AnnotatedImage, NormalizationStats
from src.domain.models.detection import Detection, LabeledBox
from src.domain.models.evaluation import EvalReport
from src.domain.models.taxonomy import Taxonomy
from src.models.detector import AlgaeDetector
from src.services.data import resize_and_standardize
from src.services.evaluation.report import build_report

logger = get_structured_logger(__name__)


def ground_truth(images: Sequence[AnnotatedImage]) -> Dict[str, List[LabeledBox]]:
    """画像ごとの正解（元画像の座標、属ラベル）"""
    return {
        img.image_id: [LabeledBox(box=inst.box, label=inst.genus) for inst in img.instances]
        for img in images
    }


def predict_images(
    model: AlgaeDetector,
    images: Sequence[AnnotatedImage],
    stats: NormalizationStats,
    score_floor: float = SCORE_FLOOR,
    nms_iou: float = NMS_IOU,
    hierarchy_alpha: float = 0.0,
    batch_size: int = 1,
) -> Dict[str, List[Detection]]:
    """画像を入力サイズに揃えて推論し、検出を元画像の座標で返す"""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be positive", details={"batch_size": batch_size})
    device = next(model.parameters()).device
    size = model.config.image_size
    results: Dict[str, List[Detection]] = {}
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        prepared = [resize_and_standardize(img, stats, size) for img in chunk]
        batch = torch.stack([p.tensor for p in prepared]).to(device)
        detections = model.predict(
            batch,
            original_sizes=[(img.width, img.height) for img in chunk],
            score_floor=score_floor,
            nms_iou=nms_iou,
            hierarchy_alpha=hierarchy_alpha,
        )
        for img, dets in zip(chunk, detections):
            results[img.image_id] = dets
    return results


def evaluate_detections(
    detections: Mapping[str, Sequence[Detection]],
    images: Sequence[AnnotatedImage],
    taxonomy: Taxonomy,
    iou_threshold: float = MATCH_IOU,
) -> EvalReport:
    """保存済みの検出をテスト集合の正解で評価する（検出の無い画像は空として扱う）"""
    gts = ground_truth(images)
    dets = {image_id: list(detections.get(image_id, ())) for image_id in gts}
    unknown = [i for i in detections if i not in gts]
    if unknown:
        logger.warning("Detections for images outside the test set are ignored", count=len(unknown))
    report = build_report(dets, gts, taxonomy, iou_threshold)
    metrics.evaluations_total.inc()
    return report


def evaluate_model(
    model: AlgaeDetector,
    images: Sequence[AnnotatedImage],
    stats: NormalizationStats,
    score_floor: float = SCORE_FLOOR,
    nms_iou: float = NMS_IOU,
    hierarchy_alpha: float = 0.0,
    batch_size: int = 1,
    iou_threshold: float = MATCH_IOU,
) -> EvalReport:
    """モデルを推論してレポートを作る"""
    report, _ = evaluate_model_with_detections(
        model, images, stats, score_floor, nms_iou, hierarchy_alpha, batch_size, iou_threshold
    )
    return report


def evaluate_model_with_detections(
    model: AlgaeDetector,
    images: Sequence[AnnotatedImage],
    stats: NormalizationStats,
    score_floor: float = SCORE_FLOOR,
    nms_iou: float = NMS_IOU,
    hierarchy_alpha: float = 0.0,
    batch_size: int = 1,
    iou_threshold: float = MATCH_IOU,
) -> Tuple[EvalReport, Dict[str, List[Detection]]]:
    detections = predict_images(model, images, stats, score_floor, nms_iou, hierarchy_alpha, batch_size)
    report = evaluate_detections(detections, images, model.taxonomy, iou_threshold)
    logger.debug(
        "Model evaluated",
        images=report.num_images,
        detections=report.num_detections,
        map_genus=report.map_genus,
        map_class=report.map_class,
    )
    return report, detections
