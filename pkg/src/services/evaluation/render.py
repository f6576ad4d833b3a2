"""検出結果の可視化"""

from pathlib import Path
from typing import List, Sequence, Tuple

from src.domain.models.dataset import AnnotatedImage
from src.domain.models.detection import Detection
from src.domain.models.geometry import BoundingBox
from src.infrastructure.imaging import draw_boxes, save_overlay


def detection_label(det: Detection) -> str:
    text = f"{det.genus} {det.confidence:.2f}"
    if det.class_name is not None:
        text += f" ({det.class_name})"
    return text


def render_detections(
    image: AnnotatedImage,
    detections: Sequence[Detection],
    out_path: Path,
    show_ground_truth: bool = False,
) -> Path:
    """検出のボックスを描いた PNG を書く（ラベルは各ボックスの左上）

    show_ground_truth=True では正解ボックスも "gt:<属>" のラベルで描きます。
    """
    items: List[Tuple[BoundingBox, str]] = []
    if show_ground_truth:
        items.extend((inst.box, f"gt:{inst.genus}") for inst in image.instances)
    items.extend((det.box, detection_label(det)) for det in detections)
    return save_overlay(out_path, draw_boxes(image.load_pixels(), items))
