"""貪欲法の非最大値抑制（NMS）

スコアの降順に見ていき、同点は入力順（インデックスの小さい方が先）。
保持済みのボックスとの IoU が閾値以上のボックスは抑制されます。
"""

import math
from typing import List, Sequence, Tuple

import torch

from src.core.exceptions import DataValidationError
from src.domain.models.geometry import BoundingBox
from src.infrastructure.geometry.boxes import box_iou, boxes_to_tensor


def nms_tensor(boxes: torch.Tensor, scores: torch.Tensor, iou_threshold: float) -> torch.Tensor:
    """保持するボックスのインデックス（スコア降順）"""
    if boxes.shape[0] == 0:
        return torch.zeros((0,), dtype=torch.long, device=boxes.device)
    order = torch.sort(scores, descending=True, stable=True).indices
    ious = box_iou(boxes[order], boxes[order])
    suppressed = torch.zeros(order.shape[0], dtype=torch.bool, device=boxes.device)
    keep = []
    for i in range(order.shape[0]):
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] >= iou_threshold
    return order[torch.tensor(keep, dtype=torch.long, device=boxes.device)]


def batched_nms(
    boxes: torch.Tensor,
    scores: torch.Tensor,
    labels: torch.Tensor,
    iou_threshold: float,
) -> torch.Tensor:
    """ラベルごとの NMS（ラベルが違うボックス同士は抑制しない）"""
    if boxes.shape[0] == 0:
        return torch.zeros((0,), dtype=torch.long, device=boxes.device)
    # ラベルごとに重ならない領域へずらす
    offset = boxes.max() - boxes.min() + 1
    shifted = boxes + (labels.to(boxes.dtype) * offset)[:, None]
    return nms_tensor(shifted, scores, iou_threshold)


def nms(entries: Sequence[Tuple[BoundingBox, float]], iou_threshold: float) -> List[int]:
    """(box, score) の列から保持する要素のインデックスを返す（スコア降順）

    Raises:
        DataValidationError: スコアが有限でない
    """
    scores = [float(s) for _, s in entries]
    if any(not math.isfinite(s) for s in scores):
        raise DataValidationError("NMS scores must be finite")
    if not entries:
        return []
    keep = nms_tensor(
        boxes_to_tensor([b for b, _ in entries]),
        torch.tensor(scores, dtype=torch.float64),
        iou_threshold,
    )
    return [int(i) for i in keep.tolist()]
