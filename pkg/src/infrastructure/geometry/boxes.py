"""ボックス演算（IoU、デルタ符号化、クリップ）

テンソル版は (N, 4) の角形式 ``(x1, y1, x2, y2)`` を受け取ります。
スカラー版（``iou`` / ``encode_deltas`` / ``decode_deltas``）は float64 の
テンソル版をそのまま使うので、モデルとテストが同じ計算を共有します。
"""

import math
from typing import Optional, Sequence, Tuple

import torch
from torchvision.ops import box_iou as _tv_box_iou

from src.core.constants import MAX_LOG_SCALE
from src.core.exceptions import DataValidationError
from src.domain.models.geometry import BoundingBox

Deltas = Tuple[float, float, float, float]
UNIT_WEIGHTS = (1.0, 1.0, 1.0, 1.0)


def boxes_to_tensor(boxes: Sequence[BoundingBox], dtype: torch.dtype = torch.float64) -> torch.Tensor:
    if not boxes:
        return torch.zeros((0, 4), dtype=dtype)
    return torch.tensor([b.as_tuple() for b in boxes], dtype=dtype)


def box_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """(N, 4) × (M, 4) → (N, M) の IoU 行列（面積は +1 オフセットなし）"""
    if a.numel() == 0 or b.numel() == 0:
        return torch.zeros((a.shape[0], b.shape[0]), dtype=a.dtype, device=a.device)
    return _tv_box_iou(a, b)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """2 つのボックスの IoU ∈ [0, 1]"""
    value = box_iou(boxes_to_tensor([a]), boxes_to_tensor([b]))[0, 0].item()
    # 同一ボックスでの丸め誤差を吸収
    return min(1.0, max(0.0, value))


def encode_boxes(
    anchors: torch.Tensor,
    targets: torch.Tensor,
    weights: Sequence[float] = UNIT_WEIGHTS,
) -> torch.Tensor:
    """中心・対数サイズでの回帰目標 (dx, dy, dw, dh)"""
    wx, wy, ww, wh = weights
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah

    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th

    dx = wx * (tx - ax) / aw
    dy = wy * (ty - ay) / ah
    dw = ww * torch.log(tw / aw)
    dh = wh * torch.log(th / ah)
    return torch.stack((dx, dy, dw, dh), dim=1)


def decode_boxes(
    anchors: torch.Tensor,
    deltas: torch.Tensor,
    weights: Sequence[float] = UNIT_WEIGHTS,
    max_log_scale: Optional[float] = MAX_LOG_SCALE,
) -> torch.Tensor:
    """encode_boxes の逆変換"""
    wx, wy, ww, wh = weights
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah

    dx = deltas[:, 0] / wx
    dy = deltas[:, 1] / wy
    dw = deltas[:, 2] / ww
    dh = deltas[:, 3] / wh
    if max_log_scale is not None:
        dw = torch.clamp(dw, max=max_log_scale)
        dh = torch.clamp(dh, max=max_log_scale)

    cx = dx * aw + ax
    cy = dy * ah + ay
    w = torch.exp(dw) * aw
    h = torch.exp(dh) * ah
    return torch.stack((cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h), dim=1)


def clip_boxes(boxes: torch.Tensor, width: float, height: float) -> torch.Tensor:
    x1 = boxes[:, 0].clamp(0, width)
    y1 = boxes[:, 1].clamp(0, height)
    x2 = boxes[:, 2].clamp(0, width)
    y2 = boxes[:, 3].clamp(0, height)
    return torch.stack((x1, y1, x2, y2), dim=1)


def valid_box_mask(boxes: torch.Tensor, min_size: float = 1e-3) -> torch.Tensor:
    """幅と高さがともに min_size を超えるボックス"""
    return ((boxes[:, 2] - boxes[:, 0]) > min_size) & ((boxes[:, 3] - boxes[:, 1]) > min_size)


def encode_deltas(anchor: BoundingBox, target: BoundingBox) -> Deltas:
    """anchor に対する target の回帰目標"""
    d = encode_boxes(boxes_to_tensor([anchor]), boxes_to_tensor([target]))[0]
    return tuple(float(v) for v in d.tolist())


def decode_deltas(
    anchor: BoundingBox,
    deltas: Sequence[float],
    clip: Optional[Tuple[float, float]] = None,
    max_log_scale: Optional[float] = None,
) -> BoundingBox:
    """デルタからボックスを復元する

    Args:
        anchor: 基準ボックス
        deltas: (dx, dy, dw, dh)
        clip: (width, height) を与えると結果を ``[0, width] x [0, height]`` に収める
        max_log_scale: dw, dh の上限

    Raises:
        DataValidationError: デルタが有限でない、またはクリップ後にボックスが潰れた場合
    """
    if len(deltas) != 4 or not all(math.isfinite(float(d)) for d in deltas):
        raise DataValidationError("Deltas must be four finite numbers", details={"deltas": tuple(deltas)})
    out = decode_boxes(
        boxes_to_tensor([anchor]),
        torch.tensor([list(deltas)], dtype=torch.float64),
        max_log_scale=max_log_scale,
    )
    if clip is not None:
        out = clip_boxes(out, clip[0], clip[1])
    return BoundingBox.from_sequence(out[0].tolist())
