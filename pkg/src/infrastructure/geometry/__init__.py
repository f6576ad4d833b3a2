"""ボックス演算ライブラリ"""

from src.infrastructure.geometry.anchors import grid_anchors, make_anchor_shapes, tile_anchors
from src.infrastructure.geometry.boxes import (
    box_iou,
    boxes_to_tensor,
    clip_boxes,
    decode_boxes,
    decode_deltas,
    encode_boxes,
    encode_deltas,
    iou,
    valid_box_mask,
)
from src.infrastructure.geometry.nms import batched_nms, nms, nms_tensor

__all__ = [
    "grid_anchors",
    "make_anchor_shapes",
    "tile_anchors",
    "box_iou",
    "boxes_to_tensor",
    "clip_boxes",
    "decode_boxes",
    "decode_deltas",
    "encode_boxes",
    "encode_deltas",
    "iou",
    "valid_box_mask",
    "batched_nms",
    "nms",
    "nms_tensor",
]
