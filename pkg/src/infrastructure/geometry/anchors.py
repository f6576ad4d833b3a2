"""アンカー形状とタイリング"""

import math
from typing import List, Sequence, Tuple

import torch

from src.core.exceptions import DataValidationError
from src.domain.models.geometry import AnchorGrid, BoundingBox


def make_anchor_shapes(size: float, ratios: Sequence[float]) -> List[Tuple[float, float]]:
    """面積 size² を保ったまま height/width = ratio となる (width, height) の列

    w = size / √ratio, h = size · √ratio
    """
    if not (size > 0) or not math.isfinite(size):
        raise DataValidationError("Anchor size must be positive", details={"size": size})
    if any(not (r > 0) or not math.isfinite(r) for r in ratios):
        raise DataValidationError("Anchor ratios must be positive", details={"ratios": list(ratios)})
    return [(size / math.sqrt(r), size * math.sqrt(r)) for r in ratios]


def _level_anchors(
    size: float,
    ratios: Sequence[float],
    stride: int,
    height: int,
    width: int,
    dtype: torch.dtype,
    device: torch.device,
) -> torch.Tensor:
    shapes = torch.tensor(make_anchor_shapes(size, ratios), dtype=dtype, device=device)
    half = 0.5 * shapes
    base = torch.cat((-half, half), dim=1)  # (A, 4)

    ys = (torch.arange(height, dtype=dtype, device=device) + 0.5) * stride
    xs = (torch.arange(width, dtype=dtype, device=device) + 0.5) * stride
    cy, cx = torch.meshgrid(ys, xs, indexing="ij")
    centers = torch.stack((cx, cy, cx, cy), dim=-1).reshape(-1, 1, 4)  # 行優先
    return (centers + base.unsqueeze(0)).reshape(-1, 4)


def grid_anchors(
    grid: AnchorGrid,
    feature_sizes: Sequence[Tuple[int, int]],
    dtype: torch.dtype = torch.float32,
    device: torch.device = torch.device("cpu"),
) -> List[torch.Tensor]:
    """レベルごとのアンカー (H·W·|ratios|, 4)

    並び順は (row, col, ratio)。各アンカーはストライド格子のセル中心に置かれます。
    """
    if len(feature_sizes) != grid.num_levels:
        raise DataValidationError(
            "Feature map count does not match anchor levels",
            details={"levels": grid.num_levels, "feature_maps": len(feature_sizes)}
        )
    out = []
    for (h, w), size, stride in zip(feature_sizes, grid.sizes, grid.strides):
        if h <= 0 or w <= 0:
            raise DataValidationError("Feature map dims must be positive", details={"dims": (h, w)})
        out.append(_level_anchors(size, grid.ratios, stride, h, w, dtype, device))
    return out


def tile_anchors(grid: AnchorGrid, feature_sizes: Sequence[Tuple[int, int]]) -> List[BoundingBox]:
    """全レベルのアンカーを (level, row, col, ratio) 順に並べる"""
    anchors = grid_anchors(grid, feature_sizes, dtype=torch.float64)
    return [BoundingBox.from_sequence(row) for level in anchors for row in level.tolist()]
