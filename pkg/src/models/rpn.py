"""提案段（torchvision の RegionProposalNetwork + 独自のアンカー配置）"""

from typing import List

import torch
from torch import nn
from torchvision.models.detection.image_list import ImageList
from torchvision.models.detection.rpn import RegionProposalNetwork, RPNHead

from src.domain.models.detector import ModelConfig
from src.domain.models.geometry import AnchorGrid
from src.infrastructure.geometry import grid_anchors


class GridAnchorGenerator(nn.Module):
    """AnchorGrid から各画像のアンカーを作る

    並びは (level, row, col, ratio) で、RPN ヘッドの出力の平坦化順と一致します。
    """

    def __init__(self, grid: AnchorGrid):
        super().__init__()
        self.grid = grid

    def num_anchors_per_location(self) -> List[int]:
        return [self.grid.anchors_per_location] * self.grid.num_levels

    def forward(self, image_list: ImageList, feature_maps: List[torch.Tensor]) -> List[torch.Tensor]:
        sizes = [(int(f.shape[-2]), int(f.shape[-1])) for f in feature_maps]
        ref = feature_maps[0]
        anchors = torch.cat(grid_anchors(self.grid, sizes, dtype=ref.dtype, device=ref.device))
        return [anchors for _ in image_list.image_sizes]


def build_rpn(config: ModelConfig, in_channels: int) -> RegionProposalNetwork:
    """正例 IoU ≥ rpn_fg_iou、負例 IoU < rpn_bg_iou の提案段を組み立てる"""
    grid = config.anchor_grid
    return RegionProposalNetwork(
        anchor_generator=GridAnchorGenerator(grid),
        head=RPNHead(in_channels, grid.anchors_per_location),
        fg_iou_thresh=config.rpn_fg_iou,
        bg_iou_thresh=config.rpn_bg_iou,
        batch_size_per_image=config.rpn_batch_size_per_image,
        positive_fraction=config.rpn_positive_fraction,
        pre_nms_top_n=dict(training=config.rpn_pre_nms_top_n_train, testing=config.rpn_pre_nms_top_n_test),
        post_nms_top_n=dict(training=config.rpn_post_nms_top_n_train, testing=config.rpn_post_nms_top_n_test),
        nms_thresh=config.rpn_nms_iou,
    )
