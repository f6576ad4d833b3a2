"""領域段: RoIAlign → 2 層 MLP（次元 m）→ 属ヘッド / 回帰ヘッド / 綱ヘッド

綱ヘッド（Branch-3）は属ヘッドと同じ m 次元の特徴を入力に取ります。
生成順を最後にしているので、Branch-3 の有無で他の層の初期値は変わりません。
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn
from torchvision.models.detection._utils import BalancedPositiveNegativeSampler
from torchvision.models.detection.faster_rcnn import TwoMLPHead
from torchvision.ops import MultiScaleRoIAlign

from src.core.constants import MATCH_IOU
from src.domain.models.detector import ModelConfig
from src.domain.models.taxonomy import Taxonomy
from src.infrastructure.geometry import box_iou, encode_boxes
from src.models.losses import RegionTargets, RoIOutputs


def class_lookup(taxonomy: Taxonomy) -> torch.Tensor:
    """1 始まりの属ラベル → 1 始まりの綱ラベル（0 → 0）"""
    return torch.tensor([0] + [c + 1 for c in taxonomy.genus_class_indices()], dtype=torch.long)


def assign_targets(
    proposals: torch.Tensor,
    gt_boxes: torch.Tensor,
    gt_genus: torch.Tensor,
    taxonomy: Union[Taxonomy, torch.Tensor],
    iou_threshold: float = MATCH_IOU,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """提案ごとの教師（属・綱・対応 GT）

    IoU ≥ iou_threshold の提案は最大 IoU の GT（同点は小さいインデックス）に
    対応づけ、それ以外は両ヘッドとも背景にします。綱ラベルは常に属ラベルから
    タクソノミーで導くので、正例の属と綱は必ず整合します。

    Args:
        proposals: (R, 4)
        gt_boxes: (N, 4)
        gt_genus: (N,) 1 始まりの属ラベル
        taxonomy: タクソノミー、または class_lookup() の結果

    Returns:
        (genus_labels, class_labels, matched_gt)。背景は 0 / 0 / -1
    """
    lookup = class_lookup(taxonomy) if isinstance(taxonomy, Taxonomy) else taxonomy
    lookup = lookup.to(proposals.device)
    r = proposals.shape[0]
    if gt_boxes.shape[0] == 0 or r == 0:
        zeros = torch.zeros(r, dtype=torch.long, device=proposals.device)
        return zeros, zeros.clone(), torch.full((r,), -1, dtype=torch.long, device=proposals.device)

    ious = box_iou(proposals, gt_boxes.to(proposals.dtype))
    # torch.max は最大値が複数あるとき最初のインデックスを返す
    best, matched = ious.max(dim=1)
    positive = best >= iou_threshold
    genus = torch.where(positive, gt_genus.to(proposals.device)[matched], torch.zeros_like(matched))
    matched = torch.where(positive, matched, torch.full_like(matched, -1))
    return genus, lookup[genus], matched


class RoIHeads(nn.Module):
    def __init__(
        self,
        config: ModelConfig,
        in_channels: int,
        feature_names: Sequence[str],
        lookup: torch.Tensor,
    ):
        super().__init__()
        self.config = config
        size = config.roi_pool_size
        m = config.roi_feature_dim
        self.roi_align = MultiScaleRoIAlign(
            featmap_names=list(feature_names),
            output_size=size,
            sampling_ratio=config.roi_sampling_ratio,
        )
        self.box_head = TwoMLPHead(in_channels * size * size, m)
        self.genus_predictor = nn.Linear(m, config.num_genera + 1)
        self.box_predictor = nn.Linear(m, 4)
        self.class_predictor: Optional[nn.Linear] = (
            nn.Linear(m, config.num_classes + 1) if config.class_branch else None
        )
        self.sampler = BalancedPositiveNegativeSampler(
            config.roi_batch_size_per_image, config.roi_positive_fraction
        )
        self.register_buffer("lookup", lookup.clone(), persistent=False)

    def select_training_samples(
        self,
        proposals: List[torch.Tensor],
        targets: List[Dict[str, torch.Tensor]],
    ) -> Tuple[List[torch.Tensor], RegionTargets]:
        """GT を提案に加え、対応づけ、正負をサンプルする"""
        sampled_props = []
        genus_all, class_all, reg_all, matched_all = [], [], [], []
        labels_per_image = []
        candidates = []
        for props, target in zip(proposals, targets):
            gt_boxes = target["boxes"].to(props.dtype)
            props = torch.cat([props, gt_boxes])
            genus, cls, matched = assign_targets(
                props, gt_boxes, target["labels"], self.lookup, self.config.roi_fg_iou
            )
            candidates.append((props, gt_boxes, genus, cls, matched))
            labels_per_image.append(genus)

        pos_masks, neg_masks = self.sampler(labels_per_image)
        for (props, gt_boxes, genus, cls, matched), pos, neg in zip(candidates, pos_masks, neg_masks):
            keep = torch.where(pos.bool() | neg.bool())[0]
            props, genus, cls, matched = props[keep], genus[keep], cls[keep], matched[keep]
            reg = torch.zeros_like(props)
            fg = matched >= 0
            if bool(fg.any()):
                reg[fg] = encode_boxes(props[fg], gt_boxes[matched[fg]], self.config.box_weights)
            sampled_props.append(props)
            genus_all.append(genus)
            class_all.append(cls)
            reg_all.append(reg)
            matched_all.append(matched)

        return sampled_props, RegionTargets(
            genus_labels=torch.cat(genus_all),
            class_labels=torch.cat(class_all),
            regression_targets=torch.cat(reg_all),
            matched_gt=torch.cat(matched_all),
        )

    def forward(
        self,
        features: Dict[str, torch.Tensor],
        proposals: List[torch.Tensor],
        image_sizes: List[Tuple[int, int]],
        targets: Optional[List[Dict[str, torch.Tensor]]] = None,
    ) -> Tuple[RoIOutputs, Optional[RegionTargets], List[torch.Tensor]]:
        region_targets = None
        if targets is not None:
            proposals, region_targets = self.select_training_samples(proposals, targets)

        pooled = self.roi_align(features, proposals, image_sizes)
        shared = self.box_head(pooled)
        outputs = RoIOutputs(
            box_deltas=self.box_predictor(shared),
            genus_logits=self.genus_predictor(shared),
            class_logits=self.class_predictor(shared) if self.class_predictor is not None else None,
        )
        return outputs, region_targets, proposals
