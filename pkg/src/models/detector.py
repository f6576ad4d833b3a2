"""三分岐検出器（バックボーン + FPN → 提案段 → 属 / 回帰 / 綱）"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torchvision.models.detection.image_list import ImageList

from src.core.constants import NMS_IOU, SCORE_FLOOR
from src.core.exceptions import ConfigurationError
from src.core.factory import BackboneFactory
from src.domain.models.detection import Detection
from src.domain.models.detector import LossWeights, ModelConfig
from src.domain.models.geometry import BoundingBox
from src.domain.models.taxonomy import Taxonomy
from src.infrastructure.geometry import batched_nms, clip_boxes, decode_boxes, valid_box_mask
from src.models.losses import LossTerms, RegionTargets, RoIOutputs, compute_loss
from src.models.postprocess import foreground_probs, hierarchical_rescore, roll_up_probs
from src.models.roi_heads import RoIHeads, class_lookup
from src.models.rpn import build_rpn
from src.services.taxonomy import taxonomy_fingerprint


@dataclass
class DetectorOutput:
    """forward の結果

    学習モードでは outputs はサンプルされた領域に対するもので、
    region_targets と rpn_losses が入ります。推論モードでは全提案に対する出力です。
    """
    proposals: List[torch.Tensor]
    outputs: RoIOutputs
    region_targets: Optional[RegionTargets] = None
    rpn_losses: Dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def proposal_counts(self) -> List[int]:
        return [int(p.shape[0]) for p in self.proposals]


class AlgaeDetector(nn.Module):
    """属・ボックス・綱を同時に出す 2 段検出器

    Example:
        >>> model = AlgaeDetector(ModelConfig.desk(taxonomy.num_genera), taxonomy)
        >>> out = model(images, targets)
        >>> terms = model.compute_loss(out, LossWeights(lam=0.2))
    """

    def __init__(self, config: ModelConfig, taxonomy: Taxonomy):
        super().__init__()
        if config.num_genera != taxonomy.num_genera:
            raise ConfigurationError(
                "ModelConfig.num_genera does not match the taxonomy",
                details={"num_genera": config.num_genera, "taxonomy_genera": taxonomy.num_genera}
            )
        self.config = config
        self.taxonomy = taxonomy
        self.fingerprint = taxonomy_fingerprint(taxonomy)
        self.backbone = BackboneFactory.create(config)
        self.rpn = build_rpn(config, self.backbone.out_channels)
        self.roi_heads = RoIHeads(
            config,
            self.backbone.out_channels,
            self.backbone.roi_feature_names,
            class_lookup(taxonomy),
        )
        self.register_buffer(
            "genus_class_index",
            torch.tensor(taxonomy.genus_class_indices(), dtype=torch.long),
            persistent=False,
        )

    def _check_input(self, images: torch.Tensor) -> None:
        size = self.config.image_size
        if images.dim() != 4 or images.shape[1] != 3 or tuple(images.shape[-2:]) != (size, size):
            raise ConfigurationError(
                "Input does not match the model configuration",
                details={"shape": list(images.shape), "expected": [None, 3, size, size]}
            )

    def forward(
        self,
        images: torch.Tensor,
        targets: Optional[List[Dict[str, torch.Tensor]]] = None,
    ) -> DetectorOutput:
        """(B, 3, S, S) の標準化済み画像 → 提案と領域ごとの生出力

        Args:
            images: 標準化済み画像
            targets: 学習時の教師（"boxes": (N, 4)、"labels": (N,) 1 始まりの属）

        Raises:
            ConfigurationError: 入力の形状が設定と合わない、または学習モードで targets が無い
        """
        self._check_input(images)
        if self.training and targets is None:
            raise ConfigurationError("targets are required in training mode")
        image_sizes = [(int(images.shape[-2]), int(images.shape[-1]))] * images.shape[0]
        image_list = ImageList(images, image_sizes)
        features = self.backbone(images)

        rpn_targets = None
        if self.training:
            rpn_targets = [{"boxes": t["boxes"].to(images.dtype)} for t in targets]
        proposals, rpn_losses = self.rpn(image_list, features, rpn_targets)

        roi_features = {name: features[name] for name in self.backbone.roi_feature_names}
        outputs, region_targets, proposals = self.roi_heads(
            roi_features,
            proposals,
            image_sizes,
            targets if self.training else None,
        )
        return DetectorOutput(
            proposals=proposals,
            outputs=outputs,
            region_targets=region_targets,
            rpn_losses=rpn_losses,
        )

    def compute_loss(self, output: DetectorOutput, weights: LossWeights) -> LossTerms:
        if output.region_targets is None:
            raise ConfigurationError("Loss requires a training-mode forward pass")
        return compute_loss(output.outputs, output.region_targets, weights, output.rpn_losses)

    @torch.no_grad()
    def predict(
        self,
        images: torch.Tensor,
        original_sizes: Optional[Sequence[Tuple[int, int]]] = None,
        score_floor: float = SCORE_FLOOR,
        nms_iou: float = NMS_IOU,
        hierarchy_alpha: float = 0.0,
    ) -> List[List[Detection]]:
        """画像ごとの検出（confidence の降順）

        Args:
            images: (B, 3, S, S) の標準化済み画像
            original_sizes: 元画像の (width, height)。座標はこのサイズへ戻す
            score_floor: これ未満の confidence は捨てる
            nms_iou: 属ごとの NMS の閾値
            hierarchy_alpha: hierarchical_rescore の指数（0 なら無効）
        """
        was_training = self.training
        self.eval()
        try:
            output = self.forward(images)
        finally:
            self.train(was_training)

        size = self.config.image_size
        original_sizes = list(original_sizes or [(size, size)] * images.shape[0])
        results = []
        start = 0
        for props, (width, height) in zip(output.proposals, original_sizes):
            n = int(props.shape[0])
            sl = slice(start, start + n)
            start += n
            class_logits = output.outputs.class_logits
            results.append(self._postprocess(
                props,
                output.outputs.box_deltas[sl],
                output.outputs.genus_logits[sl],
                class_logits[sl] if class_logits is not None else None,
                (width, height),
                score_floor,
                nms_iou,
                hierarchy_alpha,
            ))
        return results

    def _postprocess(
        self,
        proposals: torch.Tensor,
        deltas: torch.Tensor,
        genus_logits: torch.Tensor,
        class_logits: Optional[torch.Tensor],
        original_size: Tuple[int, int],
        score_floor: float,
        nms_iou: float,
        hierarchy_alpha: float,
    ) -> List[Detection]:
        if proposals.shape[0] == 0:
            return []
        size = self.config.image_size
        background = torch.softmax(genus_logits.double(), dim=-1)[:, 0]
        genus_probs = foreground_probs(genus_logits)
        if class_logits is not None:
            class_probs = foreground_probs(class_logits)
        else:
            class_probs = roll_up_probs(genus_probs, self.genus_class_index, self.config.num_classes)
        genus_probs = hierarchical_rescore(genus_probs, class_probs, self.genus_class_index, hierarchy_alpha)

        scores, labels = (genus_probs * (1.0 - background)[:, None]).max(dim=1)
        boxes = decode_boxes(proposals.double(), deltas.double(), self.config.box_weights)
        boxes = clip_boxes(boxes, size, size)

        keep = torch.where((scores >= score_floor) & valid_box_mask(boxes))[0]
        boxes, scores, labels = boxes[keep], scores[keep], labels[keep]
        genus_probs, class_probs = genus_probs[keep], class_probs[keep]
        kept = batched_nms(boxes, scores, labels, nms_iou)[: self.config.detections_per_image]

        width, height = original_size
        scale = torch.tensor([width / size, height / size, width / size, height / size], dtype=torch.float64)
        mapped = clip_boxes(boxes[kept] * scale, width, height)
        detections = []
        for row, i in enumerate(kept.tolist()):
            box = mapped[row]
            if not bool(valid_box_mask(box[None])[0]):
                continue
            class_row = class_probs[i]
            detections.append(Detection(
                box=BoundingBox.from_sequence(box.tolist()),
                genus=self.taxonomy.genera[int(labels[i])],
                confidence=min(1.0, max(0.0, float(scores[i]))),
                genus_scores=tuple(genus_probs[i].tolist()),
                class_scores=tuple(class_row.tolist()),
                class_name=self.taxonomy.classes[int(class_row.argmax())],
            ))
        return detections
