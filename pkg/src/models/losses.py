"""L_total = L_box + L_genus + λ·L_cls

L_box は提案段の objectness + 提案段の回帰 + 領域段の回帰の和です。
合成は float64 で行い、恒等式の誤差を丸めで壊さないようにしています。
"""

from dataclasses import dataclass
import math
from typing import Dict, Optional

import torch
import torch.nn.functional as F

from src.core.exceptions import DataValidationError, NumericError
from src.domain.models.detector import LossBreakdown, LossWeights

# 領域段の回帰に使う smooth-L1 の beta
SMOOTH_L1_BETA = 1.0 / 9.0

RPN_LOSS_KEYS = ("loss_objectness", "loss_rpn_box_reg")


@dataclass
class RoIOutputs:
    """領域ごとの生出力

    Attributes:
        box_deltas: (R, 4) クラス非依存の回帰量
        genus_logits: (R, num_genera + 1)、列 0 が背景
        class_logits: (R, 7)、列 0 が背景。Branch-3 が無い構成では None
    """
    box_deltas: torch.Tensor
    genus_logits: torch.Tensor
    class_logits: Optional[torch.Tensor] = None

    @property
    def num_regions(self) -> int:
        return int(self.genus_logits.shape[0])


@dataclass
class RegionTargets:
    """サンプルされた領域の教師

    Attributes:
        genus_labels: (R,) 1 始まりの属、0 は背景
        class_labels: (R,) 1 始まりの綱、0 は背景
        regression_targets: (R, 4) 符号化済みの回帰目標（背景行は 0）
        matched_gt: (R,) 対応する GT のインデックス、背景は -1
    """
    genus_labels: torch.Tensor
    class_labels: torch.Tensor
    regression_targets: torch.Tensor
    matched_gt: torch.Tensor

    @property
    def positive(self) -> torch.Tensor:
        return self.genus_labels > 0


@dataclass
class LossTerms:
    """微分可能な損失成分（l_total は float64）"""
    l_box: torch.Tensor
    l_genus: torch.Tensor
    l_cls: torch.Tensor
    l_total: torch.Tensor
    lam: float

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            l_box=float(self.l_box.item()),
            l_genus=float(self.l_genus.item()),
            l_cls=float(self.l_cls.item()),
            l_total=float(self.l_total.item()),
            lam=self.lam,
        )


def cross_entropy(logits: torch.Tensor, target) -> torch.Tensor:
    """−log softmax(logits)[target]（2 次元入力なら行平均）

    Raises:
        DataValidationError: target が範囲外
    """
    single = logits.dim() == 1
    if single:
        logits = logits.unsqueeze(0)
    target = torch.as_tensor(target, dtype=torch.long, device=logits.device).reshape(-1)
    n = logits.shape[-1]
    if target.shape[0] != logits.shape[0]:
        raise DataValidationError(
            "Target count does not match logits",
            details={"logits": logits.shape[0], "targets": target.shape[0]}
        )
    invalid = (target < 0) | (target >= n)
    if bool(invalid.any()):
        raise DataValidationError(
            "Cross-entropy target index out of range",
            details={"num_logits": n, "targets": target[invalid].tolist()[:10]}
        )
    return F.cross_entropy(logits, target)


def combine_losses(
    l_box: torch.Tensor,
    l_genus: torch.Tensor,
    l_cls: torch.Tensor,
    lam: float,
) -> torch.Tensor:
    # λ = 0 では L_cls をグラフに繋がず、分類ヘッドの勾配は None のまま
    if lam == 0.0:
        return l_box.double() + l_genus.double()
    return l_box.double() + l_genus.double() + lam * l_cls.double()


def _check_finite(terms: Dict[str, torch.Tensor]) -> None:
    values = {k: float(v.detach().item()) for k, v in terms.items()}
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NumericError("Non-finite loss", details={"components": values, "non_finite": sorted(bad)})


def compute_loss(
    outputs: RoIOutputs,
    targets: RegionTargets,
    weights: LossWeights,
    rpn_losses: Optional[Dict[str, torch.Tensor]] = None,
) -> LossTerms:
    """サンプル領域の出力と教師から損失を合成する

    L_genus と L_cls は同じ領域集合での交差エントロピーの平均、
    領域段の回帰は正例の smooth-L1 の和をサンプル数で割ったものです。

    Raises:
        NumericError: いずれかの成分が有限でない
    """
    rpn_losses = rpn_losses or {}
    zero = outputs.genus_logits.sum() * 0.0
    r = outputs.num_regions

    if r == 0:
        l_genus = zero
        l_roi_box = zero
        l_cls = zero if outputs.class_logits is None else outputs.class_logits.sum() * 0.0
    else:
        l_genus = cross_entropy(outputs.genus_logits, targets.genus_labels)
        pos = torch.where(targets.positive)[0]
        l_roi_box = F.smooth_l1_loss(
            outputs.box_deltas[pos],
            targets.regression_targets[pos].to(outputs.box_deltas.dtype),
            beta=SMOOTH_L1_BETA,
            reduction="sum",
        ) / r
        if outputs.class_logits is None:
            l_cls = zero
        else:
            l_cls = cross_entropy(outputs.class_logits, targets.class_labels)

    l_box = l_roi_box
    for key in RPN_LOSS_KEYS:
        if key in rpn_losses:
            l_box = l_box + rpn_losses[key].to(l_box.dtype)

    _check_finite({"l_box": l_box, "l_genus": l_genus, "l_cls": l_cls})
    l_total = combine_losses(l_box, l_genus, l_cls, weights.lam)
    return LossTerms(l_box=l_box, l_genus=l_genus, l_cls=l_cls, l_total=l_total, lam=weights.lam)
