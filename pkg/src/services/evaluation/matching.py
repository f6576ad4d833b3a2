"""予測と正解の貪欲照合"""

from typing import Dict, List, Mapping, Sequence

from src.core.constants import MATCH_IOU
from src.domain.models.detection import DetectionMatch, LabeledBox, MatchResult, ScoredBox
from src.infrastructure.geometry import box_iou, boxes_to_tensor


def score_order(scores: Sequence[float]) -> List[int]:
    """スコア降順、同点は入力順"""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def _match_image(
    image_id: str,
    dets: Sequence[ScoredBox],
    gts: Sequence[LabeledBox],
    iou_threshold: float,
    ignore_labels: bool,
):
    matched = [False] * len(gts)
    flags: Dict[int, DetectionMatch] = {}
    ious = box_iou(boxes_to_tensor([d.box for d in dets]), boxes_to_tensor([g.box for g in gts]))
    for i in score_order([d.score for d in dets]):
        det = dets[i]
        best_iou, best_j = -1.0, None
        for j, gt in enumerate(gts):
            if not ignore_labels and gt.label != det.label:
                continue
            value = float(ious[i, j])
            # 同じ IoU なら小さいインデックスを残す
            if value > best_iou:
                best_iou, best_j = value, j
        is_tp = best_j is not None and best_iou >= iou_threshold and not matched[best_j]
        if is_tp:
            matched[best_j] = True
        flags[i] = DetectionMatch(
            image_id=image_id,
            det_index=i,
            label=det.label,
            score=det.score,
            is_tp=is_tp,
            gt_index=best_j if is_tp else None,
        )
    return [flags[i] for i in range(len(dets))], tuple(matched)


def match_detections(
    dets: Mapping[str, Sequence[ScoredBox]],
    gts: Mapping[str, Sequence[LabeledBox]],
    iou_threshold: float = MATCH_IOU,
    ignore_labels: bool = False,
) -> MatchResult:
    """画像ごとにスコア降順で貪欲に照合する

    予測は、同じラベルの正解のうち IoU 最大のもの（同点は小さいインデックス）が
    IoU ≥ 閾値かつ未照合のときに限り TP になります。ignore_labels=True では
    ラベルを無視して位置だけで照合します（ACA 用）。
    """
    image_ids = list(gts) + [i for i in dets if i not in gts]
    matches: List[DetectionMatch] = []
    gt_labels = {}
    gt_matched = {}
    for image_id in image_ids:
        image_gts = list(gts.get(image_id, ()))
        image_dets = list(dets.get(image_id, ()))
        flags, matched = _match_image(image_id, image_dets, image_gts, iou_threshold, ignore_labels)
        matches.extend(flags)
        gt_labels[image_id] = tuple(g.label for g in image_gts)
        gt_matched[image_id] = matched
    return MatchResult(
        matches=tuple(matches),
        gt_labels=gt_labels,
        gt_matched=gt_matched,
        iou_threshold=iou_threshold,
    )
