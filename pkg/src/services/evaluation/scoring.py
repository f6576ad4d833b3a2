"""AP / mAP@0.5 / 綱レベル / ACA などの指標

すべて numpy で計算します。AP は全点補間（適合率の右側最大包絡線を再現率の刻みで積分）です。
"""

from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.core.constants import MATCH_IOU
from src.core.exceptions import ConfigurationError, EvaluationError
from src.domain.models.detection import Detection, DetectionMatch, LabeledBox, MatchResult, ScoredBox
from src.domain.models.taxonomy import Taxonomy
from src.services.evaluation.matching import match_detections, score_order
from src.services.taxonomy import genus_to_class, roll_up_labels

Dets = Mapping[str, Sequence[ScoredBox]]
Gts = Mapping[str, Sequence[LabeledBox]]

LEVELS = ("genus", "class")


def average_precision(matches: Sequence[DetectionMatch], num_gt: int) -> Optional[float]:
    """1 ラベル分の AP（正解が 0 件なら None）

    予測はスコア降順（同点は入力順）に並べ、累積 TP から適合率と再現率を作ります。
    """
    if num_gt == 0:
        return None
    if not matches:
        return 0.0
    order = score_order([m.score for m in matches])
    tp = np.array([matches[i].is_tp for i in order], dtype=np.float64)
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(tp) + 1, dtype=np.float64)
    recall = cum_tp / float(num_gt)

    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.clip(np.sum(steps * envelope), 0.0, 1.0))


def label_aps(result: MatchResult, labels: Optional[Iterable[str]] = None) -> Dict[str, Optional[float]]:
    """ラベルごとの AP（labels 省略時は照合結果に現れるラベル）"""
    labels = list(labels) if labels is not None else list(result.labels())
    return {label: average_precision(result.for_label(label), result.num_gt(label)) for label in labels}


def mean_ap(aps: Mapping[str, Optional[float]]) -> float:
    """定義された AP の平均

    Raises:
        EvaluationError: 正解を持つラベルが一つもない
    """
    defined = [ap for ap in aps.values() if ap is not None]
    if not defined:
        raise EvaluationError("No label has ground truth; mAP is undefined")
    return float(np.mean(defined))


def map_at_50(dets: Dets, gts: Gts, labels: Optional[Iterable[str]] = None, iou_threshold: float = MATCH_IOU) -> float:
    """mAP@0.5（正解を持つラベルの AP の非加重平均）

    Raises:
        EvaluationError: 正解を持つラベルが一つもない
    """
    return mean_ap(label_aps(match_detections(dets, gts, iou_threshold), labels))


def roll_up_dets(dets: Dets, taxonomy: Taxonomy) -> Dict[str, List[ScoredBox]]:
    return {image_id: roll_up_labels(list(items), taxonomy) for image_id, items in dets.items()}


def roll_up_gts(gts: Gts, taxonomy: Taxonomy) -> Dict[str, List[LabeledBox]]:
    return {image_id: roll_up_labels(list(items), taxonomy) for image_id, items in gts.items()}


def class_level_scores(
    dets: Dets,
    gts: Gts,
    taxonomy: Taxonomy,
    iou_threshold: float = MATCH_IOU,
) -> Tuple[Dict[str, Optional[float]], float]:
    """属ラベルを綱へ畳み込んでから同じ照合で評価する

    Returns:
        (綱ごとの AP, 綱レベル mAP)

    Raises:
        TaxonomyLookupError: 未知の属
        EvaluationError: 正解を持つ綱が一つもない
    """
    result = match_detections(roll_up_dets(dets, taxonomy), roll_up_gts(gts, taxonomy), iou_threshold)
    aps = label_aps(result, taxonomy.classes)
    return aps, mean_ap(aps)


def _level_label(label: str, level: str, taxonomy: Optional[Taxonomy]) -> str:
    if level == "genus":
        return label
    if taxonomy is None:
        raise ConfigurationError("Class-level scoring needs a taxonomy")
    return genus_to_class(taxonomy, label)


def matched_pairs(
    dets: Dets,
    gts: Gts,
    iou_threshold: float = MATCH_IOU,
) -> List[Tuple[str, str]]:
    """ラベルを無視して位置だけで照合し、(正解ラベル, 予測ラベル) の組を返す"""
    result = match_detections(dets, gts, iou_threshold, ignore_labels=True)
    pairs = []
    for m in result.matches:
        if m.is_tp:
            pairs.append((result.gt_labels[m.image_id][m.gt_index], m.label))
    return pairs


def per_label_accuracy(
    dets: Dets,
    gts: Gts,
    iou_threshold: float = MATCH_IOU,
    level: str = "genus",
    taxonomy: Optional[Taxonomy] = None,
) -> Dict[str, float]:
    """正解ラベルごとの分類正解率（位置で照合できた組だけが対象）

    level="class" では正解と予測の属をどちらも綱へ畳み込みます。
    照合できた組が無いラベルは含まれません。
    """
    if level not in LEVELS:
        raise ConfigurationError("Unknown level", details={"level": level})
    totals: Dict[str, int] = {}
    correct: Dict[str, int] = {}
    for truth, predicted in matched_pairs(dets, gts, iou_threshold):
        truth = _level_label(truth, level, taxonomy)
        predicted = _level_label(predicted, level, taxonomy)
        totals[truth] = totals.get(truth, 0) + 1
        correct[truth] = correct.get(truth, 0) + int(truth == predicted)
    return {label: correct[label] / totals[label] for label in totals}


def aca(
    dets: Dets,
    gts: Gts,
    iou_threshold: float = MATCH_IOU,
    level: str = "genus",
    taxonomy: Optional[Taxonomy] = None,
) -> Optional[float]:
    """平均分類正解率（ラベルごとの正解率のマクロ平均、照合が無ければ None）"""
    accuracies = per_label_accuracy(dets, gts, iou_threshold, level, taxonomy)
    if not accuracies:
        return None
    return float(np.mean(list(accuracies.values())))


def instance_percentages(gts: Gts, labels: Sequence[str]) -> Dict[str, float]:
    """テスト集合でのラベルごとのインスタンス割合（%、合計 100。正解が無ければすべて 0）"""
    counts = {label: 0 for label in labels}
    for items in gts.values():
        for item in items:
            if item.label in counts:
                counts[item.label] += 1
    total = sum(counts.values())
    if total == 0:
        return {label: 0.0 for label in labels}
    return {label: 100.0 * count / total for label, count in counts.items()}


def hierarchy_consistency(detections: Iterable[Detection], taxonomy: Taxonomy) -> Optional[float]:
    """予測属の綱と Branch-3 の予測綱が一致する検出の割合（class_name の無い検出は除外）"""
    checked = 0
    agree = 0
    for det in detections:
        if det.class_name is None:
            continue
        checked += 1
        agree += int(genus_to_class(taxonomy, det.genus) == det.class_name)
    if checked == 0:
        return None
    return agree / checked
