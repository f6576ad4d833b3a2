"""評価レポートの組み立てと出力

表は上位 ``cutoff`` ラベル（インスタンス割合の降順）を個別の行にし、
残りを "The rest N genera" の 1 行に、最後に Total 行を付けます。
"""

from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.constants import MATCH_IOU, REPORT_CUTOFF
from src.core.exceptions import ConfigurationError, EvaluationError, IngestionError
from src.core.logging_config import get_structured_logger
from src.domain.models.detection import Detection, LabeledBox, ScoredBox
from src.domain.models.evaluation import EvalReport, LabelScore
from src.domain.models.taxonomy import Taxonomy
from src.services.evaluation.matching import match_detections
from src.services.evaluation.scoring import (
    aca,
    class_level_scores,
    hierarchy_consistency,
    instance_percentages,
    label_aps,
    mean_ap,
    per_label_accuracy,
    roll_up_gts,
)

logger = get_structured_logger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
TABLE_COLUMNS = ["label", "ap", "instance_percentage", "num_gt", "accuracy"]


def _safe_map(aps: Mapping[str, Optional[float]]) -> Optional[float]:
    try:
        return mean_ap(aps)
    except EvaluationError:
        return None


def _rows(
    labels: Sequence[str],
    aps: Mapping[str, Optional[float]],
    gts: Mapping[str, Sequence[LabeledBox]],
    accuracy: Mapping[str, float],
) -> List[LabelScore]:
    percentages = instance_percentages(gts, labels)
    counts = {label: 0 for label in labels}
    for items in gts.values():
        for item in items:
            if item.label in counts:
                counts[item.label] += 1
    return [
        LabelScore(
            label=label,
            ap=aps.get(label),
            instance_percentage=percentages[label],
            num_gt=counts[label],
            accuracy=accuracy.get(label),
        )
        for label in labels
    ]


def build_report(
    detections: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[LabeledBox]],
    taxonomy: Taxonomy,
    iou_threshold: float = MATCH_IOU,
) -> EvalReport:
    """検出と正解から属・綱の二階層レポートを作る

    Raises:
        EvaluationError: テスト集合に正解が一つもない
        TaxonomyLookupError: 未知の属
    """
    if not any(len(items) for items in gts.values()):
        raise EvaluationError("Test set has no ground-truth instances", details={"images": len(gts)})
    dets: Dict[str, List[ScoredBox]] = {
        image_id: [d.as_scored() for d in items] for image_id, items in detections.items()
    }

    genus_aps = label_aps(match_detections(dets, gts, iou_threshold), taxonomy.genera)
    class_aps, map_class = class_level_scores(dets, gts, taxonomy, iou_threshold)

    genus_rows = _rows(taxonomy.genera, genus_aps, gts, per_label_accuracy(dets, gts, iou_threshold))
    class_rows = _rows(
        taxonomy.classes,
        class_aps,
        roll_up_gts(gts, taxonomy),
        per_label_accuracy(dets, gts, iou_threshold, level="class", taxonomy=taxonomy),
    )
    all_dets = [d for items in detections.values() for d in items]
    return EvalReport(
        genus_rows=genus_rows,
        class_rows=class_rows,
        map_genus=mean_ap(genus_aps),
        map_class=map_class,
        aca_genus=aca(dets, gts, iou_threshold),
        aca_class=aca(dets, gts, iou_threshold, level="class", taxonomy=taxonomy),
        hierarchy_consistency=hierarchy_consistency(all_dets, taxonomy),
        num_images=len(set(gts) | set(detections)),
        num_detections=len(all_dets),
        iou_threshold=iou_threshold,
    )


def rows_frame(rows: Sequence[LabelScore]) -> pd.DataFrame:
    """行を DataFrame にする（AP 未定義は NaN）"""
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=TABLE_COLUMNS)
    return frame.astype({"ap": "float64", "instance_percentage": "float64", "accuracy": "float64"})


def summary_table(report: EvalReport, level: str = "genus", cutoff: int = REPORT_CUTOFF) -> pd.DataFrame:
    """表示用の表（mAP% と Percentage%）

    上位 cutoff ラベルの行、"The rest N genera"（残りの AP の平均と割合の合計）、Total 行。
    """
    if level == "genus":
        rows, total_map, noun = report.genus_rows, report.map_genus, "genera"
    elif level == "class":
        rows, total_map, noun = report.class_rows, report.map_class, "classes"
    else:
        raise ConfigurationError("Unknown level", details={"level": level})
    if cutoff < 0:
        raise ConfigurationError("cutoff must be non-negative", details={"cutoff": cutoff})

    frame = rows_frame(rows)
    frame = frame.sort_values("instance_percentage", ascending=False, kind="stable")
    head = frame.head(cutoff)
    rest = frame.iloc[cutoff:]

    table = pd.DataFrame({
        "label": head["label"],
        "map_percent": head["ap"] * 100.0,
        "percentage": head["instance_percentage"],
    })
    extra = []
    if len(rest):
        rest_ap = rest["ap"].dropna()
        extra.append({
            "label": f"The rest {len(rest)} {noun}",
            "map_percent": float(rest_ap.mean() * 100.0) if len(rest_ap) else np.nan,
            "percentage": float(rest["instance_percentage"].sum()),
        })
    extra.append({
        "label": "Total",
        "map_percent": total_map * 100.0 if total_map is not None else np.nan,
        "percentage": float(frame["instance_percentage"].sum()),
    })
    return pd.concat([table, pd.DataFrame(extra)], ignore_index=True)


def format_report(report: EvalReport, cutoff: int = REPORT_CUTOFF) -> str:
    """人が読む形式のレポート"""
    lines = [
        f"mAP@{report.iou_threshold:g} genus: {_percent(report.map_genus)}  class: {_percent(report.map_class)}",
        f"ACA genus: {_percent(report.aca_genus)}  class: {_percent(report.aca_class)}",
        f"images: {report.num_images}  detections: {report.num_detections}",
    ]
    if report.hierarchy_consistency is not None:
        lines.append(f"hierarchy consistency: {_percent(report.hierarchy_consistency)}")
    for level in ("genus", "class"):
        table = summary_table(report, level, cutoff)
        lines.append("")
        lines.append(f"[{level}]")
        lines.append(table.to_string(index=False, float_format=lambda v: f"{v:.2f}", na_rep="-"))
    return "\n".join(lines) + "\n"


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{value * 100:.2f}%"


def emit_report(
    report: EvalReport,
    out_dir: Path,
    fmt: str = "both",
    cutoff: int = REPORT_CUTOFF,
) -> List[Path]:
    """レポートを書き出す

    fmt が "csv" なら eval_genus.csv / eval_class.csv（全ラベル、AP は 0〜1）と report.json、
    "text" なら report.txt、"both" なら両方。

    Raises:
        IngestionError: 書き込めない
    """
    if fmt not in ("csv", "text", "both"):
        raise ConfigurationError("Unknown report format", details={"format": fmt})
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            for level, rows in (("genus", report.genus_rows), ("class", report.class_rows)):
                path = out_dir / f"eval_{level}.csv"
                rows_frame(rows).to_csv(path, index=False, float_format="%.10g")
                written.append(path)
            path = out_dir / REPORT_JSON
            path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
            written.append(path)
        if fmt in ("text", "both"):
            path = out_dir / REPORT_TEXT
            path.write_text(format_report(report, cutoff), encoding="utf-8")
            written.append(path)
    except OSError as e:
        raise IngestionError("Report output not writable", details={"out_dir": str(out_dir)}, original_error=e)
    logger.info("Report written", out_dir=str(out_dir), files=[p.name for p in written])
    return written


def read_report_csv(path: Path) -> pd.DataFrame:
    """eval_*.csv を読み戻す（空の AP / accuracy は NaN）"""
    try:
        return pd.read_csv(path, keep_default_na=False, na_values=[""])
    except (OSError, pd.errors.ParserError) as e:
        raise IngestionError("Report CSV not readable", details={"path": str(path)}, original_error=e)


def load_report(path: Path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    try:
        return EvalReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IngestionError("Report not readable", details={"path": str(path)}, original_error=e)
