"""detections.jsonl の読み書き（1 行 1 検出、元画像のピクセル座標）"""

from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from pydantic import ValidationError

from src.core.exceptions import DataValidationError, IngestionError, TaxonomyLookupError
from src.domain.models.detection import Detection
from src.domain.models.geometry import BoundingBox
from src.domain.models.taxonomy import Taxonomy
from src.domain.schemas.records import DetectionRecord

DETECTIONS_FILE = "detections.jsonl"


def save_detections(path: Path, detections: Mapping[str, Sequence[Detection]]) -> Path:
    """検出を画像順に書き出す（綱は "class" キー）"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for image_id, items in detections.items():
                for det in items:
                    record = DetectionRecord(
                        image_id=image_id,
                        x1=det.box.x1,
                        y1=det.box.y1,
                        x2=det.box.x2,
                        y2=det.box.y2,
                        genus=det.genus,
                        confidence=det.confidence,
                        class_name=det.class_name,
                    )
                    f.write(record.model_dump_json(by_alias=True, exclude_none=True) + "\n")
    except OSError as e:
        raise IngestionError("Detections output not writable", details={"path": str(path)}, original_error=e)
    return path


def load_detections(
    path: Path,
    taxonomy: Optional[Taxonomy] = None,
    image_ids: Optional[Sequence[str]] = None,
) -> Dict[str, List[Detection]]:
    """detections.jsonl を読み込む

    Args:
        path: ファイル、または detections.jsonl を含むディレクトリ
        taxonomy: 指定すると属名を検証する
        image_ids: 指定すると、検出の無い画像も空リストで含める

    Raises:
        IngestionError: ファイルが無い、または行が不正（行番号付き）
        TaxonomyLookupError: タクソノミーに無い属
    """
    path = Path(path)
    if path.is_dir():
        path = path / DETECTIONS_FILE
    result: Dict[str, List[Detection]] = {i: [] for i in image_ids or ()}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = DetectionRecord.model_validate_json(line)
                    det = Detection(
                        box=BoundingBox(record.x1, record.y1, record.x2, record.y2),
                        genus=record.genus,
                        confidence=record.confidence,
                        class_name=record.class_name,
                    )
                except (ValidationError, DataValidationError) as e:
                    raise IngestionError(
                        "Malformed detection record",
                        details={"path": str(path), "line": line_no},
                        original_error=e
                    )
                if taxonomy is not None and det.genus not in taxonomy.genus_to_class:
                    raise TaxonomyLookupError(
                        "Detection names a genus outside the taxonomy",
                        details={"path": str(path), "line": line_no, "genus": det.genus}
                    )
                result.setdefault(record.image_id, []).append(det)
    except OSError as e:
        raise IngestionError("Detections file not readable", details={"path": str(path)}, original_error=e)
    return result
