"""Dataset Service - マニフェストの読み書き、分割、希少属マージの適用

マニフェストは 1 つのディレクトリで、``images/``（PNG）、``annotations.jsonl``
（1 行 1 画像）、``taxonomy.csv`` を含みます。座標は全て元画像のピクセルです。
"""

from dataclasses import dataclass
import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from src.core.constants import IMAGE_SIZE, RARE_GENUS_THRESHOLD
from src.core.exceptions import (
    DataValidationError,
    IngestionError,
    TaxonomyLookupError,
)
from src.core.logging_config import get_structured_logger
from src.domain.models.dataset import AnnotatedImage, DatasetSplit, Instance, NormalizationStats
from src.domain.models.geometry import BoundingBox
from src.domain.models.taxonomy import Taxonomy
from src.domain.schemas.records import AnnotationRecord, InstanceRecord
from src.infrastructure.imaging import probe_size
from src.services.data.transforms import compute_normalization_stats
from src.services.taxonomy import (
    census_from_instances,
    load_taxonomy,
    merge_rare_genera,
    save_taxonomy,
)

logger = get_structured_logger(__name__)

ANNOTATIONS_FILE = "annotations.jsonl"
TAXONOMY_FILE = "taxonomy.csv"
IMAGES_DIR = "images"


def _manifest_paths(path: Path) -> Tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        root = path
        annotations = path / ANNOTATIONS_FILE
    else:
        root = path.parent
        annotations = path
    return root, annotations


def _build_image(
    record: AnnotationRecord,
    root: Path,
    taxonomy: Taxonomy,
    check_files: bool,
) -> AnnotatedImage:
    instances = []
    for k, inst in enumerate(record.instances):
        if inst.genus not in taxonomy.genus_to_class:
            raise TaxonomyLookupError(
                "Annotation names a genus outside the taxonomy",
                details={"image_id": record.image_id, "instance": k, "genus": inst.genus}
            )
        try:
            box = BoundingBox(inst.x1, inst.y1, inst.x2, inst.y2)
        except DataValidationError as e:
            raise DataValidationError(
                "Invalid bounding box",
                details={"image_id": record.image_id, "instance": k, "box": (inst.x1, inst.y1, inst.x2, inst.y2)},
                original_error=e
            )
        instances.append(Instance(box=box, genus=inst.genus))

    file = root / record.file
    if check_files:
        width, height = probe_size(file)
        if (width, height) != (record.width, record.height):
            raise DataValidationError(
                "Image size differs from the manifest",
                details={
                    "image_id": record.image_id,
                    "manifest": (record.width, record.height),
                    "file": (width, height),
                }
            )
    # 範囲外のボックスは AnnotatedImage が image_id 付きで拒否する
    return AnnotatedImage(
        image_id=record.image_id,
        width=record.width,
        height=record.height,
        instances=tuple(instances),
        file=file,
    )


def load_dataset(path: Path, check_files: bool = True) -> Tuple[List[AnnotatedImage], Taxonomy]:
    """マニフェストを読み込み、全アノテーションを検証する

    Args:
        path: マニフェストのディレクトリ、または annotations.jsonl のパス
        check_files: 参照画像の存在とサイズをヘッダで確認するか

    Raises:
        IngestionError: ファイルが無い、レコードが壊れている（行番号と image_id を含む）
        DataValidationError: 範囲外・退化したボックス、未知の属、重複 image_id
    """
    root, annotations = _manifest_paths(path)
    if not annotations.exists():
        raise IngestionError("Manifest not found", details={"path": str(annotations)})
    taxonomy = load_taxonomy(root / TAXONOMY_FILE)

    images: List[AnnotatedImage] = []
    seen: Dict[str, int] = {}
    with open(annotations, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = AnnotationRecord.model_validate_json(line)
            except ValidationError as e:
                image_id = None
                try:
                    image_id = json.loads(line).get("image_id")
                except (json.JSONDecodeError, AttributeError):
                    pass
                raise IngestionError(
                    "Malformed annotation record",
                    details={"line": line_no, "image_id": image_id},
                    original_error=e
                )
            if record.image_id in seen:
                raise DataValidationError(
                    "Duplicate image_id in manifest",
                    details={"image_id": record.image_id, "line": line_no, "first_line": seen[record.image_id]}
                )
            seen[record.image_id] = line_no
            images.append(_build_image(record, root, taxonomy, check_files))

    logger.dataset_loaded(str(root), len(images), sum(len(img.instances) for img in images))
    return images, taxonomy


def save_manifest(
    images: Sequence[AnnotatedImage],
    taxonomy: Taxonomy,
    out_dir: Path,
) -> Path:
    """annotations.jsonl と taxonomy.csv を書き出す（画像ファイルは呼び出し側が書く）

    Returns:
        annotations.jsonl のパス
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / ANNOTATIONS_FILE
    with open(manifest, "w", encoding="utf-8", newline="\n") as f:
        for img in images:
            file = img.file.relative_to(out_dir).as_posix() if img.file else f"{IMAGES_DIR}/{img.image_id}.png"
            record = AnnotationRecord(
                image_id=img.image_id,
                file=file,
                width=img.width,
                height=img.height,
                instances=[
                    InstanceRecord(x1=i.box.x1, y1=i.box.y1, x2=i.box.x2, y2=i.box.y2, genus=i.genus)
                    for i in img.instances
                ],
            )
            f.write(record.model_dump_json() + "\n")
    save_taxonomy(taxonomy, out_dir / TAXONOMY_FILE)
    return manifest


def split_dataset(ids: Sequence[str], seed: int) -> DatasetSplit:
    """80/20 のランダム分割（学習側は floor(0.8·N)）

    Raises:
        DataValidationError: ID が重複している場合
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataValidationError("Duplicate image ids", details={"image_ids": dupes[:10]})
    n_train = (len(ids) * 4) // 5
    order = np.random.default_rng(seed).permutation(len(ids))
    train = tuple(ids[i] for i in order[:n_train])
    test = tuple(ids[i] for i in order[n_train:])
    return DatasetSplit(train=train, test=test, seed=seed)


def apply_relabel(images: Sequence[AnnotatedImage], relabel: Mapping[str, str]) -> List[AnnotatedImage]:
    """全画像の属ラベルに relabel マップを適用する

    Raises:
        TaxonomyLookupError: マップに無い属
    """
    out = []
    for img in images:
        instances = []
        for inst in img.instances:
            if inst.genus not in relabel:
                raise TaxonomyLookupError(
                    "Genus missing from relabel map",
                    details={"image_id": img.image_id, "genus": inst.genus}
                )
            instances.append(Instance(box=inst.box, genus=relabel[inst.genus]))
        out.append(img.with_instances(instances))
    return out


@dataclass(frozen=True)
class PreparedDataset:
    """分割・マージ・標準化統計まで済んだデータセット"""
    train: Tuple[AnnotatedImage, ...]
    test: Tuple[AnnotatedImage, ...]
    taxonomy: Taxonomy
    source_taxonomy: Taxonomy
    relabel: Mapping[str, str]
    split: DatasetSplit
    stats: NormalizationStats


def prepare_dataset(
    images: Sequence[AnnotatedImage],
    taxonomy: Taxonomy,
    seed: int,
    image_size: int = IMAGE_SIZE,
    threshold: int = RARE_GENUS_THRESHOLD,
    split: Optional[DatasetSplit] = None,
) -> PreparedDataset:
    """分割 → 学習側の件数で希少属マージ → 両側へ relabel → 学習側で標準化統計"""
    split = split or split_dataset([img.image_id for img in images], seed)
    train = split.select(images, "train")
    test = split.select(images, "test")

    census = census_from_instances(inst for img in train for inst in img.instances)
    merged, relabel = merge_rare_genera(census, taxonomy, threshold)
    train = apply_relabel(train, relabel)
    test = apply_relabel(test, relabel)

    stats = compute_normalization_stats(train, image_size) if train else NormalizationStats.identity()
    logger.info(
        "Dataset prepared",
        train_images=len(train),
        test_images=len(test),
        genera=len(merged.genera),
        mean=list(stats.mean),
        std=list(stats.std),
    )
    return PreparedDataset(
        train=tuple(train),
        test=tuple(test),
        taxonomy=merged,
        source_taxonomy=taxonomy,
        relabel=dict(relabel),
        split=split,
        stats=stats,
    )
