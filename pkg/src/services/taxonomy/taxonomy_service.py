"""Taxonomy Service - 属 → 綱 の階層と希少属マージ

タクソノミーの照会、希少属の "else" への統合、属ラベルから綱ラベルへの
ロールアップ、サイドカーファイル（taxonomy.csv）の読み書きを提供します。
全ての操作は純粋関数で、入力の型は不変です。
"""

from dataclasses import replace
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, TypeVar

import pandas as pd

from src.core.constants import ELSE_GENUS, RARE_GENUS_THRESHOLD
from src.core.exceptions import (
    ConfigurationError,
    IngestionError,
    TaxonomyLookupError,
)
from src.core.logging_config import get_logger
from src.domain.models.dataset import Instance
from src.domain.models.detection import Detection, LabeledBox, ScoredBox
from src.domain.models.taxonomy import GenusCensus, Taxonomy

logger = get_logger(__name__)

CLASSES_PREFIX = "#classes="

Relabel = Dict[str, str]
T = TypeVar("T")


def genus_to_class(taxonomy: Taxonomy, genus: str) -> str:
    """属が属する綱

    Raises:
        TaxonomyLookupError: 未知の属
    """
    try:
        return taxonomy.genus_to_class[genus]
    except KeyError:
        raise TaxonomyLookupError(
            "Unknown genus",
            details={"genus": genus, "known": len(taxonomy.genera)}
        )


def merge_rare_genera(
    census: GenusCensus,
    taxonomy: Taxonomy,
    threshold: int = RARE_GENUS_THRESHOLD,
) -> Tuple[Taxonomy, Relabel]:
    """インスタンス数が threshold 未満の属を "else" に統合する

    国勢調査に現れない属は 0 件として扱います。"else" 自体は常に残ります。

    Returns:
        (マージ後のタクソノミー, 入力の全属に対する relabel マップ)

    Raises:
        ConfigurationError: タクソノミーに "else" が無い
        IngestionError: 国勢調査にタクソノミー外の属がある
    """
    if ELSE_GENUS not in taxonomy.genera:
        raise ConfigurationError(f"Taxonomy has no '{ELSE_GENUS}' genus")
    unknown = [g for g in census.counts if g not in taxonomy.genus_to_class]
    if unknown:
        raise IngestionError(
            "Census names genera outside the taxonomy",
            details={"genera": unknown}
        )

    relabel: Relabel = {}
    kept: List[str] = []
    for genus in taxonomy.genera:
        count = census.counts.get(genus, 0)
        if genus != ELSE_GENUS and count < threshold:
            relabel[genus] = ELSE_GENUS
        else:
            relabel[genus] = genus
            kept.append(genus)

    merged = Taxonomy(
        genera=tuple(kept),
        classes=taxonomy.classes,
        genus_to_class={g: taxonomy.genus_to_class[g] for g in kept},
    )
    dropped = [g for g, target in relabel.items() if target != g]
    logger.info(
        "Rare genera merged",
        extra={
            "threshold": threshold,
            "genera_before": len(taxonomy.genera),
            "genera_after": len(kept),
            "merged": dropped,
        }
    )
    return merged, relabel


def apply_relabel_to_census(census: GenusCensus, relabel: Mapping[str, str]) -> GenusCensus:
    """relabel マップを国勢調査に適用する（総数は保存される）"""
    counts: Dict[str, int] = {}
    for genus, count in census.counts.items():
        target = relabel.get(genus, genus)
        counts[target] = counts.get(target, 0) + count
    return GenusCensus(counts=counts)


def _label_of(item) -> str:
    if isinstance(item, str):
        return item
    if isinstance(item, (ScoredBox, LabeledBox)):
        return item.label
    if isinstance(item, (Detection, Instance)):
        return item.genus
    raise TypeError(f"cannot take a genus label from {type(item).__name__}")


def _with_label(item, label: str):
    if isinstance(item, str):
        return label
    if isinstance(item, (ScoredBox, LabeledBox)):
        return replace(item, label=label)
    if isinstance(item, Detection):
        return ScoredBox(box=item.box, label=label, score=item.confidence)
    return LabeledBox(box=item.box, label=label)


def roll_up_labels(items: Sequence[T], taxonomy: Taxonomy) -> List:
    """属ラベル付きの要素を綱ラベル付きに変換する

    文字列は文字列に、ScoredBox / LabeledBox はラベルだけ差し替えて、
    Detection は ScoredBox に、Instance は LabeledBox になります。
    一つでも未知の属があれば何も返さずに例外を送出します。
    """
    classes = [genus_to_class(taxonomy, _label_of(item)) for item in items]
    return [_with_label(item, c) for item, c in zip(items, classes)]


def class_census(census: GenusCensus, taxonomy: Taxonomy) -> Dict[str, int]:
    """綱ごとのインスタンス数（全 6 綱、タクソノミーの順）"""
    counts = {c: 0 for c in taxonomy.classes}
    for genus, count in census.counts.items():
        counts[genus_to_class(taxonomy, genus)] += count
    return counts


def taxonomy_fingerprint(taxonomy: Taxonomy) -> str:
    """順序付きの属・綱と所属から計算する sha256"""
    payload = json.dumps(
        {
            "genera": list(taxonomy.genera),
            "classes": list(taxonomy.classes),
            "membership": [[g, taxonomy.genus_to_class[g]] for g in taxonomy.genera],
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_taxonomy(path: Path) -> Taxonomy:
    """taxonomy.csv を読み込む

    1 行目は ``#classes=<6 綱のカンマ区切り>``、続いてヘッダ ``genus,class`` と各行。

    Raises:
        IngestionError: ファイルが読めない、形式が不正
        ConfigurationError: タクソノミーの不変条件違反
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline().strip()
    except OSError as e:
        raise IngestionError("Taxonomy file not readable", details={"path": str(path)}, original_error=e)
    if not first.startswith(CLASSES_PREFIX):
        raise IngestionError(
            f"Taxonomy file must start with '{CLASSES_PREFIX}'",
            details={"path": str(path), "first_line": first[:80]}
        )
    classes = [c.strip() for c in first[len(CLASSES_PREFIX):].split(",") if c.strip()]

    try:
        frame = pd.read_csv(path, skiprows=1, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestionError("Taxonomy table is malformed", details={"path": str(path)}, original_error=e)
    if list(frame.columns) != ["genus", "class"]:
        raise IngestionError(
            "Taxonomy header must be 'genus,class'",
            details={"path": str(path), "columns": list(frame.columns)}
        )
    pairs = list(zip(frame["genus"].tolist(), frame["class"].tolist()))
    return Taxonomy.from_pairs(pairs, classes=classes)


def save_taxonomy(taxonomy: Taxonomy, path: Path) -> Path:
    """taxonomy.csv を書き出す（load_taxonomy の逆）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "genus": list(taxonomy.genera),
            "class": [taxonomy.genus_to_class[g] for g in taxonomy.genera],
        }
    )
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(CLASSES_PREFIX + ",".join(taxonomy.classes) + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def census_from_instances(instances: Iterable[Instance]) -> GenusCensus:
    return GenusCensus.from_labels(inst.genus for inst in instances)
