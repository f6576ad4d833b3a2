"""チェックポイントの保存と読み込み

アーカイブは torch.save の辞書で、設定・タクソノミー・フィンガープリント・
重み・ステップ・標準化統計（と任意でオプティマイザ状態）を含みます。
読み込みは weights_only=True で行います。
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import torch
from pydantic import ValidationError

from src.core.exceptions import CheckpointError, ConfigurationError, IngestionError
from src.core.logging_config import get_structured_logger
from src.domain.models.dataset import NormalizationStats
from src.domain.models.detector import ModelConfig
from src.domain.models.taxonomy import Taxonomy
from src.models.detector import AlgaeDetector
from src.services.taxonomy import taxonomy_fingerprint

logger = get_structured_logger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: AlgaeDetector
    step: int
    stats: NormalizationStats
    optimizer_state: Optional[Dict[str, Any]] = None
    scheduler_state: Optional[Dict[str, Any]] = None

    @property
    def taxonomy(self) -> Taxonomy:
        return self.model.taxonomy

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def save_checkpoint(
    path: Path,
    model: AlgaeDetector,
    step: int,
    stats: NormalizationStats,
    optimizer_state: Optional[Dict[str, Any]] = None,
    scheduler_state: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    taxonomy = model.taxonomy
    archive = {
        "format_version": FORMAT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "taxonomy": {
            "genera": list(taxonomy.genera),
            "classes": list(taxonomy.classes),
            "genus_to_class": [taxonomy.genus_to_class[g] for g in taxonomy.genera],
        },
        "fingerprint": model.fingerprint,
        "state_dict": model.state_dict(),
        "step": int(step),
        "stats": stats.model_dump(mode="json"),
        "optimizer": optimizer_state,
        "scheduler": scheduler_state,
    }
    # 途中で落ちても壊れたファイルを残さない
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(archive, tmp)
    tmp.replace(path)
    logger.checkpoint_saved(str(path), int(step))
    return path


def load_checkpoint(
    path: Path,
    taxonomy: Optional[Taxonomy] = None,
    map_location: str = "cpu",
) -> Checkpoint:
    """チェックポイントを読み込み、モデルを復元する

    Args:
        path: チェックポイントのパス
        taxonomy: 評価に使うタクソノミー。指定するとフィンガープリントを照合する
        map_location: テンソルの配置先

    Raises:
        IngestionError: ファイルが無い、または読めない
        CheckpointError: 形式が不正、またはタクソノミーが一致しない
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError("Checkpoint not found", details={"path": str(path)})
    try:
        archive = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as e:
        raise CheckpointError("Unreadable checkpoint", details={"path": str(path)}, original_error=e)

    if not isinstance(archive, dict) or archive.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("Unsupported checkpoint format", details={"path": str(path)})

    try:
        stored = archive["taxonomy"]
        stored_taxonomy = Taxonomy(
            genera=tuple(stored["genera"]),
            classes=tuple(stored["classes"]),
            genus_to_class=dict(zip(stored["genera"], stored["genus_to_class"])),
        )
        config = ModelConfig.model_validate(archive["config"])
        stats = NormalizationStats.model_validate(archive["stats"])
    except (KeyError, TypeError, ValidationError, ConfigurationError) as e:
        raise CheckpointError("Malformed checkpoint", details={"path": str(path)}, original_error=e)

    if taxonomy_fingerprint(stored_taxonomy) != archive.get("fingerprint"):
        raise CheckpointError("Checkpoint taxonomy is inconsistent with its fingerprint", details={"path": str(path)})
    if taxonomy is not None and taxonomy_fingerprint(taxonomy) != archive["fingerprint"]:
        raise CheckpointError(
            "Checkpoint was trained with a different taxonomy",
            details={
                "path": str(path),
                "checkpoint_fingerprint": archive["fingerprint"],
                "taxonomy_fingerprint": taxonomy_fingerprint(taxonomy),
            }
        )

    model = AlgaeDetector(config, stored_taxonomy)
    try:
        model.load_state_dict(archive["state_dict"])
    except RuntimeError as e:
        raise CheckpointError("Checkpoint weights do not fit the model", details={"path": str(path)}, original_error=e)
    model.to(map_location)
    return Checkpoint(
        model=model,
        step=int(archive["step"]),
        stats=stats,
        optimizer_state=archive.get("optimizer"),
        scheduler_state=archive.get("scheduler"),
    )
