"""データセットのドメイン型

AnnotatedImage は画素を遅延読み込みします（``file`` が設定されていれば
``load_pixels()`` の初回呼び出しで PNG を読みます）。合成データやテストでは
``pixels`` を直接渡すこともできます。
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.core.exceptions import DataValidationError, IngestionError
from src.domain.models.geometry import BoundingBox


@dataclass(frozen=True)
class Instance:
    """画像中の 1 個体（ボックス + 属名）"""
    box: BoundingBox
    genus: str


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    """アノテーション付き画像

    Attributes:
        image_id: 画像 ID
        width: 幅（ピクセル）
        height: 高さ（ピクセル）
        instances: 個体のリスト（空でもよい）
        file: PNG ファイルのパス
        pixels: RGB uint8 の画素 (H, W, 3)
    """
    image_id: str
    width: int
    height: int
    instances: Tuple[Instance, ...] = ()
    file: Optional[Path] = None
    pixels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.image_id:
            raise DataValidationError("Empty image_id")
        if self.width <= 0 or self.height <= 0:
            raise DataValidationError(
                "Image dimensions must be positive",
                details={"image_id": self.image_id, "width": self.width, "height": self.height}
            )
        for inst in self.instances:
            if not inst.box.within(self.width, self.height):
                raise DataValidationError(
                    "Bounding box outside image bounds",
                    details={
                        "image_id": self.image_id,
                        "box": inst.box.as_tuple(),
                        "width": self.width,
                        "height": self.height,
                    }
                )
        if self.pixels is not None:
            self._check_pixels(self.pixels)

    def _check_pixels(self, pixels: np.ndarray) -> None:
        if pixels.dtype != np.uint8 or pixels.shape != (self.height, self.width, 3):
            raise DataValidationError(
                "Pixel buffer must be uint8 RGB matching the declared size",
                details={
                    "image_id": self.image_id,
                    "shape": tuple(pixels.shape),
                    "dtype": str(pixels.dtype),
                }
            )

    @property
    def genera(self) -> Tuple[str, ...]:
        return tuple(inst.genus for inst in self.instances)

    @property
    def boxes(self) -> Tuple[BoundingBox, ...]:
        return tuple(inst.box for inst in self.instances)

    def load_pixels(self) -> np.ndarray:
        """RGB uint8 画素 (H, W, 3) を返す"""
        if self.pixels is not None:
            return self.pixels
        if self.file is None:
            raise IngestionError(
                "Image has neither pixels nor a file",
                details={"image_id": self.image_id}
            )
        from src.infrastructure.imaging import read_rgb

        pixels = read_rgb(self.file)
        self._check_pixels(pixels)
        object.__setattr__(self, "pixels", pixels)
        return pixels

    def with_instances(self, instances: Iterable[Instance]) -> "AnnotatedImage":
        return replace(self, instances=tuple(instances))


@dataclass(frozen=True)
class DatasetSplit:
    """学習/テスト分割（画像 ID の互いに素な被覆）"""
    train: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise DataValidationError(
                "Train and test splits overlap",
                details={"image_ids": sorted(overlap)}
            )

    @property
    def size(self) -> int:
        return len(self.train) + len(self.test)

    def select(self, images: Sequence[AnnotatedImage], part: str) -> list:
        """分割の片側（"train" / "test"）の画像を分割の順序で返す"""
        ids = self.train if part == "train" else self.test
        by_id = {img.image_id: img for img in images}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataValidationError(
                "Split references unknown images",
                details={"image_ids": missing[:10]}
            )
        return [by_id[i] for i in ids]


class NormalizationStats(BaseModel):
    """チャネルごとの平均・標準偏差（0-255 スケール）"""

    model_config = ConfigDict(frozen=True)

    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]

    @field_validator('std')
    @classmethod
    def validate_std(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(not np.isfinite(s) or s <= 0 for s in v):
            raise ValueError("standard deviation must be positive for every channel")
        return v

    @field_validator('mean')
    @classmethod
    def validate_mean(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(not np.isfinite(m) for m in v):
            raise ValueError("mean must be finite")
        return v

    @classmethod
    def identity(cls) -> "NormalizationStats":
        return cls(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
