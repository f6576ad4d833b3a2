"""前処理と拡張（リサイズ、標準化、±90° 回転、ランダムクロップ）

Sample は画素 (H, W, 3) と角形式のボックス (N, 4) を対で持ちます。
全ての変換は入力を変更せず、新しい Sample を返します。
"""

from dataclasses import dataclass, field
import math
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from src.core.constants import CROP_MIN_RETAINED, IMAGE_SIZE
from src.core.exceptions import DataValidationError
from src.core.logging_config import get_logger
from src.domain.models.dataset import AnnotatedImage, NormalizationStats
from src.infrastructure.imaging import resize_rgb

logger = get_logger(__name__)

SeedLike = Union[int, np.random.Generator]


@dataclass(frozen=True, eq=False)
class Sample:
    """画素とボックスの組"""
    pixels: np.ndarray
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float64))
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != boxes.shape[0]:
            raise DataValidationError(
                "Sample labels and boxes differ in length",
                details={"labels": len(self.labels), "boxes": boxes.shape[0]}
            )

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @classmethod
    def from_image(cls, img: AnnotatedImage) -> "Sample":
        return cls(
            pixels=img.load_pixels(),
            boxes=np.array([b.as_tuple() for b in img.boxes], dtype=np.float64).reshape(-1, 4),
            labels=img.genera,
        )


@dataclass(frozen=True, eq=False)
class PreparedImage:
    """モデル入力（標準化済み CHW float32）と、元画像への縮尺"""
    image_id: str
    tensor: torch.Tensor
    boxes: torch.Tensor
    labels: Tuple[str, ...]
    scale: Tuple[float, float]  # (sx, sy): 元画像 → 入力


def resize_sample(sample: Sample, width: int, height: Optional[int] = None) -> Sample:
    """バイリニアでリサイズし、ボックスを軸ごとに (width/W, height/H) 倍する"""
    height = height or width
    sx = width / sample.width
    sy = height / sample.height
    pixels = resize_rgb(sample.pixels, width, height)
    boxes = sample.boxes * np.array([sx, sy, sx, sy], dtype=np.float64)
    return Sample(pixels=pixels, boxes=boxes, labels=sample.labels)


def standardize(pixels: np.ndarray, stats: NormalizationStats) -> torch.Tensor:
    """(H, W, 3) → 標準化済みの (3, H, W) float32（0〜255 の単位で平均・標準偏差を適用）"""
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    arr = (pixels.astype(np.float32) - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def resize_and_standardize(
    img: AnnotatedImage,
    stats: NormalizationStats,
    size: int = IMAGE_SIZE,
) -> PreparedImage:
    """評価・推論用の前処理（size × size へのリサイズ + 標準化）"""
    sample = resize_sample(Sample.from_image(img), size)
    return PreparedImage(
        image_id=img.image_id,
        tensor=standardize(sample.pixels, stats),
        boxes=torch.from_numpy(sample.boxes.astype(np.float32)),
        labels=sample.labels,
        scale=(size / img.width, size / img.height),
    )


def compute_normalization_stats(
    images: Iterable[AnnotatedImage],
    size: int = IMAGE_SIZE,
) -> NormalizationStats:
    """リサイズ後の画素に対するチャネルごとの平均・標準偏差（母標準偏差、float64 で集計）

    Raises:
        DataValidationError: 画像が 1 枚もない場合
    """
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for img in images:
        pixels = resize_rgb(img.load_pixels(), size, size).reshape(-1, 3).astype(np.float64)
        total += pixels.sum(axis=0)
        total_sq += np.square(pixels).sum(axis=0)
        count += pixels.shape[0]
    if count == 0:
        raise DataValidationError("Cannot compute normalization stats without images")

    mean = total / count
    var = np.maximum(total_sq / count - np.square(mean), 0.0)
    std = np.sqrt(var)
    if np.any(std <= 0):
        logger.warning("Constant image channel; standard deviation floored to 1.0", extra={"std": std.tolist()})
        std = np.where(std <= 0, 1.0, std)
    return NormalizationStats(mean=tuple(float(m) for m in mean), std=tuple(float(s) for s in std))


def rotate90(sample: Sample, direction: int) -> Sample:
    """正方画像を ±90° 回転する

    +90（反時計回り）では画素 (x, y) が (y, S−1−x) に移り、
    ボックスは (x1, y1, x2, y2) → (y1, S−x2, y2, S−x1) になります。

    Raises:
        DataValidationError: 正方でない画像、または direction が ±1 でない場合
    """
    if direction not in (1, -1):
        raise DataValidationError("Rotation direction must be +1 or -1", details={"direction": direction})
    if sample.width != sample.height:
        raise DataValidationError(
            "rotate90 requires a square image",
            details={"width": sample.width, "height": sample.height}
        )
    s = float(sample.width)
    pixels = np.ascontiguousarray(np.rot90(sample.pixels, k=direction, axes=(0, 1)))
    b = sample.boxes
    if direction == 1:
        boxes = np.stack((b[:, 1], s - b[:, 2], b[:, 3], s - b[:, 0]), axis=1)
    else:
        boxes = np.stack((s - b[:, 3], b[:, 0], s - b[:, 1], b[:, 2]), axis=1)
    return Sample(pixels=pixels, boxes=boxes, labels=sample.labels)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def crop_window(
    width: int,
    height: int,
    rng: np.random.Generator,
    min_fraction: float,
) -> Tuple[int, int, int, int]:
    """面積が min_fraction·W·H 以上のクロップ窓 (x0, y0, w, h)"""
    if not (0.0 < min_fraction <= 1.0):
        raise DataValidationError("min_fraction must lie in (0, 1]", details={"min_fraction": min_fraction})
    if min_fraction == 1.0:
        return 0, 0, width, height
    area_fraction = float(rng.uniform(min_fraction, 1.0))
    fw = float(rng.uniform(area_fraction, 1.0))
    fh = area_fraction / fw
    w = min(width, max(1, math.ceil(fw * width)))
    h = min(height, max(1, math.ceil(fh * height)))
    x0 = int(rng.integers(0, width - w + 1))
    y0 = int(rng.integers(0, height - h + 1))
    return x0, y0, w, h


def crop_boxes(
    boxes: np.ndarray,
    window: Tuple[int, int, int, int],
    min_retained: float = CROP_MIN_RETAINED,
) -> Tuple[np.ndarray, np.ndarray]:
    """窓との交差を取り、窓原点へ平行移動する

    Returns:
        (残ったボックス, 残った行を示す bool マスク)。元の面積の min_retained 未満しか
        残らないボックスは捨てます。
    """
    x0, y0, w, h = window
    ix1 = np.maximum(boxes[:, 0], x0)
    iy1 = np.maximum(boxes[:, 1], y0)
    ix2 = np.minimum(boxes[:, 2], x0 + w)
    iy2 = np.minimum(boxes[:, 3], y0 + h)
    iw = np.clip(ix2 - ix1, 0.0, None)
    ih = np.clip(iy2 - iy1, 0.0, None)
    inter = iw * ih
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep = (iw > 0) & (ih > 0) & (inter >= min_retained * area)
    out = np.stack((ix1 - x0, iy1 - y0, ix2 - x0, iy2 - y0), axis=1)[keep]
    return out.reshape(-1, 4), keep


def random_crop(
    sample: Sample,
    seed: SeedLike,
    min_fraction: float,
    resize_to: Optional[int] = None,
    min_retained: float = CROP_MIN_RETAINED,
) -> Sample:
    """ランダムクロップ

    Args:
        sample: 入力
        seed: シードまたは乱数生成器（同じシードなら同じ結果）
        min_fraction: 窓の最小面積比 (0, 1]
        resize_to: 指定すると結果を resize_to × resize_to に戻す
        min_retained: これ未満の面積しか残らないボックスは捨てる
    """
    window = crop_window(sample.width, sample.height, _rng(seed), min_fraction)
    x0, y0, w, h = window
    boxes, keep = crop_boxes(sample.boxes, window, min_retained)
    labels = tuple(l for l, k in zip(sample.labels, keep) if k)
    pixels = np.ascontiguousarray(sample.pixels[y0:y0 + h, x0:x0 + w])
    cropped = Sample(pixels=pixels, boxes=boxes, labels=labels)
    if resize_to is not None:
        cropped = resize_sample(cropped, resize_to)
    return cropped


def augment(
    sample: Sample,
    rng: np.random.Generator,
    size: int,
    rotate_probability: float,
    crop_min_fraction: float,
) -> Sample:
    """resize → ±90° 回転（確率 p、向きは等確率）→ クロップ → 再リサイズ"""
    out = resize_sample(sample, size)
    if rng.random() < rotate_probability:
        out = rotate90(out, 1 if rng.random() < 0.5 else -1)
    return random_crop(out, rng, crop_min_fraction, resize_to=size)


