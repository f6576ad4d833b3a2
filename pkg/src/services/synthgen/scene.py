"""1 枚の合成顕微鏡シーンの描画

描画順は 背景 → 非藻類の粒子（アノテーションなし）→ 藻類 です。
各藻類のボックスは切り詰め済みマスクの配置位置そのものなので、
描画された前景の外接矩形と一致します。
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import GenerationError
from src.domain.models.dataset import AnnotatedImage, Instance
from src.domain.models.geometry import BoundingBox
from src.domain.models.synthgen import GenusStyle, SceneSpec
from src.infrastructure.geometry import iou
from src.infrastructure.imaging import composite, render_mask, smooth_noise

SeedLike = Union[int, np.random.SeedSequence]

REFERENCE_SIZE = 800.0
_BACKGROUND = np.array([222.0, 226.0, 214.0], dtype=np.float32)
_TRANSPARENT_ALPHA = (0.1, 0.3)


@dataclass(frozen=True)
class PlacedMask:
    """配置済みの前景マスク（annotated=False は粒子）"""
    mask: np.ndarray
    x0: int
    y0: int
    annotated: bool

    @property
    def box(self) -> BoundingBox:
        h, w = self.mask.shape
        return BoundingBox(float(self.x0), float(self.y0), float(self.x0 + w), float(self.y0 + h))


@dataclass(frozen=True, eq=False)
class RenderedScene:
    image: AnnotatedImage
    placements: Tuple[PlacedMask, ...]


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    bg_rng = np.random.default_rng(spec.background_seed) if spec.background_seed is not None else rng
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.float32)
    for c in range(3):
        noise = smooth_noise(bg_rng, spec.width, spec.height, cells=8)
        canvas[..., c] = _BACKGROUND[c] + (noise - 0.5) * 28.0
    canvas += bg_rng.normal(0.0, 2.5, size=canvas.shape).astype(np.float32)
    return canvas


def _fits(mask: np.ndarray, spec: SceneSpec) -> bool:
    return mask.size > 0 and mask.shape[0] <= spec.height and mask.shape[1] <= spec.width


def _place_free(
    mask: np.ndarray,
    spec: SceneSpec,
    boxes: List[BoundingBox],
    rng: np.random.Generator,
) -> Optional[Tuple[int, int]]:
    h, w = mask.shape
    x0 = int(rng.integers(0, spec.width - w + 1))
    y0 = int(rng.integers(0, spec.height - h + 1))
    candidate = BoundingBox(x0, y0, x0 + w, y0 + h)
    if any(iou(candidate, b) > 0 for b in boxes):
        return None
    return x0, y0


def _place_over(
    mask: np.ndarray,
    spec: SceneSpec,
    boxes: List[BoundingBox],
    rng: np.random.Generator,
) -> Optional[Tuple[int, int]]:
    h, w = mask.shape
    target = boxes[int(rng.integers(0, len(boxes)))]
    cx = rng.uniform(target.x1 + 0.25 * target.width, target.x2 - 0.25 * target.width)
    cy = rng.uniform(target.y1 + 0.25 * target.height, target.y2 - 0.25 * target.height)
    x0 = int(np.clip(round(cx - w / 2), 0, spec.width - w))
    y0 = int(np.clip(round(cy - h / 2), 0, spec.height - h))
    if iou(BoundingBox(x0, y0, x0 + w, y0 + h), target) <= 0:
        return None
    return x0, y0


def _color(style: GenusStyle, rng: np.random.Generator) -> np.ndarray:
    jitter = rng.integers(-style.color_jitter, style.color_jitter + 1, size=3)
    return np.clip(np.asarray(style.color) + jitter, 0, 255).astype(np.float32)


def _distractors(canvas: np.ndarray, spec: SceneSpec, scale: float, rng: np.random.Generator) -> List[PlacedMask]:
    lo, hi = spec.distractor_count
    out = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        shape = "ellipse" if rng.random() < 0.6 else "colony"
        mask = render_mask(shape, float(rng.uniform(10, 40)) * scale, rng)
        if not _fits(mask, spec):
            continue
        h, w = mask.shape
        x0 = int(rng.integers(0, spec.width - w + 1))
        y0 = int(rng.integers(0, spec.height - h + 1))
        gray = float(rng.uniform(90, 170))
        color = np.array([gray, gray * 0.95, gray * 0.85], dtype=np.float32)
        composite(canvas, mask, x0, y0, color, float(rng.uniform(0.4, 0.8)))
        out.append(PlacedMask(mask, x0, y0, annotated=False))
    return out


def render_scene(
    spec: SceneSpec,
    styles: Sequence[GenusStyle],
    seed: SeedLike,
    genera: Optional[Sequence[str]] = None,
    image_id: str = "scene",
) -> RenderedScene:
    """シーンを描画し、画像と全ての配置マスクを返す

    Args:
        spec: 生成条件
        styles: 使うスタイル（1 つ以上）
        seed: 乱数シード
        genera: 個体の属を明示する場合の属名列（個体数は len(genera)）
        image_id: 画像 ID

    Raises:
        GenerationError: スタイルが無い、属のスタイルが無い、配置がリトライ上限内に決まらない
    """
    if not styles:
        raise GenerationError("At least one genus style is required")
    by_genus = {s.genus: s for s in styles}
    rng = np.random.default_rng(seed)
    scale = min(spec.width, spec.height) / REFERENCE_SIZE

    if genera is None:
        lo, hi = spec.instance_count
        count = int(rng.integers(lo, hi + 1))
        genera = [styles[int(rng.integers(0, len(styles)))].genus for _ in range(count)]
    missing = [g for g in genera if g not in by_genus]
    if missing:
        raise GenerationError("No style for genus", details={"genera": sorted(set(missing)), "image_id": image_id})

    canvas = _background(spec, rng)
    placements = _distractors(canvas, spec, scale, rng)
    boxes: List[BoundingBox] = []
    instances: List[Instance] = []

    for k, genus in enumerate(genera):
        style = by_genus[genus]
        occlude = bool(boxes) and rng.random() < spec.occlusion_probability
        position = None
        for _ in range(spec.max_retries):
            size = float(rng.uniform(*style.size_range)) * scale
            mask = render_mask(style.shape, size, rng)
            if not _fits(mask, spec):
                continue
            position = (_place_over if occlude else _place_free)(mask, spec, boxes, rng)
            if position is not None:
                break
        if position is None:
            raise GenerationError(
                "Could not place instance within the retry limit",
                details={
                    "image_id": image_id,
                    "instance": k,
                    "genus": genus,
                    "max_retries": spec.max_retries,
                    "placed": len(boxes),
                }
            )

        if rng.random() < spec.transparency_probability:
            alpha = float(rng.uniform(*_TRANSPARENT_ALPHA))
        else:
            alpha = float(rng.uniform(*style.opacity_range))
        x0, y0 = position
        composite(canvas, mask, x0, y0, _color(style, rng), alpha)
        placed = PlacedMask(mask, x0, y0, annotated=True)
        placements.append(placed)
        boxes.append(placed.box)
        instances.append(Instance(box=placed.box, genus=genus))

    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    image = AnnotatedImage(
        image_id=image_id,
        width=spec.width,
        height=spec.height,
        instances=tuple(instances),
        pixels=pixels,
    )
    return RenderedScene(image=image, placements=tuple(placements))


def generate_scene(
    spec: SceneSpec,
    styles: Sequence[GenusStyle],
    seed: SeedLike,
    genera: Optional[Sequence[str]] = None,
    image_id: str = "scene",
) -> AnnotatedImage:
    """決定的に 1 枚のアノテーション付き画像を生成する（同じシードなら同じバイト列）"""
    return render_scene(spec, styles, seed, genera=genera, image_id=image_id).image
