"""手続き的な形状マスク

形状は 4 倍のスーパーサンプリングで Pillow に描き、BOX フィルタで縮小して
アンチエイリアスされた被覆率マスク（0〜1）を得ます。返すマスクは非ゼロ画素の
外接矩形で切り詰められているので、配置位置からそのまま注釈ボックスが決まります。
"""

import math
from typing import List, Tuple

import numpy as np
from PIL import Image, ImageDraw

SUPERSAMPLE = 4
_CIRCLE_POINTS = 64


def _rotate(points: List[Tuple[float, float]], angle: float, cx: float, cy: float) -> List[Tuple[float, float]]:
    c, s = math.cos(angle), math.sin(angle)
    return [(cx + x * c - y * s, cy + x * s + y * c) for x, y in points]


def _ellipse(rx: float, ry: float) -> List[Tuple[float, float]]:
    return [
        (rx * math.cos(2 * math.pi * k / _CIRCLE_POINTS), ry * math.sin(2 * math.pi * k / _CIRCLE_POINTS))
        for k in range(_CIRCLE_POINTS)
    ]


def _capsule(length: float, radius: float) -> List[Tuple[float, float]]:
    half = max(0.0, length / 2 - radius)
    pts = []
    steps = _CIRCLE_POINTS // 2
    for k in range(steps + 1):
        t = -math.pi / 2 + math.pi * k / steps
        pts.append((half + radius * math.cos(t), radius * math.sin(t)))
    for k in range(steps + 1):
        t = math.pi / 2 + math.pi * k / steps
        pts.append((-half + radius * math.cos(t), radius * math.sin(t)))
    return pts


def _star(outer: float, inner: float, n_points: int) -> List[Tuple[float, float]]:
    pts = []
    for k in range(2 * n_points):
        r = outer if k % 2 == 0 else inner
        t = math.pi * k / n_points
        pts.append((r * math.cos(t), r * math.sin(t)))
    return pts


def render_mask(shape: str, size: float, rng: np.random.Generator) -> np.ndarray:
    """形状ファミリーと長径 size から被覆率マスクを描く

    Args:
        shape: "ellipse" | "rod" | "colony" | "star"
        size: 長径（ピクセル）
        rng: 形状パラメータ用の乱数生成器

    Returns:
        float32 (h, w) のマスク。外接矩形に切り詰め済み
    """
    n = int(math.ceil(size * 1.2)) + 4
    ss = SUPERSAMPLE
    canvas = Image.new("L", (n * ss, n * ss), 0)
    draw = ImageDraw.Draw(canvas)
    c = n * ss / 2.0
    scale = size * ss / 2.0
    angle = float(rng.uniform(0.0, math.pi))

    if shape == "ellipse":
        minor = float(rng.uniform(0.45, 0.8))
        draw.polygon(_rotate(_ellipse(scale, scale * minor), angle, c, c), fill=255)
    elif shape == "rod":
        thickness = float(rng.uniform(0.15, 0.25))
        draw.polygon(_rotate(_capsule(2 * scale, scale * thickness), angle, c, c), fill=255)
    elif shape == "colony":
        count = int(rng.integers(4, 10))
        radius = scale * float(rng.uniform(0.22, 0.34))
        for _ in range(count):
            t = float(rng.uniform(0, 2 * math.pi))
            d = float(rng.uniform(0, scale - radius))
            x, y = c + d * math.cos(t), c + d * math.sin(t)
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=255)
    elif shape == "star":
        points = int(rng.integers(5, 9))
        inner = float(rng.uniform(0.35, 0.55))
        draw.polygon(_rotate(_star(scale, scale * inner, points), angle, c, c), fill=255)
    else:
        raise ValueError(f"unknown shape family: {shape}")

    mask = np.asarray(canvas.resize((n, n), Image.Resampling.BOX), dtype=np.float32) / 255.0
    return trim_mask(mask)


def trim_mask(mask: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return mask[:0, :0]
    return mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def mask_extent(mask: np.ndarray) -> Tuple[int, int, int, int]:
    """非ゼロ画素の外接矩形 (x1, y1, x2, y2)。x2, y2 は排他的"""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask")
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def smooth_noise(
    rng: np.random.Generator,
    width: int,
    height: int,
    cells: int = 8,
) -> np.ndarray:
    """粗い格子の乱数をバイリニアで拡大した滑らかなノイズ（0〜1、float32）"""
    coarse = rng.random((cells, cells), dtype=np.float64)
    img = Image.fromarray((coarse * 255).astype(np.uint8))
    return np.asarray(img.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float32) / 255.0


def composite(canvas: np.ndarray, mask: np.ndarray, x0: int, y0: int, color: np.ndarray, alpha: float) -> None:
    """canvas (float32, H×W×3) の (x0, y0) に色を alpha·mask で重ねる（in-place）"""
    h, w = mask.shape
    region = canvas[y0:y0 + h, x0:x0 + w]
    a = (alpha * mask)[..., None]
    region *= 1.0 - a
    region += a * color[None, None, :]
