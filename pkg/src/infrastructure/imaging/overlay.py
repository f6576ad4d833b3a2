"""検出結果のオーバーレイ描画"""

from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from src.domain.models.geometry import BoundingBox

_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (128, 128, 0),
)


def color_for(label: str) -> Tuple[int, int, int]:
    # 実行をまたいで安定な色（hash() はプロセスごとに変わる）
    return _PALETTE[sum(label.encode("utf-8")) % len(_PALETTE)]


def draw_boxes(
    pixels: np.ndarray,
    items: Iterable[Tuple[BoundingBox, str]],
    line_width: int = 2,
) -> Image.Image:
    """ボックスを描き、ラベルをボックスの左上隅に書く"""
    img = Image.fromarray(pixels)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for box, text in items:
        color = color_for(text.split(" ")[0])
        draw.rectangle(box.as_tuple(), outline=color, width=line_width)
        left, top, right, bottom = draw.textbbox((box.x1, box.y1), text, font=font)
        draw.rectangle((left, top, right, bottom), fill=color)
        draw.text((box.x1, box.y1), text, fill=(255, 255, 255), font=font)
    return img


def save_overlay(path: Path, img: Image.Image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return path
