"""画像 I/O と描画"""

from src.infrastructure.imaging.io import probe_size, read_rgb, resize_rgb, write_png
from src.infrastructure.imaging.overlay import draw_boxes, save_overlay
from src.infrastructure.imaging.shapes import composite, mask_extent, render_mask, smooth_noise

__all__ = [
    "probe_size",
    "read_rgb",
    "resize_rgb",
    "write_png",
    "draw_boxes",
    "save_overlay",
    "composite",
    "mask_extent",
    "render_mask",
    "smooth_noise",
]
