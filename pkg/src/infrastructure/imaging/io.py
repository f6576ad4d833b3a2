"""PNG の読み書き（Pillow）"""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.core.exceptions import IngestionError


def read_rgb(path: Path) -> np.ndarray:
    """RGB uint8 (H, W, 3) として読み込む

    Raises:
        IngestionError: ファイルが存在しない、または画像として読めない場合
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError as e:
        raise IngestionError("Image file not found", details={"file": str(path)}, original_error=e)
    except (UnidentifiedImageError, OSError) as e:
        raise IngestionError("Image file is not readable", details={"file": str(path)}, original_error=e)


def write_png(path: Path, pixels: np.ndarray) -> Path:
    """RGB uint8 を可逆 PNG で書き出す（メタデータなし、バイト列は画素で決まる）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(
        path, format="PNG", optimize=False, compress_level=6
    )
    return path


def resize_rgb(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """バイリニアでリサイズ（uint8 のまま）"""
    if pixels.shape[1] == width and pixels.shape[0] == height:
        return pixels
    img = Image.fromarray(pixels).resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def probe_size(path: Path) -> tuple:
    """ヘッダだけを読んで (width, height) を返す"""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError as e:
        raise IngestionError("Image file not found", details={"file": str(path)}, original_error=e)
    except (UnidentifiedImageError, OSError) as e:
        raise IngestionError("Image file is not readable", details={"file": str(path)}, original_error=e)
