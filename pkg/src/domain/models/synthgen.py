"""合成シーン生成の設定型"""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.constants import IMAGE_SIZE

ShapeFamily = Literal["ellipse", "rod", "colony", "star"]


def _check_range(name: str, v: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = v
    if lo > hi:
        raise ValueError(f"{name}: lower bound exceeds upper bound")
    return v


class GenusStyle(BaseModel):
    """属ごとの見た目

    Attributes:
        genus: 属名
        class_name: 綱名（タクソノミーのサイドカーに書き出される）
        shape: 形状ファミリー
        size_range: 長径の範囲（ピクセル）
        color: 平均 RGB
        color_jitter: RGB 各成分の揺らぎ幅
        opacity_range: 不透明度の範囲
    """

    model_config = ConfigDict(frozen=True)

    genus: str = Field(..., min_length=1)
    class_name: str = Field(..., min_length=1)
    shape: ShapeFamily
    size_range: Tuple[float, float] = (24.0, 48.0)
    color: Tuple[int, int, int] = (90, 140, 60)
    color_jitter: int = Field(default=12, ge=0, le=255)
    opacity_range: Tuple[float, float] = (0.75, 1.0)

    @field_validator('size_range')
    @classmethod
    def validate_size_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] <= 0:
            raise ValueError("size range must be positive")
        return _check_range("size_range", v)

    @field_validator('opacity_range')
    @classmethod
    def validate_opacity_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not (0.0 <= v[0] <= 1.0 and 0.0 <= v[1] <= 1.0):
            raise ValueError("opacity must lie in [0, 1]")
        return _check_range("opacity_range", v)

    @field_validator('color')
    @classmethod
    def validate_color(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(c < 0 or c > 255 for c in v):
            raise ValueError("color components must lie in [0, 255]")
        return v


class SceneSpec(BaseModel):
    """1 枚のシーンの生成条件

    Attributes:
        width: 画像幅
        height: 画像高さ
        background_seed: 背景テクスチャのシード（None なら画像シードから導出）
        instance_count: 個体数の範囲
        occlusion_probability: 既存個体に重ねて配置する確率
        transparency_probability: 半透明（alpha 0.1〜0.3）で描く確率
        distractor_count: 非藻類の粒子の個数範囲（アノテーションなし）
        max_retries: 1 個体あたりの配置リトライ上限
    """

    model_config = ConfigDict(frozen=True)

    width: int = Field(default=IMAGE_SIZE, gt=0)
    height: int = Field(default=IMAGE_SIZE, gt=0)
    background_seed: Optional[int] = None
    instance_count: Tuple[int, int] = (2, 6)
    occlusion_probability: float = Field(default=0.15, ge=0, le=1)
    transparency_probability: float = Field(default=0.1, ge=0, le=1)
    distractor_count: Tuple[int, int] = (0, 3)
    max_retries: int = Field(default=50, gt=0)

    @field_validator('instance_count', 'distractor_count')
    @classmethod
    def validate_counts(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 0:
            raise ValueError("counts must be non-negative")
        return _check_range("count", v)

    @model_validator(mode='after')
    def _check_size(self) -> "SceneSpec":
        if self.width < 8 or self.height < 8:
            raise ValueError("scene must be at least 8x8 pixels")
        return self
