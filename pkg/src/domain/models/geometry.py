"""Box and anchor value types."""

from dataclasses import dataclass
import math
from typing import Iterable, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.constants import ANCHOR_RATIOS, DESK_ANCHOR_SIZES, DESK_STRIDES
from src.core.exceptions import DataValidationError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates (corner form).

    Area is ``(x2 - x1) * (y2 - y1)`` with no +1 offset.
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DataValidationError(
                "Bounding box coordinates must be finite",
                details={"box": coords}
            )
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataValidationError(
                "Degenerate bounding box",
                details={"box": coords}
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + 0.5 * self.width, self.y1 + 0.5 * self.height)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def within(self, width: float, height: float) -> bool:
        """True when the box lies inside ``[0, width] x [0, height]``."""
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height

    @classmethod
    def from_sequence(cls, values: Iterable[float]) -> "BoundingBox":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2, y2)


class AnchorGrid(BaseModel):
    """Anchor layout: one base size per pyramid level, shared ratios (height/width)."""

    model_config = ConfigDict(frozen=True)

    ratios: Tuple[float, ...] = Field(default=ANCHOR_RATIOS)
    sizes: Tuple[float, ...] = Field(default=tuple(float(s) for s in DESK_ANCHOR_SIZES))
    strides: Tuple[int, ...] = Field(default=DESK_STRIDES)

    @model_validator(mode='after')
    def _check_layout(self) -> "AnchorGrid":
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("anchor ratios must be strictly positive")
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ValueError("anchor sizes must be strictly positive")
        if any(s <= 0 for s in self.strides):
            raise ValueError("strides must be strictly positive")
        if len(self.sizes) != len(self.strides):
            raise ValueError(
                f"one anchor size per pyramid level is required "
                f"(sizes={len(self.sizes)}, levels={len(self.strides)})"
            )
        return self

    @property
    def num_levels(self) -> int:
        return len(self.strides)

    @property
    def anchors_per_location(self) -> int:
        return len(self.ratios)
