"""行区切りファイル（annotations.jsonl / detections.jsonl）のレコードスキーマ"""

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class InstanceRecord(BaseModel):
    """アノテーション 1 件（元画像のピクセル座標）"""

    model_config = ConfigDict(extra='forbid')

    x1: float
    y1: float
    x2: float
    y2: float
    genus: str = Field(..., min_length=1)


class AnnotationRecord(BaseModel):
    """annotations.jsonl の 1 行"""

    model_config = ConfigDict(extra='forbid')

    image_id: str = Field(..., min_length=1)
    file: str = Field(..., min_length=1)
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    instances: List[InstanceRecord] = Field(default_factory=list)


class DetectionRecord(BaseModel):
    """detections.jsonl の 1 行"""

    model_config = ConfigDict(extra='ignore', populate_by_name=True)

    image_id: str = Field(..., min_length=1)
    x1: float
    y1: float
    x2: float
    y2: float
    genus: str = Field(..., min_length=1)
    confidence: float = Field(..., ge=0, le=1)
    class_name: Optional[str] = Field(default=None, alias="class")
