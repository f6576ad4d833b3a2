"""ファイル形式のスキーマ"""

from src.domain.schemas.records import AnnotationRecord, DetectionRecord, InstanceRecord

__all__ = ["AnnotationRecord", "DetectionRecord", "InstanceRecord"]
