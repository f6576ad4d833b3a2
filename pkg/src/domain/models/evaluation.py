"""評価レポートの型"""

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.constants import MATCH_IOU, NMS_IOU, REPORT_CUTOFF, SCORE_FLOOR


class EvalConfig(BaseModel):
    """推論と評価の設定

    Attributes:
        score_floor: これ未満の confidence の検出は捨てる
        nms_iou: 属ごとの NMS の閾値
        iou_threshold: 照合の IoU 閾値
        hierarchy_alpha: 綱の確率による属の再スコアリング指数（0 で無効）
        batch_size: 推論のバッチサイズ
        report_cutoff: 表で個別に出すラベル数
        render: 検出を描いた PNG を書くか
    """

    model_config = ConfigDict(frozen=True)

    score_floor: float = Field(default=SCORE_FLOOR, ge=0, le=1)
    nms_iou: float = Field(default=NMS_IOU, gt=0, le=1)
    iou_threshold: float = Field(default=MATCH_IOU, gt=0, le=1)
    hierarchy_alpha: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=1, gt=0)
    report_cutoff: int = Field(default=REPORT_CUTOFF, ge=0)
    render: bool = False


class LabelScore(BaseModel):
    """1 ラベル分の行（属または綱）"""

    label: str
    ap: Optional[float] = Field(default=None, ge=0, le=1)
    instance_percentage: float = Field(..., ge=0, le=100)
    num_gt: int = Field(..., ge=0)
    accuracy: Optional[float] = Field(default=None, ge=0, le=1)


class EvalReport(BaseModel):
    """属・綱の二階層での評価結果

    AP が未定義（テストに正解が無い）ラベルは ``ap=None`` で、mAP の平均から除外されます。
    """

    genus_rows: List[LabelScore] = Field(default_factory=list)
    class_rows: List[LabelScore] = Field(default_factory=list)
    map_genus: Optional[float] = Field(default=None, ge=0, le=1)
    map_class: Optional[float] = Field(default=None, ge=0, le=1)
    aca_genus: Optional[float] = Field(default=None, ge=0, le=1)
    aca_class: Optional[float] = Field(default=None, ge=0, le=1)
    hierarchy_consistency: Optional[float] = Field(default=None, ge=0, le=1)
    num_images: int = Field(default=0, ge=0)
    num_detections: int = Field(default=0, ge=0)
    iou_threshold: float = Field(default=0.5, gt=0, le=1)

    @model_validator(mode='after')
    def _check_percentages(self) -> "EvalReport":
        for name, rows in (("genus", self.genus_rows), ("class", self.class_rows)):
            if any(r.num_gt for r in rows):
                total = sum(r.instance_percentage for r in rows)
                if abs(total - 100.0) > 0.05 * max(1, len(rows)):
                    raise ValueError(f"{name} instance percentages must sum to 100 (got {total})")
        return self
