"""λ スイープ

λ ごとに同じシードで学習 + 評価を 1 回ずつ行い、最終 mAP と評価点の系列を集めます。
メンバーの失敗はスイープ全体を止めず、その行に注記して残します。
"""

from concurrent.futures import ProcessPoolExecutor
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.core.constants import RARE_GENUS_THRESHOLD
from src.core.exceptions import ConfigurationError, IngestionError
from src.core.logging_config import get_structured_logger
from src.domain.models.evaluation import EvalConfig
from src.domain.models.training import EvalRecord, TrainConfig

logger = get_structured_logger(__name__)

SWEEP_CSV = "sweep.csv"
SWEEP_FAILURES = "sweep_failures.json"
SWEEP_COLUMNS = ["lambda", "final_map_genus", "final_map_class"]
SERIES_COLUMNS = ["step", "map_genus", "map_class"]
DEFAULT_LAMBDAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


class SweepRow(BaseModel):
    """1 つの λ の結果"""

    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(..., ge=0, alias="lambda")
    final_map_genus: Optional[float] = None
    final_map_class: Optional[float] = None
    out_dir: Optional[str] = None
    error_type: Optional[str] = None
    error_message: Optional[str] = None
    failed_stage: Optional[str] = None
    exit_code: int = 0

    @property
    def failed(self) -> bool:
        return self.error_type is not None


class SweepReport(BaseModel):
    """λ 昇順の行と、λ ごとの評価点の系列"""

    rows: List[SweepRow] = Field(default_factory=list)
    series: Dict[str, List[EvalRecord]] = Field(default_factory=dict)

    @property
    def failures(self) -> List[SweepRow]:
        return [r for r in self.rows if r.failed]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.lam, r.final_map_genus, r.final_map_class] for r in self.rows],
            columns=SWEEP_COLUMNS,
        )

    def best(self) -> Optional[SweepRow]:
        """最終属レベル mAP が最大の行（同点は小さい λ）"""
        done = [r for r in self.rows if r.final_map_genus is not None]
        if not done:
            return None
        return max(done, key=lambda r: (r.final_map_genus, -r.lam))


def lambda_key(lam: float) -> str:
    return f"{lam:g}"


def member_dir(out_dir: Path, lam: float) -> Path:
    return Path(out_dir) / f"lambda_{lambda_key(lam)}"


def parse_lambdas(text: str) -> List[float]:
    """"0,0.1,0.2" → [0.0, 0.1, 0.2]"""
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError("Invalid lambda list", details={"lambdas": text}, original_error=e)
    return validate_lambdas(values)


def validate_lambdas(values: Iterable[float]) -> List[float]:
    values = [float(v) for v in values]
    if not values:
        raise ConfigurationError("At least one lambda is required")
    if any(v < 0 for v in values):
        raise ConfigurationError("Lambda values must be non-negative", details={"lambdas": values})
    if len(set(values)) != len(values):
        raise ConfigurationError("Lambda values must be distinct", details={"lambdas": values})
    return sorted(values)


def _run_member(input_data) -> Any:
    from src.workflows.experiment import ExperimentWorkflow

    return ExperimentWorkflow().run(input_data, raise_on_error=False)


def sweep_lambda(
    manifest: Path,
    template: TrainConfig,
    lambdas: Sequence[float],
    out_dir: Path,
    model_preset: str = "desk",
    model_overrides: Optional[Dict[str, Any]] = None,
    eval_config: Optional[EvalConfig] = None,
    jobs: int = 1,
    split_seed: Optional[int] = None,
    rare_threshold: int = RARE_GENUS_THRESHOLD,
    show_progress: bool = False,
) -> SweepReport:
    """λ ごとに学習 + 評価を行う

    各メンバーは ``out_dir/lambda_<λ>/`` に成果物を書き、template の seed を共有します。

    Args:
        manifest: データセットのマニフェスト
        template: λ 以外の学習設定
        lambdas: λ の値（重複不可、0 以上）
        out_dir: 出力ディレクトリ
        jobs: 並列に走らせるメンバー数（プロセス）

    Raises:
        ConfigurationError: λ の指定が不正
    """
    from src.workflows.experiment import ExperimentInput

    lambdas = validate_lambdas(lambdas)
    if jobs < 1:
        raise ConfigurationError("jobs must be positive", details={"jobs": jobs})
    eval_config = eval_config or EvalConfig()
    inputs = [
        ExperimentInput(
            manifest=manifest,
            out_dir=member_dir(out_dir, lam),
            train_config=template.model_copy(update={"lam": lam}),
            model_preset=model_preset,
            model_overrides=dict(model_overrides or {}),
            eval_config=eval_config,
            split_seed=split_seed,
            rare_threshold=rare_threshold,
            show_progress=show_progress and jobs == 1,
            experiment_id=f"lambda={lambda_key(lam)}",
        )
        for lam in lambdas
    ]
    logger.run_start("sweep", {"lambdas": lambdas, "jobs": jobs, "total_steps": template.total_steps})

    if jobs == 1:
        outputs = [_run_member(inp) for inp in inputs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_member, inputs))

    report = SweepReport()
    for lam, inp, output in zip(lambdas, inputs, outputs):
        row = SweepRow(lam=lam, out_dir=str(inp.out_dir))
        if output.success and output.report is not None:
            row.final_map_genus = output.report.map_genus
            row.final_map_class = output.report.map_class
        else:
            row.error_type = output.error_type or "EvaluationError"
            row.error_message = output.error_message or "No final evaluation"
            row.failed_stage = output.failed_stage
            row.exit_code = output.exit_code or 1
            logger.warning("Sweep member failed", lam=lam, error_type=row.error_type, error=row.error_message)
        report.rows.append(row)
        report.series[lambda_key(lam)] = list(output.series)
    return report


def write_sweep(report: SweepReport, out_dir: Path) -> List[Path]:
    """sweep.csv、λ ごとの series_lambda_<λ>.csv、失敗があれば sweep_failures.json を書く

    Raises:
        IngestionError: 書き込めない
    """
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / SWEEP_CSV
        report.frame().to_csv(path, index=False, float_format="%.10g")
        written.append(path)
        for key, records in report.series.items():
            path = out_dir / f"series_lambda_{key}.csv"
            frame = pd.DataFrame(
                [[r.step, r.map_genus, r.map_class] for r in records],
                columns=SERIES_COLUMNS,
            )
            frame.to_csv(path, index=False, float_format="%.10g")
            written.append(path)
        if report.failures:
            path = out_dir / SWEEP_FAILURES
            path.write_text(
                json.dumps([r.model_dump(by_alias=True) for r in report.failures], indent=2),
                encoding="utf-8",
            )
            written.append(path)
    except OSError as e:
        raise IngestionError("Sweep output not writable", details={"out_dir": str(out_dir)}, original_error=e)
    return written


def read_sweep_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise IngestionError("Sweep CSV not readable", details={"path": str(path)}, original_error=e)
