"""
Experiment Workflow - データ読み込み → 学習 → 評価 → レポート

λ スイープの各メンバー、CLI の train / eval、desk パイプラインのスクリプトが
このグラフを使います。各ノードは失敗すると例外を状態に格納し、
条件付きエッジで END へ抜けます。
"""

from pathlib import Path
import time
from typing import Any, Dict, List, Literal, Optional

from langgraph.graph import END, START, StateGraph
from pydantic import BaseModel, ConfigDict, Field

from src.core.constants import IMAGE_SIZE, RARE_GENUS_THRESHOLD
from src.core.exceptions import AlgaeDetectionError, WorkflowBuildError, WorkflowExecutionError
from src.core.logging_config import LogContext, get_structured_logger
from src.core.metrics import metrics
from src.domain.models.detector import ModelConfig
from src.domain.models.evaluation import EvalConfig, EvalReport
from src.domain.models.training import EvalRecord, TrainConfig
from src.models.checkpoint import load_checkpoint
from src.services.data import load_dataset, prepare_dataset
from src.services.evaluation import (
    DETECTIONS_FILE,
    emit_report,
    evaluate_model_with_detections,
    render_detections,
    save_detections,
)
from src.services.training.trainer import Trainer

logger = get_structured_logger(__name__)

RENDER_DIR = "renders"


class ExperimentInput(BaseModel):
    """Experiment workflow input"""
    manifest: Path = Field(..., description="Dataset manifest directory or annotations.jsonl")
    out_dir: Path = Field(..., description="Output directory (all artifacts land here)")
    train_config: TrainConfig = Field(default_factory=lambda: TrainConfig.desk(total_steps=200))
    model_preset: Literal["desk", "full"] = Field(default="desk", description="ModelConfig preset")
    model_overrides: Dict[str, Any] = Field(default_factory=dict, description="ModelConfig field overrides")
    eval_config: EvalConfig = Field(default_factory=EvalConfig)
    split_seed: Optional[int] = Field(default=None, description="Train/test split seed (defaults to train seed)")
    rare_threshold: int = Field(default=RARE_GENUS_THRESHOLD, ge=0)
    checkpoint: Optional[Path] = Field(default=None, description="Evaluate this checkpoint instead of training")
    resume: Optional[Path] = Field(default=None, description="Resume training from this checkpoint")
    evaluate: bool = Field(default=True, description="Run the evaluate and report stages")
    track_eval: bool = Field(default=True, description="Evaluate on the test split at the eval cadence")
    report_format: Literal["csv", "text", "both"] = "both"
    show_progress: bool = False
    experiment_id: Optional[str] = None


class ExperimentOutput(BaseModel):
    """Experiment workflow output"""
    checkpoint: Optional[Path] = None
    log_path: Optional[Path] = None
    report: Optional[EvalReport] = None
    series: List[EvalRecord] = Field(default_factory=list, description="Eval-vs-step records")
    artifacts: List[str] = Field(default_factory=list)
    durations: Dict[str, float] = Field(default_factory=dict)
    success: bool = True
    failed_stage: Optional[str] = None
    error_type: Optional[str] = None
    error_message: str = ""
    error_details: Dict[str, Any] = Field(default_factory=dict)
    exit_code: int = 0


class ExperimentState(BaseModel):
    """グラフを流れる状態"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    input: ExperimentInput
    prepared: Optional[Any] = None
    model: Optional[Any] = None
    stats: Optional[Any] = None
    train_result: Optional[Any] = None
    report: Optional[EvalReport] = None
    detections: Optional[Dict[str, Any]] = None
    artifacts: List[str] = Field(default_factory=list)
    durations: Dict[str, float] = Field(default_factory=dict)
    error: Optional[Any] = None
    failed_stage: Optional[str] = None


def build_model_config(preset: str, num_genera: int, overrides: Dict[str, Any]) -> ModelConfig:
    from src.core.config import load_run_config

    base = ModelConfig.desk(num_genera) if preset == "desk" else ModelConfig.full(num_genera)
    values = base.model_dump()
    values.update(overrides)
    values["num_genera"] = num_genera
    return load_run_config(ModelConfig, values)


class ExperimentWorkflow:
    """学習・評価実験のワークフロー

    Example:
        >>> workflow = ExperimentWorkflow()
        >>> output = workflow.run(ExperimentInput(manifest=Path("corpus"), out_dir=Path("runs/a")))
        >>> output.report.map_genus
    """

    def __init__(self):
        self.graph = self._build_graph()

    def _build_graph(self):
        """LangGraphを構築"""
        try:
            workflow = StateGraph(ExperimentState)

            workflow.add_node("load_data", self._stage("load_data", self._load_data))
            workflow.add_node("train", self._stage("train", self._train))
            workflow.add_node("load_checkpoint", self._stage("load_checkpoint", self._load_checkpoint))
            workflow.add_node("evaluate", self._stage("evaluate", self._evaluate))
            workflow.add_node("report", self._stage("report", self._report))

            workflow.add_edge(START, "load_data")
            workflow.add_conditional_edges(
                "load_data",
                self._route_after_load,
                {"train": "train", "load_checkpoint": "load_checkpoint", "end": END},
            )
            for node in ("train", "load_checkpoint"):
                workflow.add_conditional_edges(
                    node,
                    self._route_to_evaluate,
                    {"evaluate": "evaluate", "end": END},
                )
            workflow.add_conditional_edges(
                "evaluate",
                lambda state: "end" if state.error is not None else "report",
                {"report": "report", "end": END},
            )
            workflow.add_edge("report", END)
            return workflow.compile()
        except Exception as e:
            raise WorkflowBuildError("Failed to build experiment graph", original_error=e)

    @staticmethod
    def _stage(name: str, func):
        """ノード関数を包み、所要時間と例外を状態に記録する"""
        def node(state: ExperimentState) -> Dict[str, Any]:
            started = time.perf_counter()
            try:
                with metrics.track_stage(name):
                    update = func(state)
            except AlgaeDetectionError as e:
                logger.error(f"Stage failed: {name}", stage=name, error_type=type(e).__name__, details=e.details)
                update = {"error": e, "failed_stage": name}
            except Exception as e:
                logger.error(f"Stage failed: {name}", exc_info=True, stage=name)
                update = {
                    "error": WorkflowExecutionError(f"Stage '{name}' failed: {e}", details={"stage": name}, original_error=e),
                    "failed_stage": name,
                }
            durations = dict(state.durations)
            durations[name] = time.perf_counter() - started
            update["durations"] = durations
            return update
        return node

    @staticmethod
    def _route_after_load(state: ExperimentState) -> str:
        if state.error is not None:
            return "end"
        return "load_checkpoint" if state.input.checkpoint is not None else "train"

    @staticmethod
    def _route_to_evaluate(state: ExperimentState) -> str:
        if state.error is not None or not state.input.evaluate:
            return "end"
        return "evaluate"

    def _load_data(self, state: ExperimentState) -> Dict[str, Any]:
        inp = state.input
        images, taxonomy = load_dataset(inp.manifest)
        split_seed = inp.split_seed if inp.split_seed is not None else inp.train_config.seed
        image_size = inp.model_overrides.get("image_size", IMAGE_SIZE)
        prepared = prepare_dataset(images, taxonomy, split_seed, image_size=image_size, threshold=inp.rare_threshold)
        return {"prepared": prepared, "stats": prepared.stats}

    def _train(self, state: ExperimentState) -> Dict[str, Any]:
        inp = state.input
        prepared = state.prepared
        model_config = build_model_config(inp.model_preset, prepared.taxonomy.num_genera, inp.model_overrides)
        trainer = Trainer(
            prepared,
            model_config,
            inp.train_config,
            inp.out_dir,
            eval_images=prepared.test if inp.track_eval and prepared.test else None,
            show_progress=inp.show_progress,
            eval_config=inp.eval_config,
        )
        result = trainer.run(resume=inp.resume)
        artifacts = list(state.artifacts) + [str(p) for p in result.checkpoints] + [str(result.log_path)]
        return {"train_result": result, "model": result.model, "report": result.report, "artifacts": artifacts}

    def _load_checkpoint(self, state: ExperimentState) -> Dict[str, Any]:
        ckpt = load_checkpoint(state.input.checkpoint, taxonomy=state.prepared.taxonomy)
        # 学習時の標準化統計で入力を揃える
        return {"model": ckpt.model, "stats": ckpt.stats}

    def _evaluate(self, state: ExperimentState) -> Dict[str, Any]:
        inp = state.input
        cfg = inp.eval_config
        # 学習の最終評価が同じ設定で済んでいれば再利用する
        if state.report is not None and not cfg.render:
            return {}
        test = state.prepared.test
        if not test:
            raise WorkflowExecutionError("Test split is empty", details={"manifest": str(inp.manifest)})
        report, detections = evaluate_model_with_detections(
            state.model,
            test,
            state.stats,
            score_floor=cfg.score_floor,
            nms_iou=cfg.nms_iou,
            hierarchy_alpha=cfg.hierarchy_alpha,
            batch_size=cfg.batch_size,
            iou_threshold=cfg.iou_threshold,
        )
        logger.eval_result(None, report.map_genus, report.map_class, aca_genus=report.aca_genus, aca_class=report.aca_class)
        return {"report": report, "detections": detections}

    def _report(self, state: ExperimentState) -> Dict[str, Any]:
        inp = state.input
        out_dir = Path(inp.out_dir)
        written = emit_report(state.report, out_dir, inp.report_format, inp.eval_config.report_cutoff)
        artifacts = list(state.artifacts) + [str(p) for p in written]
        if state.detections is not None:
            artifacts.append(str(save_detections(out_dir / DETECTIONS_FILE, state.detections)))
            if inp.eval_config.render:
                for img in state.prepared.test:
                    path = render_detections(
                        img,
                        state.detections.get(img.image_id, []),
                        out_dir / RENDER_DIR / f"{img.image_id}.png",
                    )
                    artifacts.append(str(path))
        return {"artifacts": artifacts}

    def run(self, input_data: ExperimentInput, raise_on_error: bool = True) -> ExperimentOutput:
        """ワークフローを実行

        Args:
            input_data: 実験入力
            raise_on_error: 失敗時に元の例外を送出するか（False なら success=False の出力を返す）

        Raises:
            AlgaeDetectionError: いずれかの段で失敗した場合（raise_on_error=True）
        """
        experiment_id = input_data.experiment_id
        with LogContext(experiment_id=experiment_id):
            started = time.time()
            logger.run_start("experiment", {
                "manifest": str(input_data.manifest),
                "out_dir": str(input_data.out_dir),
                "lambda": input_data.train_config.lam,
                "checkpoint": str(input_data.checkpoint) if input_data.checkpoint else None,
            })
            result = self.graph.invoke(ExperimentState(input=input_data))
            state = ExperimentState.model_validate(result) if isinstance(result, dict) else result

            error = state.error
            logger.run_end(
                "experiment",
                time.time() - started,
                success=error is None,
                error=str(error) if error is not None else None,
            )
        if error is not None and raise_on_error:
            raise error

        train_result = state.train_result
        output = ExperimentOutput(
            checkpoint=train_result.checkpoint if train_result is not None else input_data.checkpoint,
            log_path=train_result.log_path if train_result is not None else None,
            report=state.report,
            series=list(train_result.log.evals) if train_result is not None else [],
            artifacts=state.artifacts,
            durations=state.durations,
        )
        if error is not None:
            output.success = False
            output.failed_stage = state.failed_stage
            output.error_type = type(error).__name__
            output.error_message = str(error)
            output.error_details = {k: v for k, v in getattr(error, "details", {}).items()}
            output.exit_code = getattr(error, "exit_code", 1)
        return output
