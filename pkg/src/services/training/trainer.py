"""学習ループ

1 ステップ = 1 バッチの SGD 更新です。損失または勾配が有限でなくなったら、
更新前の（最後に正常だった）重みをチェックポイントに書いてから NumericError で止めます。
"""

from dataclasses import dataclass
import math
from pathlib import Path
import time
from typing import List, Optional, Sequence

import torch
from tqdm import tqdm

from src.core.config import settings
from src.core.exceptions import ConfigurationError, NumericError
from src.core.logging_config import get_structured_logger, set_step
from src.core.metrics import metrics
from src.domain.models.dataset import AnnotatedImage
from src.domain.models.detector import LossWeights, ModelConfig
from src.domain.models.evaluation import EvalConfig, EvalReport
from src.domain.models.training import EvalRecord, StepRecord, TrainConfig, TrainLog
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.detector import AlgaeDetector
from src.services.data import AugmentedDataset, PreparedDataset, iterate_batches
from src.services.evaluation import evaluate_model
from src.services.training.schedule import build_optimizer, build_scheduler, trainable_parameters
from src.services.training.train_log import TRAIN_LOG_FILE, TrainLogWriter, read_train_log

logger = get_structured_logger(__name__)

FINAL_CHECKPOINT = "model_final.pt"
LAST_GOOD_CHECKPOINT = "last_good.pt"


def checkpoint_name(step: int) -> str:
    return f"step_{step:06d}.pt"


@dataclass
class TrainResult:
    """学習の成果物"""
    model: AlgaeDetector
    log: TrainLog
    checkpoint: Path
    log_path: Path
    checkpoints: List[Path]
    report: Optional[EvalReport] = None


class Trainer:
    """SGD + MultiStepLR の学習器

    Example:
        >>> trainer = Trainer(prepared, ModelConfig.desk(prepared.taxonomy.num_genera),
        ...                   TrainConfig.desk(total_steps=200), out_dir)
        >>> result = trainer.run()
    """

    def __init__(
        self,
        prepared: PreparedDataset,
        model_config: ModelConfig,
        train_config: TrainConfig,
        out_dir: Path,
        eval_images: Optional[Sequence[AnnotatedImage]] = None,
        show_progress: bool = False,
        eval_config: Optional[EvalConfig] = None,
    ):
        if not prepared.train:
            raise ConfigurationError("Training dataset is empty")
        if model_config.num_genera != prepared.taxonomy.num_genera:
            raise ConfigurationError(
                "ModelConfig.num_genera does not match the merged taxonomy",
                details={"num_genera": model_config.num_genera, "taxonomy_genera": prepared.taxonomy.num_genera}
            )
        self.prepared = prepared
        self.model_config = model_config
        self.config = train_config
        self.out_dir = Path(out_dir)
        self.eval_images = list(eval_images) if eval_images is not None else None
        self.show_progress = show_progress
        self.eval_config = eval_config or EvalConfig()
        self.device = torch.device(settings.device)
        self.weights = LossWeights(lam=train_config.lam)
        self.last_report: Optional[EvalReport] = None

    def _build(self, resume: Optional[Path]):
        torch.manual_seed(self.config.seed)
        model = AlgaeDetector(self.model_config, self.prepared.taxonomy)
        # 重み初期化で消費した乱数を戻し、サンプラーの乱数列をヘッド構成に依らず揃える
        torch.manual_seed(self.config.seed)
        optimizer = build_optimizer(model, self.config)
        scheduler = build_scheduler(optimizer, self.config)
        start_step = 0
        if resume is not None:
            ckpt = load_checkpoint(resume, taxonomy=self.prepared.taxonomy)
            model.load_state_dict(ckpt.model.state_dict())
            if ckpt.optimizer_state is not None:
                optimizer.load_state_dict(ckpt.optimizer_state)
            if ckpt.scheduler_state is not None:
                scheduler.load_state_dict(ckpt.scheduler_state)
            start_step = ckpt.step
            logger.info("Resuming training", step=start_step, checkpoint=str(resume))
        model.to(self.device)
        model.train()
        return model, optimizer, scheduler, start_step

    def _save(self, name: str, model, optimizer, scheduler, step: int) -> Path:
        return save_checkpoint(
            self.out_dir / name,
            model,
            step,
            self.prepared.stats,
            optimizer_state=optimizer.state_dict(),
            scheduler_state=scheduler.state_dict(),
        )

    def _evaluate(self, model: AlgaeDetector, step: int) -> Optional[EvalRecord]:
        if not self.eval_images:
            return None
        cfg = self.eval_config
        report = evaluate_model(
            model,
            self.eval_images,
            self.prepared.stats,
            score_floor=cfg.score_floor,
            nms_iou=cfg.nms_iou,
            hierarchy_alpha=cfg.hierarchy_alpha,
            batch_size=cfg.batch_size,
            iou_threshold=cfg.iou_threshold,
        )
        model.train()
        record = EvalRecord(
            step=step,
            map_genus=report.map_genus,
            map_class=report.map_class,
            aca_genus=report.aca_genus,
            aca_class=report.aca_class,
        )
        metrics.record_map(report.map_genus, report.map_class)
        logger.eval_result(step, report.map_genus, report.map_class, aca_genus=report.aca_genus)
        self.last_report = report
        return record

    def _abort(self, model, optimizer, scheduler, step: int, message: str, details: dict) -> NumericError:
        metrics.numeric_failures_total.inc()
        path = self._save(LAST_GOOD_CHECKPOINT, model, optimizer, scheduler, step)
        logger.error(message, step=step, checkpoint=str(path), **details)
        return NumericError(message, details={"step": step, "checkpoint": str(path), "lambda": self.config.lam, **details})

    def run(self, resume: Optional[Path] = None) -> TrainResult:
        """学習を実行する

        Args:
            resume: 再開するチェックポイント（optimizer / scheduler の状態も復元）

        Raises:
            NumericError: 損失または勾配が有限でない
        """
        config = self.config
        model, optimizer, scheduler, start_step = self._build(resume)
        params = trainable_parameters(model)

        dataset = AugmentedDataset(
            self.prepared.train,
            self.prepared.taxonomy,
            self.prepared.stats,
            seed=config.seed,
            size=self.model_config.image_size,
            augment=config.augment,
            rotate_probability=config.rotate_probability,
            crop_min_fraction=config.crop_min_fraction,
        )

        log_path = self.out_dir / TRAIN_LOG_FILE
        log = read_train_log(log_path) if resume is not None and log_path.exists() else TrainLog()
        checkpoints: List[Path] = []
        logger.run_start("train", {
            "lambda": config.lam,
            "total_steps": config.total_steps,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "start_step": start_step,
        })
        started = time.time()

        batches = iterate_batches(dataset, config.batch_size, config.total_steps, config.seed, start_step)
        progress = tqdm(
            batches,
            total=config.total_steps - start_step,
            disable=not self.show_progress,
            desc=f"train λ={config.lam}",
        )
        with TrainLogWriter(log_path, append=resume is not None) as writer:
            for step, images, targets in progress:
                t0 = time.perf_counter()
                set_step(step)
                images = images.to(self.device)
                targets = [{k: v.to(self.device) for k, v in t.items()} for t in targets]
                lr = optimizer.param_groups[0]["lr"]

                try:
                    output = model(images, targets)
                    terms = model.compute_loss(output, self.weights)
                except NumericError as e:
                    raise self._abort(model, optimizer, scheduler, step, "Non-finite loss", e.details)

                optimizer.zero_grad(set_to_none=True)
                terms.l_total.backward()
                grad_norm = float(torch.nn.utils.clip_grad_norm_(params, config.grad_clip_norm))
                if not math.isfinite(grad_norm):
                    raise self._abort(
                        model, optimizer, scheduler, step, "Non-finite gradient",
                        {"grad_norm": str(grad_norm), **terms.breakdown().as_dict()},
                    )
                optimizer.step()
                scheduler.step()

                breakdown = terms.breakdown()
                record = StepRecord(
                    step=step,
                    l_box=breakdown.l_box,
                    l_genus=breakdown.l_genus,
                    l_cls=breakdown.l_cls,
                    l_total=breakdown.l_total,
                    lam=breakdown.lam,
                    lr=lr,
                    grad_norm=grad_norm,
                    wall_time=time.perf_counter() - t0,
                )
                log.add_step(record)
                writer.write(record)

                metrics.train_steps_total.inc()
                metrics.train_step_duration.observe(record.wall_time)
                metrics.record_loss(breakdown.l_box, breakdown.l_genus, breakdown.l_cls, breakdown.l_total)
                metrics.learning_rate.set(lr)
                metrics.grad_norm.set(grad_norm)
                logger.train_step(step, lr=lr, grad_norm=grad_norm, **breakdown.as_dict())
                progress.set_postfix(loss=f"{breakdown.l_total:.4f}")

                completed = step + 1
                if config.checkpoint_every and completed % config.checkpoint_every == 0 and completed < config.total_steps:
                    checkpoints.append(self._save(checkpoint_name(completed), model, optimizer, scheduler, completed))
                if config.eval_every and completed % config.eval_every == 0 and completed < config.total_steps:
                    eval_record = self._evaluate(model, completed)
                    if eval_record is not None:
                        log.add_eval(eval_record)
                        writer.write(eval_record)

            final_step = config.total_steps
            final = self._save(FINAL_CHECKPOINT, model, optimizer, scheduler, final_step)
            checkpoints.append(final)
            eval_record = self._evaluate(model, final_step)
            if eval_record is not None:
                log.add_eval(eval_record)
                writer.write(eval_record)

        set_step(None)
        logger.run_end("train", time.time() - started, success=True)
        return TrainResult(
            model=model,
            log=log,
            checkpoint=final,
            log_path=log_path,
            checkpoints=checkpoints,
            report=self.last_report,
        )


def train(
    prepared: PreparedDataset,
    train_config: TrainConfig,
    model_config: ModelConfig,
    out_dir: Path,
    eval_images: Optional[Sequence[AnnotatedImage]] = None,
    resume: Optional[Path] = None,
    show_progress: bool = False,
    eval_config: Optional[EvalConfig] = None,
) -> TrainResult:
    """学習を実行する（関数版）"""
    trainer = Trainer(prepared, model_config, train_config, out_dir, eval_images, show_progress, eval_config)
    return trainer.run(resume=resume)
