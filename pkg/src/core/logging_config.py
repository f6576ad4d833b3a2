"""構造化ロギング設定

このモジュールは、JSON形式の構造化ロギングを提供します。
ログにはコンテキスト情報、タイムスタンプ、実行ID（run_id）、
λスイープのメンバーID（experiment_id）、学習ステップなどが含まれます。

Example:
    >>> from src.core.logging_config import get_logger, setup_logging
    >>>
    >>> setup_logging()
    >>> logger = get_logger(__name__)
    >>>
    >>> logger.info("Dataset loaded", extra={
    ...     "images": 20,
    ...     "instances": 84
    ... })
"""

import logging
import sys
from typing import Dict, Any, Optional
from datetime import datetime, timezone
from pathlib import Path
import uuid
from contextvars import ContextVar

from pythonjsonlogger import jsonlogger

from src.core.config import settings

# コンテキスト変数（実行・実験・ステップの追跡用）
run_id_var: ContextVar[Optional[str]] = ContextVar('run_id', default=None)
experiment_id_var: ContextVar[Optional[str]] = ContextVar('experiment_id', default=None)
step_var: ContextVar[Optional[int]] = ContextVar('step', default=None)


def _utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z')


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """カスタムJSONフォーマッター

    ログにカスタムフィールドを追加します：
    - timestamp: ISO 8601形式のタイムスタンプ
    - level: ログレベル
    - logger: ロガー名
    - run_id / experiment_id / step: コンテキストから取得
    """

    def add_fields(self, log_record: Dict[str, Any], record: logging.LogRecord, message_dict: Dict[str, Any]) -> None:
        """ログレコードにカスタムフィールドを追加"""
        super().add_fields(log_record, record, message_dict)

        log_record['timestamp'] = _utc_timestamp()
        log_record['level'] = record.levelname
        log_record['logger'] = record.name
        log_record['function'] = record.funcName

        run_id = run_id_var.get()
        if run_id:
            log_record['run_id'] = run_id

        experiment_id = experiment_id_var.get()
        if experiment_id:
            log_record['experiment_id'] = experiment_id

        step = step_var.get()
        if step is not None:
            log_record['step'] = step

        log_record['environment'] = settings.environment


class ContextFilter(logging.Filter):
    """コンテキスト情報をログに追加するフィルター"""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = run_id_var.get()
        record.experiment_id = experiment_id_var.get()
        record.step = step_var.get()
        return True


def setup_logging(
    log_level: Optional[str] = None,
    log_file: Optional[str] = None,
    json_format: Optional[bool] = None
) -> None:
    """ロギング設定を初期化

    Args:
        log_level: ログレベル（DEBUG, INFO, WARNING, ERROR, CRITICAL）
                  省略時はsettings.log_levelを使用
        log_file: ログファイルのパス（省略時はコンソール出力のみ）
        json_format: JSON形式でログを出力するか（省略時は settings.log_json）

    Example:
        >>> setup_logging()
        >>> setup_logging(log_file="runs/exp1/run.log")
        >>> setup_logging(json_format=False)
    """
    if log_level is None:
        log_level = settings.log_level
    if json_format is None:
        json_format = settings.log_json

    level = getattr(logging, log_level.upper())

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    if json_format:
        formatter = CustomJsonFormatter(
            '%(timestamp)s %(level)s %(logger)s %(message)s'
        )
    else:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

    # stdout は CLI の結果表示に使うのでログは stderr へ
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    console_handler.addFilter(ContextFilter())
    root_logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        file_handler.addFilter(ContextFilter())
        root_logger.addHandler(file_handler)

    # サードパーティライブラリのログレベルを調整
    logging.getLogger('PIL').setLevel(logging.WARNING)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)

    root_logger.info(
        "Logging configured",
        extra={
            "log_level": log_level,
            "log_file": log_file,
            "json_format": json_format
        }
    )


def get_logger(name: str) -> logging.Logger:
    """ロガーを取得

    Args:
        name: ロガー名（通常は__name__を指定）
    """
    return logging.getLogger(name)


def set_run_id(run_id: Optional[str] = None) -> str:
    """実行IDを設定

    Args:
        run_id: 実行ID（省略時は自動生成）

    Returns:
        設定された実行ID
    """
    if run_id is None:
        run_id = str(uuid.uuid4())

    run_id_var.set(run_id)
    return run_id


def set_experiment_id(experiment_id: str) -> None:
    """実験IDを設定（λスイープの各メンバーなど）"""
    experiment_id_var.set(experiment_id)


def set_step(step: Optional[int]) -> None:
    """現在の学習ステップを設定"""
    step_var.set(step)


class LogContext:
    """ログコンテキストマネージャー

    withステートメント内で run_id / experiment_id を自動設定・復元

    Example:
        >>> with LogContext(run_id="train-01", experiment_id="lambda=0.2"):
        ...     logger.info("Training started")
    """

    def __init__(
        self,
        run_id: Optional[str] = None,
        experiment_id: Optional[str] = None
    ):
        self.run_id = run_id
        self.experiment_id = experiment_id
        self._prev_run_id = None
        self._prev_experiment_id = None
        self._prev_step = None

    def __enter__(self):
        self._prev_run_id = run_id_var.get()
        self._prev_experiment_id = experiment_id_var.get()
        self._prev_step = step_var.get()

        # run_id 省略時は外側の値を引き継ぎ、無ければ生成する
        set_run_id(self.run_id or self._prev_run_id)
        if self.experiment_id:
            set_experiment_id(self.experiment_id)

        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        run_id_var.set(self._prev_run_id)
        experiment_id_var.set(self._prev_experiment_id)
        step_var.set(self._prev_step)


class StructuredLogger:
    """構造化ロギングの高レベルラッパー

    実行、学習ステップ、評価、チェックポイントのロギングを簡単にするためのクラス。
    自動的にコンテキスト情報を含め、イベントタイプごとに適切なログを記録します。

    Example:
        >>> logger = StructuredLogger(__name__)
        >>> logger.run_start("train", {"lambda": 0.2, "steps": 50})
        >>> logger.train_step(10, loss_total=1.23, lr=0.02)
        >>> logger.run_end("train", 12.3, success=True)
    """

    def __init__(self, name: str):
        self.logger = get_logger(name)

    def _add_context(self, data: Dict[str, Any]) -> Dict[str, Any]:
        context = dict(data)

        run_id = run_id_var.get()
        if run_id:
            context["run_id"] = run_id

        experiment_id = experiment_id_var.get()
        if experiment_id:
            context["experiment_id"] = experiment_id

        return context

    def info(self, message: str, **kwargs):
        self.logger.info(message, extra=self._add_context(kwargs))

    def warning(self, message: str, **kwargs):
        self.logger.warning(message, extra=self._add_context(kwargs))

    def error(self, message: str, exc_info=None, **kwargs):
        self.logger.error(message, extra=self._add_context(kwargs), exc_info=exc_info)

    def debug(self, message: str, **kwargs):
        self.logger.debug(message, extra=self._add_context(kwargs))

    def run_start(self, run_name: str, params: Dict[str, Any]):
        """実行開始ログ

        Args:
            run_name: 実行名（gen, train, eval, sweep, experiment）
            params: 主要パラメータ
        """
        self.info(
            f"Run started: {run_name}",
            event_type="run_start",
            run_name=run_name,
            **{f"param_{k}": v for k, v in params.items()}
        )

    def run_end(self, run_name: str, duration: float, success: bool, error: Optional[str] = None):
        """実行完了ログ"""
        if success:
            self.info(
                f"Run completed: {run_name}",
                event_type="run_end",
                run_name=run_name,
                duration_seconds=duration,
                success=success
            )
        else:
            self.error(
                f"Run failed: {run_name}",
                event_type="run_end",
                run_name=run_name,
                duration_seconds=duration,
                success=success,
                error=error
            )

    def train_step(self, step: int, **values: Any):
        """学習ステップログ（DEBUG。大量に出るため）"""
        self.debug(
            f"Train step {step}",
            event_type="train_step",
            train_step=step,
            **values
        )

    def eval_result(self, step: Optional[int], map_genus: float, map_class: float, **values: Any):
        """評価結果ログ"""
        self.info(
            "Evaluation finished",
            event_type="eval_result",
            eval_step=step,
            map_genus=map_genus,
            map_class=map_class,
            **values
        )

    def checkpoint_saved(self, path: str, step: int):
        """チェックポイント保存ログ"""
        self.info(
            f"Checkpoint saved: {path}",
            event_type="checkpoint_saved",
            path=path,
            checkpoint_step=step
        )

    def dataset_loaded(self, source: str, images: int, instances: int):
        """データセット読み込みログ"""
        self.info(
            f"Dataset loaded: {source}",
            event_type="dataset_loaded",
            source=source,
            images=images,
            instances=instances
        )


def get_structured_logger(name: str) -> StructuredLogger:
    """構造化ロガーを取得"""
    return StructuredLogger(name)
