"""Prometheusメトリクス収集

このモジュールは、Prometheusメトリクスの収集と公開を提供します。
学習ステップ数、損失の各成分、学習率、評価 mAP、パイプライン各段の所要時間などを
監視できます。バッチ実行が前提なので、メトリクスは HTTP で公開せず、
実行終了時に ``--out`` 配下へテキストファイル（metrics.prom）として書き出します。

Example:
    >>> from src.core.metrics import metrics
    >>>
    >>> metrics.train_steps_total.inc()
    >>> with metrics.track_stage("train"):
    ...     trainer.train(...)
    >>> metrics.write_textfile(out_dir / "metrics.prom")
"""

import time
from pathlib import Path
from typing import Optional
import functools

from prometheus_client import (
    Counter,
    Gauge,
    Histogram,
    Info,
    CollectorRegistry,
    generate_latest,
    write_to_textfile,
)

from src.core.config import settings


class MetricsCollector:
    """メトリクスコレクター

    Attributes:
        registry: Prometheusレジストリ

        app_info: アプリケーション情報

        # 学習メトリクス
        train_steps_total: 学習ステップ数
        train_step_duration: 1 ステップの所要時間
        loss_value: 直近の損失（component ラベル: box / genus / cls / total）
        learning_rate: 直近の学習率
        grad_norm: 直近の勾配ノルム（クリップ前）
        numeric_failures_total: 非有限な損失・勾配による中断回数

        # 評価メトリクス
        evaluations_total: 評価回数
        map_value: 直近の mAP（level ラベル: genus / class）

        # データ生成
        images_generated_total: 生成した合成画像数
        instances_generated_total: 生成したインスタンス数

        # パイプライン
        stage_duration: 各段（gen, train, eval, sweep …）の所要時間
        stage_errors_total: 各段のエラー回数
    """

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        self.registry = registry or CollectorRegistry()

        # ============================================================================
        # アプリケーション情報
        # ============================================================================

        self.app_info = Info(
            'algae_app',
            'Application information',
            registry=self.registry
        )
        self.app_info.info({
            'app_name': settings.app_name,
            'environment': settings.environment,
            'version': '1.0.0'
        })

        # ============================================================================
        # 学習メトリクス
        # ============================================================================

        self.train_steps_total = Counter(
            'algae_train_steps_total',
            'Total number of optimizer steps',
            registry=self.registry
        )

        self.train_step_duration = Histogram(
            'algae_train_step_duration_seconds',
            'Duration of one training step in seconds',
            buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0),
            registry=self.registry
        )

        self.loss_value = Gauge(
            'algae_loss',
            'Most recent loss value',
            ['component'],  # box / genus / cls / total
            registry=self.registry
        )

        self.learning_rate = Gauge(
            'algae_learning_rate',
            'Most recent learning rate',
            registry=self.registry
        )

        self.grad_norm = Gauge(
            'algae_grad_norm',
            'Most recent gradient norm before clipping',
            registry=self.registry
        )

        self.numeric_failures_total = Counter(
            'algae_numeric_failures_total',
            'Number of runs aborted on non-finite loss or gradient',
            registry=self.registry
        )

        # ============================================================================
        # 評価メトリクス
        # ============================================================================

        self.evaluations_total = Counter(
            'algae_evaluations_total',
            'Total number of evaluations',
            registry=self.registry
        )

        self.map_value = Gauge(
            'algae_map50',
            'Most recent mAP@IoU=0.5',
            ['level'],  # genus / class
            registry=self.registry
        )

        # ============================================================================
        # データ生成メトリクス
        # ============================================================================

        self.images_generated_total = Counter(
            'algae_images_generated_total',
            'Total number of synthetic images generated',
            registry=self.registry
        )

        self.instances_generated_total = Counter(
            'algae_instances_generated_total',
            'Total number of annotated synthetic instances',
            registry=self.registry
        )

        # ============================================================================
        # パイプラインメトリクス
        # ============================================================================

        self.stage_duration = Histogram(
            'algae_stage_duration_seconds',
            'Pipeline stage duration in seconds',
            ['stage'],
            buckets=(0.1, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0, 1800.0, 7200.0),
            registry=self.registry
        )

        self.stage_errors_total = Counter(
            'algae_stage_errors_total',
            'Total number of pipeline stage errors',
            ['stage', 'error_type'],
            registry=self.registry
        )

    def get_metrics(self) -> bytes:
        """Prometheus形式のメトリクスを取得"""
        return generate_latest(self.registry)

    def write_textfile(self, path: Path) -> None:
        """メトリクスをテキストファイルに書き出す（node_exporter textfile 形式）"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), self.registry)

    def record_loss(self, l_box: float, l_genus: float, l_cls: float, l_total: float) -> None:
        """損失の各成分を記録"""
        self.loss_value.labels(component='box').set(l_box)
        self.loss_value.labels(component='genus').set(l_genus)
        self.loss_value.labels(component='cls').set(l_cls)
        self.loss_value.labels(component='total').set(l_total)

    def record_map(self, map_genus: Optional[float], map_class: Optional[float]) -> None:
        """評価 mAP を記録"""
        self.evaluations_total.inc()
        if map_genus is not None:
            self.map_value.labels(level='genus').set(map_genus)
        if map_class is not None:
            self.map_value.labels(level='class').set(map_class)

    def track_stage(self, stage: str):
        """パイプラインの段を追跡するコンテキストマネージャー

        Example:
            >>> with metrics.track_stage("eval"):
            ...     report = evaluate(...)
        """
        return _StageTracker(self, stage)


class _StageTracker:
    """段の所要時間とエラーを記録するコンテキストマネージャー"""

    def __init__(self, collector: MetricsCollector, stage: str):
        self.collector = collector
        self.stage = stage
        self.start_time = None

    def __enter__(self):
        self.start_time = time.time()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        duration = time.time() - self.start_time
        self.collector.stage_duration.labels(stage=self.stage).observe(duration)
        if exc_type:
            self.collector.stage_errors_total.labels(
                stage=self.stage,
                error_type=exc_type.__name__
            ).inc()
        # 例外を再発生させない（メトリクス収集は透過的）
        return False


def track_stage(stage: str):
    """段を追跡するデコレーター

    Example:
        >>> @track_stage("gen")
        ... def cmd_gen(args):
        ...     ...
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with metrics.track_stage(stage):
                return func(*args, **kwargs)
        return wrapper
    return decorator


# グローバルメトリクスインスタンス
metrics = MetricsCollector()


def get_metrics_text() -> str:
    """Prometheus形式のメトリクステキストを取得"""
    return metrics.get_metrics().decode('utf-8')
