"""監視とロギングのテスト"""

import json
import logging

import pytest
from prometheus_client import CollectorRegistry

from src.core.logging_config import (
    LogContext,
    get_structured_logger,
    run_id_var,
    set_step,
    setup_logging,
    step_var,
)
from src.core.metrics import MetricsCollector, get_metrics_text, metrics, track_stage


@pytest.fixture
def collector():
    return MetricsCollector(registry=CollectorRegistry())


def _sample(collector, name, labels=None):
    return collector.registry.get_sample_value(name, labels or {})


class TestLoggingConfig:
    """ロギング設定のテスト"""

    def test_json_lines_carry_context(self, tmp_path):
        """JSON 形式では run_id と step がフィールドに入る"""
        log_file = tmp_path / "run.log"
        setup_logging(log_level="INFO", log_file=str(log_file), json_format=True)
        try:
            with LogContext(run_id="train-01", experiment_id="lambda=0.2"):
                set_step(7)
                get_structured_logger("algae.test").checkpoint_saved("model.pt", 7)
            for handler in logging.getLogger().handlers:
                handler.flush()
            records = [json.loads(line) for line in log_file.read_text(encoding="utf-8").splitlines()]
            step_records = [r for r in records if r.get("event_type") == "checkpoint_saved"]
            assert step_records
            assert step_records[-1]["run_id"] == "train-01"
            assert step_records[-1]["experiment_id"] == "lambda=0.2"
            assert step_records[-1]["step"] == 7
        finally:
            setup_logging(log_level="WARNING", json_format=False)

    def test_context_restored(self):
        set_step(None)
        with LogContext(run_id="outer"):
            with LogContext(run_id="inner"):
                set_step(3)
                assert run_id_var.get() == "inner"
            assert run_id_var.get() == "outer"
            assert step_var.get() is None

    def test_generated_run_id(self):
        with LogContext():
            assert run_id_var.get()

    def test_inner_context_keeps_run_id(self):
        """experiment_id だけを指定した内側のコンテキストは run_id を引き継ぐ"""
        with LogContext(run_id="sweep-0"):
            with LogContext(experiment_id="lambda=0.1"):
                assert run_id_var.get() == "sweep-0"


class TestMetricsCollector:
    """メトリクス収集のテスト"""

    def test_record_loss(self, collector):
        collector.record_loss(1.0, 0.5, 0.25, 1.55)
        assert _sample(collector, "algae_loss", {"component": "total"}) == pytest.approx(1.55)
        assert _sample(collector, "algae_loss", {"component": "cls"}) == pytest.approx(0.25)

    def test_record_map_skips_undefined(self, collector):
        collector.record_map(0.6, None)
        assert _sample(collector, "algae_map50", {"level": "genus"}) == pytest.approx(0.6)
        assert _sample(collector, "algae_map50", {"level": "class"}) is None
        assert _sample(collector, "algae_evaluations_total") == 1.0

    def test_track_stage_counts_errors(self, collector):
        with pytest.raises(ValueError):
            with collector.track_stage("eval"):
                raise ValueError("boom")
        labels = {"stage": "eval", "error_type": "ValueError"}
        assert _sample(collector, "algae_stage_errors_total", labels) == 1.0
        assert _sample(collector, "algae_stage_duration_seconds_count", {"stage": "eval"}) == 1.0

    def test_textfile(self, collector, tmp_path):
        collector.train_steps_total.inc(3)
        path = tmp_path / "metrics" / "train.prom"
        collector.write_textfile(path)
        assert "algae_train_steps_total 3.0" in path.read_text(encoding="utf-8")

    def test_decorator_uses_global_metrics(self):
        @track_stage("unit")
        def work():
            return 42

        assert work() == 42
        assert 'stage="unit"' in get_metrics_text()
        assert metrics.registry.get_sample_value("algae_stage_duration_seconds_count", {"stage": "unit"}) >= 1.0
