"""学習ループ、学習率スケジュール、学習ログ、スイープ集計のテスト"""

import json

import pytest
import torch
from pydantic import ValidationError

from src.core.exceptions import ConfigurationError, DataValidationError, IngestionError, NumericError
from src.domain.models.training import EvalRecord, StepRecord, TrainConfig, TrainLog
from src.models.checkpoint import load_checkpoint
from src.models.detector import AlgaeDetector
from src.services.data import load_dataset, prepare_dataset
from src.services.training import (
    FINAL_CHECKPOINT,
    LAST_GOOD_CHECKPOINT,
    SWEEP_CSV,
    SweepReport,
    SweepRow,
    build_optimizer,
    build_scheduler,
    checkpoint_name,
    lr_at,
    parse_lambdas,
    plot_sweep,
    read_sweep_csv,
    read_train_log,
    train,
    write_sweep,
)
from src.services.training.train_log import TRAIN_LOG_FILE

from tests.conftest import TINY_IMAGE_SIZE


@pytest.fixture
def prepared(tiny_corpus):
    images, taxonomy = load_dataset(tiny_corpus)
    return prepare_dataset(images, taxonomy, seed=0, image_size=TINY_IMAGE_SIZE, threshold=0)


def _step(step, l_box=1.0, l_genus=0.5, l_cls=0.25, lam=0.2, **overrides):
    values = dict(
        step=step,
        l_box=l_box,
        l_genus=l_genus,
        l_cls=l_cls,
        l_total=l_box + l_genus + lam * l_cls,
        lam=lam,
        lr=0.02,
        grad_norm=1.0,
        wall_time=0.1,
    )
    values.update(overrides)
    return StepRecord(**values)


class TestSchedule:
    """学習率スケジュールのテスト"""

    def test_full_schedule(self):
        config = TrainConfig.full()
        assert lr_at(0, config) == pytest.approx(0.02)
        assert lr_at(5999, config) == pytest.approx(0.02)
        assert lr_at(6000, config) == pytest.approx(0.002)
        assert lr_at(7000, config) == pytest.approx(0.0002)
        assert lr_at(7999, config) == pytest.approx(0.0002)

    def test_desk_schedule(self):
        config = TrainConfig.desk(8)
        assert config.decay_steps == (6, 7)
        assert config.batch_size == 2
        assert [lr_at(s, config) for s in range(8)] == pytest.approx([0.02] * 6 + [0.002, 0.0002])

    def test_desk_short_run(self):
        """短い学習でも減衰ステップは狭義単調増加"""
        assert TrainConfig.desk(1).decay_steps == (1, 2)

    def test_scheduler_matches_lr_at(self):
        config = TrainConfig.desk(12)
        optimizer = build_optimizer(torch.nn.Linear(2, 2), config)
        scheduler = build_scheduler(optimizer, config)
        for step in range(12):
            assert optimizer.param_groups[0]["lr"] == pytest.approx(lr_at(step, config))
            optimizer.step()
            scheduler.step()

    def test_linear_scaling(self):
        config = TrainConfig(batch_size=8, scale_lr_with_batch=True)
        assert config.effective_lr == pytest.approx(0.02 * 8 / 32)

    def test_negative_step(self):
        with pytest.raises(DataValidationError):
            lr_at(-1, TrainConfig.full())

    def test_decay_steps_must_increase(self):
        with pytest.raises(ValidationError):
            TrainConfig(decay_steps=(7000, 6000))

    def test_lambda_alias(self):
        assert TrainConfig(**{"lambda": 0.4}).lam == 0.4
        with pytest.raises(ValidationError):
            TrainConfig(lam=-0.1)


class TestTrainLog:
    """TrainLog と train_log.jsonl のテスト"""

    def test_steps_strictly_increasing(self):
        log = TrainLog()
        log.add_step(_step(0))
        with pytest.raises(DataValidationError):
            log.add_step(_step(0))

    def test_identity_error(self):
        log = TrainLog()
        log.add_step(_step(0))
        log.add_step(_step(1, l_total=10.0))
        assert log.max_identity_error() == pytest.approx(abs(10.0 - 1.55) / 10.0)

    def test_trailing_mean(self):
        log = TrainLog()
        for s in range(5):
            log.add_step(_step(s, l_box=float(s)))
        assert log.trailing_mean(4, window=2) == pytest.approx((3.55 + 4.55) / 2)
        with pytest.raises(DataValidationError):
            TrainLog().trailing_mean(0)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / TRAIN_LOG_FILE
        path.write_text(_step(0).model_dump_json(by_alias=True) + "\n{\"event\": \"step\"}\n", encoding="utf-8")
        with pytest.raises(IngestionError) as exc_info:
            read_train_log(path)
        assert exc_info.value.details["line"] == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            read_train_log(tmp_path / TRAIN_LOG_FILE)


class TestTrain:
    """学習ループのテスト"""

    def test_smoke(self, prepared, tiny_model_config, tmp_path):
        """数ステップ学習してログ・チェックポイント・評価が揃う"""
        config = TrainConfig.desk(4, seed=3)
        model_config = tiny_model_config(prepared.taxonomy.num_genera)
        result = train(prepared, config, model_config, tmp_path, eval_images=prepared.test)

        assert [r.step for r in result.log.steps] == [0, 1, 2, 3]
        assert result.log.max_identity_error() <= 1e-6
        assert [r.lr for r in result.log.steps] == pytest.approx([lr_at(s, config) for s in range(4)])
        assert all(r.lam == 0.2 for r in result.log.steps)
        assert result.checkpoint == tmp_path / FINAL_CHECKPOINT
        assert result.report is not None
        assert result.log.last_eval.step == 4

        on_disk = read_train_log(tmp_path)
        assert on_disk.steps == result.log.steps
        assert on_disk.evals == result.log.evals

        ckpt = load_checkpoint(result.checkpoint, taxonomy=prepared.taxonomy)
        assert ckpt.step == 4
        assert ckpt.stats == prepared.stats

    def test_deterministic(self, prepared, tiny_model_config, tmp_path):
        config = TrainConfig.desk(2, seed=5)
        model_config = tiny_model_config(prepared.taxonomy.num_genera)
        a = train(prepared, config, model_config, tmp_path / "a")
        b = train(prepared, config, model_config, tmp_path / "b")
        assert [r.l_total for r in a.log.steps] == [r.l_total for r in b.log.steps]

    def test_zero_lambda_follows_model_without_class_branch(self, prepared, tiny_model_config, tmp_path):
        """λ = 0 の数ステップの学習は Branch-3 の無いモデルと同じ損失列・同じ共有重みになる"""
        config = TrainConfig.desk(4, lam=0.0, seed=1)
        num_genera = prepared.taxonomy.num_genera
        with_branch = train(prepared, config, tiny_model_config(num_genera), tmp_path / "with")
        without = train(prepared, config, tiny_model_config(num_genera, class_branch=False), tmp_path / "without")

        for a, b in zip(with_branch.log.steps, without.log.steps):
            assert a.l_box == pytest.approx(b.l_box, rel=1e-6)
            assert a.l_genus == pytest.approx(b.l_genus, rel=1e-6)
            assert a.l_total == pytest.approx(b.l_total, rel=1e-6)
        assert len(with_branch.log.steps) == len(without.log.steps) == 4

        shared = dict(without.model.named_parameters())
        for name, p in with_branch.model.named_parameters():
            if name.startswith("roi_heads.class_predictor"):
                continue
            assert torch.allclose(p.detach(), shared[name].detach(), rtol=1e-6, atol=1e-7), name

    def test_intermediate_checkpoints_and_resume(self, prepared, tiny_model_config, tmp_path):
        """途中のチェックポイントから再開すると続きのステップから記録される"""
        config = TrainConfig.desk(4, seed=1, checkpoint_every=2)
        model_config = tiny_model_config(prepared.taxonomy.num_genera)
        first = train(prepared, config, model_config, tmp_path / "full")
        middle = tmp_path / "full" / checkpoint_name(2)
        assert middle in first.checkpoints

        resumed = train(prepared, config, model_config, tmp_path / "resumed", resume=middle)
        assert [r.step for r in resumed.log.steps] == [2, 3]
        assert [r.lr for r in resumed.log.steps] == pytest.approx([lr_at(2, config), lr_at(3, config)])
        assert load_checkpoint(resumed.checkpoint).step == 4

    def test_model_config_mismatch(self, prepared, tiny_model_config, tmp_path):
        with pytest.raises(ConfigurationError):
            train(prepared, TrainConfig.desk(1), tiny_model_config(prepared.taxonomy.num_genera + 1), tmp_path)

    def test_numeric_failure_saves_last_good(self, prepared, tiny_model_config, tmp_path, monkeypatch):
        """損失が有限でなければ更新前の重みを書いて止まる"""
        def broken(self, output, weights):
            raise NumericError("Non-finite loss", details={"l_genus": "nan"})

        monkeypatch.setattr(AlgaeDetector, "compute_loss", broken)
        with pytest.raises(NumericError) as exc_info:
            train(prepared, TrainConfig.desk(2, lam=0.3), tiny_model_config(prepared.taxonomy.num_genera), tmp_path)
        assert exc_info.value.details["step"] == 0
        assert exc_info.value.details["lambda"] == 0.3
        assert (tmp_path / LAST_GOOD_CHECKPOINT).exists()


class TestSweepReport:
    """スイープ集計のテスト"""

    def _report(self):
        return SweepReport(
            rows=[
                SweepRow(lam=0.0, final_map_genus=0.5, final_map_class=0.6),
                SweepRow(lam=0.2, final_map_genus=0.7, final_map_class=0.8),
                SweepRow(lam=0.4, final_map_genus=0.7, final_map_class=0.75),
                SweepRow(lam=0.5, error_type="NumericError", error_message="Non-finite loss", exit_code=5),
            ],
            series={
                "0": [EvalRecord(step=2, map_genus=0.4), EvalRecord(step=4, map_genus=0.5)],
                "0.2": [EvalRecord(step=4, map_genus=0.7)],
            },
        )

    def test_parse_lambdas(self):
        assert parse_lambdas("0.2,0,0.1") == [0.0, 0.1, 0.2]

    @pytest.mark.parametrize("text", ["", "a", "0.1,-0.1", "0.1,0.1"])
    def test_parse_lambdas_invalid(self, text):
        with pytest.raises(ConfigurationError):
            parse_lambdas(text)

    def test_best_prefers_smaller_lambda_on_tie(self):
        assert self._report().best().lam == 0.2
        assert SweepReport().best() is None

    def test_write_and_read(self, tmp_path):
        written = write_sweep(self._report(), tmp_path)
        frame = read_sweep_csv(tmp_path / SWEEP_CSV)
        assert list(frame.columns) == ["lambda", "final_map_genus", "final_map_class"]
        assert frame["lambda"].tolist() == [0.0, 0.2, 0.4, 0.5]
        assert frame["final_map_genus"].isna().tolist() == [False, False, False, True]
        assert (tmp_path / "series_lambda_0.2.csv") in written
        failures = json.loads((tmp_path / "sweep_failures.json").read_text(encoding="utf-8"))
        assert failures[0]["lambda"] == 0.5
        assert failures[0]["exit_code"] == 5

    def test_read_missing(self, tmp_path):
        with pytest.raises(IngestionError):
            read_sweep_csv(tmp_path / SWEEP_CSV)

    def test_plot(self, tmp_path):
        paths = plot_sweep(self._report(), tmp_path)
        assert len(paths) == 2
        assert all(p.exists() and p.stat().st_size > 0 for p in paths)
