"""CLI とワークフローの統合テスト

gen → train → eval → sweep を小さな設定で実際に流します。
"""

import json

import pytest

from src.cli import main, parse_args
from src.core.exceptions import UsageError
from src.core.logging_config import setup_logging
from src.domain.models.training import TrainConfig
from src.services.data.dataset_service import ANNOTATIONS_FILE, TAXONOMY_FILE
from src.services.evaluation.report import REPORT_JSON, REPORT_TEXT
from src.services.training import FINAL_CHECKPOINT, SWEEP_CSV, read_sweep_csv, read_train_log
from src.workflows import ExperimentInput, ExperimentWorkflow

pytestmark = pytest.mark.integration

QUIET = ["--text-logs", "--log-level", "WARNING"]
TINY_MODEL = ["--image-size", "128", "--backbone-width", "8", "--rare-threshold", "0"]


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    setup_logging(log_level="WARNING", json_format=False)


@pytest.fixture(scope="module")
def trained_run(tiny_corpus, tmp_path_factory):
    """CLI で 2 ステップ学習した出力ディレクトリ"""
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--data", str(tiny_corpus), "--steps", "2", "--out", str(out), *TINY_MODEL, *QUIET])
    assert code == 0
    return out


class TestGen:
    """gen サブコマンド"""

    def test_writes_manifest(self, tmp_path, capsys):
        code = main(["gen", "--n-images", "3", "--seed", "1", "--width", "128", "--height", "128",
                     "--out", str(tmp_path), *QUIET])
        assert code == 0
        assert (tmp_path / ANNOTATIONS_FILE).exists()
        assert (tmp_path / TAXONOMY_FILE).exists()
        lines = (tmp_path / ANNOTATIONS_FILE).read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        assert "images: 3" in capsys.readouterr().out

    def test_metrics_textfile(self, tmp_path):
        main(["gen", "--n-images", "1", "--width", "128", "--height", "128", "--out", str(tmp_path), *QUIET])
        assert "algae_stage_duration_seconds" in (tmp_path / "metrics.prom").read_text(encoding="utf-8")

    def test_bad_profile(self, tmp_path):
        code = main(["gen", "--n-images", "2", "--profile", "Navicula:x", "--out", str(tmp_path), *QUIET])
        assert code == 2


class TestUsageErrors:
    """使い方の誤りは終了コード 2"""

    def test_missing_out(self, tiny_corpus):
        assert main(["train", "--data", str(tiny_corpus), *QUIET]) == 2

    def test_zero_steps(self, tiny_corpus, tmp_path):
        assert main(["train", "--data", str(tiny_corpus), "--steps", "0", "--out", str(tmp_path), *QUIET]) == 2

    def test_eval_needs_exactly_one_source(self, tiny_corpus, tmp_path):
        assert main(["eval", "--data", str(tiny_corpus), "--out", str(tmp_path), *QUIET]) == 2

    def test_bad_lambdas(self, tiny_corpus, tmp_path):
        code = main(["sweep", "--data", str(tiny_corpus), "--lambdas", "0.1,-1", "--out", str(tmp_path), *QUIET])
        assert code == 2

    def test_missing_manifest(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope"), "--steps", "1", "--out", str(tmp_path / "o"), *QUIET])
        assert code == 3

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"n-images": 2, "colour": "red"}), encoding="utf-8")
        with pytest.raises(UsageError):
            parse_args(["gen", "--config", str(config)])
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


class TestConfigFile:
    """--config の値は既定値になり、コマンドラインが優先する"""

    def test_command_line_wins(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"steps": 50, "lambda": 0.4, "out": "runs/x"}), encoding="utf-8")
        args = parse_args(["train", "--config", str(config), "--steps", "7"])
        assert args.steps == 7
        assert args.lam == 0.4
        assert str(args.out) == "runs/x"


class TestTrainAndEval:
    """train → eval"""

    def test_train_artifacts(self, trained_run):
        assert (trained_run / FINAL_CHECKPOINT).exists()
        log = read_train_log(trained_run)
        assert [r.step for r in log.steps] == [0, 1]
        assert log.max_identity_error() <= 1e-6
        assert all(r.lam == pytest.approx(0.2) for r in log.steps)

    def test_eval_checkpoint(self, tiny_corpus, trained_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(["eval", "--data", str(tiny_corpus), "--checkpoint", str(trained_run / FINAL_CHECKPOINT),
                     "--rare-threshold", "0", "--render", "--out", str(out), *QUIET])
        assert code == 0
        for name in (REPORT_JSON, REPORT_TEXT, "eval_genus.csv", "eval_class.csv", "detections.jsonl"):
            assert (out / name).exists(), name
        assert list((out / "renders").glob("*.png"))
        assert "Total" in capsys.readouterr().out

    def test_detections_file_scores_the_same(self, tiny_corpus, trained_run, tmp_path):
        """書き出した検出を採点し直しても同じ mAP"""
        first = tmp_path / "first"
        main(["eval", "--data", str(tiny_corpus), "--checkpoint", str(trained_run / FINAL_CHECKPOINT),
              "--rare-threshold", "0", "--out", str(first), *QUIET])
        second = tmp_path / "second"
        code = main(["eval", "--data", str(tiny_corpus), "--detections", str(first / "detections.jsonl"),
                     "--rare-threshold", "0", "--out", str(second), *QUIET])
        assert code == 0
        a = json.loads((first / REPORT_JSON).read_text(encoding="utf-8"))
        b = json.loads((second / REPORT_JSON).read_text(encoding="utf-8"))
        for key in ("map_genus", "map_class"):
            if a[key] is None:
                assert b[key] is None
            else:
                assert b[key] == pytest.approx(a[key], abs=1e-9)

    def test_checkpoint_taxonomy_mismatch(self, tiny_corpus, trained_run, tmp_path):
        """閾値を変えるとラベル集合が変わり、チェックポイントと合わない"""
        code = main(["eval", "--data", str(tiny_corpus), "--checkpoint", str(trained_run / FINAL_CHECKPOINT),
                     "--rare-threshold", "1000", "--out", str(tmp_path), *QUIET])
        assert code == 4


class TestWorkflow:
    """ExperimentWorkflow を直接使う"""

    def test_train_then_evaluate(self, tiny_corpus, tiny_model_config, tmp_path):
        overrides = tiny_model_config(2).model_dump(exclude={"num_genera", "anchor_grid", "backbone"})
        output = ExperimentWorkflow().run(ExperimentInput(
            manifest=tiny_corpus,
            out_dir=tmp_path,
            train_config=TrainConfig.desk(2, seed=4),
            model_overrides=overrides,
            rare_threshold=0,
            track_eval=False,
        ))
        assert output.success
        assert output.report is not None
        assert set(output.durations) == {"load_data", "train", "evaluate", "report"}
        assert (tmp_path / REPORT_JSON).exists()

    def test_failure_is_reported(self, tmp_path):
        output = ExperimentWorkflow().run(
            ExperimentInput(manifest=tmp_path / "missing", out_dir=tmp_path / "out"),
            raise_on_error=False,
        )
        assert not output.success
        assert output.failed_stage == "load_data"
        assert output.error_type == "IngestionError"
        assert output.exit_code == 3


class TestSweep:
    """sweep サブコマンド"""

    def test_two_lambdas(self, tiny_corpus, tmp_path, capsys):
        code = main(["sweep", "--data", str(tiny_corpus), "--lambdas", "0,0.3", "--steps", "2",
                     "--out", str(tmp_path), *TINY_MODEL, *QUIET])
        assert code == 0
        frame = read_sweep_csv(tmp_path / SWEEP_CSV)
        assert frame["lambda"].tolist() == [0.0, 0.3]
        assert (tmp_path / "lambda_0" / FINAL_CHECKPOINT).exists()
        assert (tmp_path / "lambda_0.3" / FINAL_CHECKPOINT).exists()
        assert (tmp_path / "sweep_map_vs_lambda.png").exists()
        assert "lambda=0.3" in capsys.readouterr().out

    def test_default_grid_with_eval_series(self, tiny_corpus, tmp_path):
        """既定の 6 点グリッドは 6 行を書き、途中評価で各 λ の系列が複数点になる。同じシードの再実行は同じ出力"""
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            code = main(["sweep", "--data", str(tiny_corpus), "--steps", "4", "--seed", "2", "--no-plot",
                         "--out", str(out), *TINY_MODEL, *QUIET])
            assert code == 0
            outputs.append(out)

        first, second = outputs
        frame = read_sweep_csv(first / SWEEP_CSV)
        assert frame["lambda"].tolist() == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
        for key in ("0", "0.1", "0.2", "0.3", "0.4", "0.5"):
            series = (first / f"series_lambda_{key}.csv").read_text(encoding="utf-8").splitlines()
            # ヘッダ + ステップ 1, 2, 3, 4
            assert [line.split(",")[0] for line in series[1:]] == ["1", "2", "3", "4"]
            assert (second / f"series_lambda_{key}.csv").read_bytes() == (first / f"series_lambda_{key}.csv").read_bytes()
        assert (second / SWEEP_CSV).read_bytes() == (first / SWEEP_CSV).read_bytes()

    def test_explicit_zero_cadence_keeps_final_only(self, tiny_corpus, tmp_path):
        code = main(["sweep", "--data", str(tiny_corpus), "--lambdas", "0.2", "--steps", "2", "--eval-every", "0",
                     "--no-plot", "--out", str(tmp_path), *TINY_MODEL, *QUIET])
        assert code == 0
        lines = (tmp_path / "series_lambda_0.2.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2


class TestReproducibility:
    """同じシードの gen → train → eval は同じバイト列を書く"""

    def _pipeline(self, root):
        corpus, run, report = root / "corpus", root / "run", root / "eval"
        assert main(["gen", "--n-images", "6", "--seed", "11", "--width", "128", "--height", "128",
                     "--out", str(corpus), *QUIET]) == 0
        assert main(["train", "--data", str(corpus), "--steps", "2", "--seed", "3", "--out", str(run),
                     *TINY_MODEL, *QUIET]) == 0
        assert main(["eval", "--data", str(corpus), "--checkpoint", str(run / FINAL_CHECKPOINT),
                     "--seed", "3", "--rare-threshold", "0", "--out", str(report), *QUIET]) == 0
        return corpus, run, report

    def test_twice_byte_identical(self, tmp_path):
        a_corpus, a_run, a_eval = self._pipeline(tmp_path / "a")
        b_corpus, b_run, b_eval = self._pipeline(tmp_path / "b")

        for name in (ANNOTATIONS_FILE, TAXONOMY_FILE):
            assert (a_corpus / name).read_bytes() == (b_corpus / name).read_bytes(), name
        pngs = sorted(p.relative_to(a_corpus) for p in a_corpus.rglob("*.png"))
        assert pngs
        for rel in pngs:
            assert (a_corpus / rel).read_bytes() == (b_corpus / rel).read_bytes(), str(rel)

        # wall_time 以外は一致
        a_log, b_log = read_train_log(a_run), read_train_log(b_run)
        assert [s.model_dump(exclude={"wall_time"}) for s in a_log.steps] == \
            [s.model_dump(exclude={"wall_time"}) for s in b_log.steps]

        for name in ("eval_genus.csv", "eval_class.csv", REPORT_JSON, REPORT_TEXT, "detections.jsonl"):
            assert (a_eval / name).read_bytes() == (b_eval / name).read_bytes(), name
