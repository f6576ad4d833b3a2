"""コマンドラインのエントリポイント

    python -m src.cli gen   --n-images 20 --seed 7 --out corpus/
    python -m src.cli train --data corpus/ --steps 200 --out runs/a
    python -m src.cli eval  --data corpus/ --checkpoint runs/a/model_final.pt --out runs/a/eval --render
    python -m src.cli sweep --data corpus/ --lambdas 0,0.1,0.2,0.3,0.4,0.5 --steps 200 --out runs/sweep

``--config file.json`` でどのフラグも与えられます（コマンドラインが優先）。
終了コード: 0 成功、2 使い方・設定、3 読み込み、4 検証、5 数値、1 その他。
"""

import argparse
from pathlib import Path
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

from src.core.config import apply_runtime_settings, load_config_file, load_run_config, settings
from src.core.constants import DEFAULT_LAMBDA
from src.core.exceptions import AlgaeDetectionError, UsageError
from src.core.logging_config import LogContext, get_structured_logger, setup_logging
from src.core.metrics import metrics
from src.domain.models.evaluation import EvalConfig
from src.domain.models.training import TrainConfig

logger = get_structured_logger(__name__)

METRICS_FILE = "metrics.prom"

# フラグ名と dest が異なるもの
CONFIG_ALIASES = {"lambda": "lam", "format": "report_format"}

# sweep で --eval-every を省いたときの途中評価の回数
SWEEP_EVAL_POINTS = 4


# ============================================================================
# Parser
# ============================================================================

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file (keys are flag names)")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)
    parser.add_argument("--log-file", type=Path, default=None)
    parser.add_argument("--text-logs", action="store_true", help="Plain-text logs instead of JSON")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, help="Dataset manifest (default: $DATA_ROOT)")
    parser.add_argument("--split-seed", type=int, default=None, help="Train/test split seed (default: --seed)")
    parser.add_argument("--rare-threshold", type=int, default=None, help="Merge genera below this count")


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=["desk", "full"], default="desk")
    parser.add_argument("--image-size", type=int, default=None)
    parser.add_argument("--backbone-width", type=int, default=None)
    parser.add_argument("--no-class-branch", action="store_true", help="Drop Branch-3 (baseline detector)")


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--steps", type=int, default=200, help="Total SGD steps")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None, help="Initial learning rate")
    parser.add_argument("--scale-lr", action="store_true", help="Scale lr by batch_size / 32")
    parser.add_argument("--checkpoint-every", type=int, default=0)
    parser.add_argument("--eval-every", type=int, default=None,
                        help="Evaluate every N steps (train: 0, sweep: steps // 4)")
    parser.add_argument("--no-augment", action="store_true")
    parser.add_argument("--progress", action="store_true", help="Show a progress bar")


def _add_eval(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--score-floor", type=float, default=None)
    parser.add_argument("--nms-iou", type=float, default=None)
    parser.add_argument("--hierarchy-alpha", type=float, default=None)
    parser.add_argument("--cutoff", type=int, default=None, help="Labels listed separately in the tables")


def _build_parsers() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="python -m src.cli", description="Algae multi-target detection")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic corpus")
    _add_common(gen)
    gen.add_argument("--n-images", type=int, default=None)
    gen.add_argument("--profile", default="default", help="default | uniform | 'A:0.7,B:0.3' | JSON path")
    gen.add_argument("--width", type=int, default=None)
    gen.add_argument("--height", type=int, default=None)
    gen.add_argument("--jobs", type=int, default=1)
    gen.set_defaults(handler=cmd_gen)

    train = sub.add_parser("train", help="Train a detector")
    _add_common(train)
    _add_data(train)
    _add_model(train)
    _add_training(train)
    _add_eval(train)
    train.add_argument("--lambda", dest="lam", type=float, default=None, help="Weight of L_cls (default 0.2)")
    train.add_argument("--resume", type=Path, default=None)
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint or a detections file")
    _add_common(ev)
    _add_data(ev)
    _add_eval(ev)
    ev.add_argument("--checkpoint", type=Path, default=None)
    ev.add_argument("--detections", type=Path, default=None, help="Score a detections.jsonl instead")
    ev.add_argument("--render", action="store_true", help="Write one annotated PNG per test image")
    ev.add_argument("--format", dest="report_format", choices=["csv", "text", "both"], default="both")
    ev.add_argument("--batch-size", type=int, default=None)
    ev.set_defaults(handler=cmd_eval)

    sweep = sub.add_parser("sweep", help="Train and evaluate over several λ values")
    _add_common(sweep)
    _add_data(sweep)
    _add_model(sweep)
    _add_training(sweep)
    _add_eval(sweep)
    sweep.add_argument("--lambdas", default="0,0.1,0.2,0.3,0.4,0.5")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--no-plot", action="store_true")
    sweep.set_defaults(handler=cmd_sweep)

    return parser, {"gen": gen, "train": train, "eval": ev, "sweep": sweep}


def build_parser() -> argparse.ArgumentParser:
    return _build_parsers()[0]


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """引数を解釈する（--config の値を既定値として使い、コマンドラインで上書き）"""
    parser, subparsers = _build_parsers()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    values = load_config_file(args.config)
    sub = subparsers[args.command]
    known = {a.dest for a in sub._actions}
    for key, dest in CONFIG_ALIASES.items():
        if key in values:
            values[dest] = values.pop(key)
    unknown = sorted(k for k in values if k not in known or k in ("config", "handler", "help"))
    if unknown:
        raise UsageError("Unknown keys in config file", details={"keys": unknown, "command": args.command})
    for key in ("data", "out", "checkpoint", "detections", "resume", "log_file"):
        if values.get(key) is not None:
            values[key] = Path(values[key])
    sub.set_defaults(**values)
    return parser.parse_args(argv)


# ============================================================================
# Helpers
# ============================================================================

def _require(args: argparse.Namespace, name: str, flag: str) -> Any:
    value = getattr(args, name, None)
    if value is None:
        raise UsageError(f"{flag} is required", details={"command": args.command})
    return value


def _data_path(args: argparse.Namespace) -> Path:
    data = args.data or settings.data_root
    if data is None:
        raise UsageError("--data is required (or set DATA_ROOT)", details={"command": args.command})
    return Path(data)


def _model_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.image_size is not None:
        overrides["image_size"] = args.image_size
    if args.backbone_width is not None:
        overrides["backbone_width"] = args.backbone_width
    if args.no_class_branch:
        overrides["class_branch"] = False
    return overrides


def _eval_every(args: argparse.Namespace) -> int:
    if args.eval_every is not None:
        return args.eval_every
    if args.command == "sweep":
        return max(1, args.steps // SWEEP_EVAL_POINTS)
    return 0


def _train_config(args: argparse.Namespace, lam: float) -> TrainConfig:
    if args.steps is None or args.steps < 1:
        raise UsageError("--steps must be at least 1", details={"steps": args.steps})
    if args.preset == "full":
        values = TrainConfig.full(total_steps=args.steps).model_dump()
    else:
        values = TrainConfig.desk(args.steps).model_dump()
    values.update(lam=lam, seed=args.seed, checkpoint_every=args.checkpoint_every, eval_every=_eval_every(args))
    if args.batch_size is not None:
        values["batch_size"] = args.batch_size
    if args.lr is not None:
        values["base_lr"] = args.lr
    if args.scale_lr:
        values["scale_lr_with_batch"] = True
    if args.no_augment:
        values["augment"] = False
    return load_run_config(TrainConfig, values)


def _eval_config(args: argparse.Namespace, render: bool = False) -> EvalConfig:
    values: Dict[str, Any] = {"render": render}
    for flag, field in (
        ("score_floor", "score_floor"),
        ("nms_iou", "nms_iou"),
        ("hierarchy_alpha", "hierarchy_alpha"),
        ("cutoff", "report_cutoff"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            values[field] = value
    # train / sweep の --batch-size は学習用
    if args.command == "eval" and args.batch_size is not None:
        values["batch_size"] = args.batch_size
    return load_run_config(EvalConfig, values)


def _rare_threshold(args: argparse.Namespace) -> Dict[str, Any]:
    return {} if args.rare_threshold is None else {"rare_threshold": args.rare_threshold}


def _split_seed(args: argparse.Namespace) -> int:
    return args.split_seed if args.split_seed is not None else args.seed


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


# ============================================================================
# Commands
# ============================================================================

def cmd_gen(args: argparse.Namespace) -> int:
    from src.domain.models.synthgen import SceneSpec
    from src.services.data import load_dataset
    from src.services.synthgen import emit_corpus, parse_profile
    from src.services.taxonomy import census_from_instances

    out = _require(args, "out", "--out")
    n_images = _require(args, "n_images", "--n-images")
    if n_images < 1:
        raise UsageError("--n-images must be at least 1", details={"n_images": n_images})
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1", details={"jobs": args.jobs})
    spec_values = {k: v for k, v in (("width", args.width), ("height", args.height)) if v is not None}
    spec = load_run_config(SceneSpec, spec_values)
    profile = parse_profile(args.profile)

    manifest = emit_corpus(n_images, profile, out, args.seed, spec=spec, jobs=args.jobs)
    images, taxonomy = load_dataset(manifest, check_files=False)
    census = census_from_instances(inst for img in images for inst in img.instances)
    print(f"manifest: {manifest}")
    print(f"images: {len(images)}  instances: {census.total}  genera: {len(taxonomy.genera)}")
    for genus in taxonomy.genera:
        print(f"  {genus} ({taxonomy.genus_to_class[genus]}): {census.counts.get(genus, 0)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from src.workflows import ExperimentInput, ExperimentWorkflow

    out = _require(args, "out", "--out")
    lam = DEFAULT_LAMBDA if args.lam is None else args.lam
    train_config = _train_config(args, lam)
    output = ExperimentWorkflow().run(ExperimentInput(
        manifest=_data_path(args),
        out_dir=out,
        train_config=train_config,
        model_preset=args.preset,
        model_overrides=_model_overrides(args),
        eval_config=_eval_config(args),
        split_seed=args.split_seed,
        resume=args.resume,
        evaluate=False,
        track_eval=train_config.eval_every > 0,
        show_progress=args.progress,
        **_rare_threshold(args),
    ))
    print(f"checkpoint: {output.checkpoint}")
    print(f"train log: {output.log_path}")
    if output.series:
        last = output.series[-1]
        print(f"final mAP@0.5 genus: {_fmt(last.map_genus)}  class: {_fmt(last.map_class)}")
    return 0


def _eval_detections_file(args: argparse.Namespace, eval_config: EvalConfig) -> int:
    from src.services.data import load_dataset, prepare_dataset
    from src.services.evaluation import (
        emit_report,
        evaluate_detections,
        format_report,
        load_detections,
        render_detections,
    )
    from src.workflows.experiment import RENDER_DIR

    images, taxonomy = load_dataset(_data_path(args))
    threshold = {} if args.rare_threshold is None else {"threshold": args.rare_threshold}
    prepared = prepare_dataset(images, taxonomy, _split_seed(args), **threshold)
    detections = load_detections(args.detections, taxonomy=prepared.taxonomy)
    report = evaluate_detections(detections, prepared.test, prepared.taxonomy, eval_config.iou_threshold)
    emit_report(report, args.out, args.report_format, eval_config.report_cutoff)
    if eval_config.render:
        for img in prepared.test:
            render_detections(img, detections.get(img.image_id, []), args.out / RENDER_DIR / f"{img.image_id}.png")
    print(format_report(report, eval_config.report_cutoff), end="")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from src.services.evaluation import format_report
    from src.workflows import ExperimentInput, ExperimentWorkflow

    _require(args, "out", "--out")
    eval_config = _eval_config(args, render=args.render)
    if (args.checkpoint is None) == (args.detections is None):
        raise UsageError("Exactly one of --checkpoint and --detections is required")
    if args.detections is not None:
        return _eval_detections_file(args, eval_config)

    output = ExperimentWorkflow().run(ExperimentInput(
        manifest=_data_path(args),
        out_dir=args.out,
        eval_config=eval_config,
        split_seed=_split_seed(args),
        checkpoint=args.checkpoint,
        report_format=args.report_format,
        **_rare_threshold(args),
    ))
    print(format_report(output.report, eval_config.report_cutoff), end="")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from src.services.training import parse_lambdas, plot_sweep, sweep_lambda, write_sweep

    out = _require(args, "out", "--out")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1", details={"jobs": args.jobs})
    lambdas = parse_lambdas(args.lambdas)
    report = sweep_lambda(
        _data_path(args),
        _train_config(args, lambdas[0]),
        lambdas,
        out,
        model_preset=args.preset,
        model_overrides=_model_overrides(args),
        eval_config=_eval_config(args),
        jobs=args.jobs,
        split_seed=args.split_seed,
        show_progress=args.progress,
        **_rare_threshold(args),
    )
    write_sweep(report, out)
    if not args.no_plot:
        plot_sweep(report, out)

    for row in report.rows:
        status = f"FAILED ({row.error_type})" if row.failed else ""
        print(f"lambda={row.lam:g}  genus={_fmt(row.final_map_genus)}  class={_fmt(row.final_map_class)}  {status}".rstrip())
    best = report.best()
    if best is not None:
        print(f"best lambda: {best.lam:g}")
    if report.failures:
        return report.failures[0].exit_code or 1
    return 0


# ============================================================================
# Entry point
# ============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except AlgaeDetectionError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    setup_logging(
        log_level=args.log_level,
        log_file=str(args.log_file) if args.log_file else None,
        json_format=False if args.text_logs else None,
    )
    apply_runtime_settings()
    handler: Callable[[argparse.Namespace], int] = args.handler

    started = time.time()
    with LogContext(run_id=f"{args.command}-{args.seed}"):
        logger.run_start(args.command, {"seed": args.seed, "out": str(args.out) if args.out else None})
        try:
            with metrics.track_stage(args.command):
                code = handler(args)
        except AlgaeDetectionError as e:
            logger.run_end(args.command, time.time() - started, success=False, error=str(e))
            print(f"error: {e}", file=sys.stderr)
            code = e.exit_code
        except KeyboardInterrupt:
            logger.run_end(args.command, time.time() - started, success=False, error="interrupted")
            code = 130
        except Exception as e:
            logger.error("Unexpected error", exc_info=True, command=args.command)
            logger.run_end(args.command, time.time() - started, success=False, error=str(e))
            print(f"error: {e}", file=sys.stderr)
            code = 1
        else:
            logger.run_end(args.command, time.time() - started, success=code == 0)

        if args.out is not None and Path(args.out).is_dir():
            metrics.write_textfile(Path(args.out) / METRICS_FILE)
    return code


if __name__ == "__main__":
    sys.exit(main())
