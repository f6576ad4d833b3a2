#!/usr/bin/env python3
"""
合成コーパスの生成から学習・評価までを 1 回で流すスクリプト（CPU 向け）

使用例:
    python scripts/run_desk_pipeline.py --out runs/desk
    python scripts/run_desk_pipeline.py --out runs/desk --n-images 40 --steps 500 --lambda 0
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.config import apply_runtime_settings  # noqa: E402
from src.core.exceptions import AlgaeDetectionError  # noqa: E402
from src.core.logging_config import setup_logging  # noqa: E402
from src.domain.models.evaluation import EvalConfig  # noqa: E402
from src.domain.models.training import TrainConfig  # noqa: E402
from src.services.evaluation import format_report  # noqa: E402
from src.services.synthgen import emit_corpus  # noqa: E402
from src.workflows import ExperimentInput, ExperimentWorkflow  # noqa: E402


def run_pipeline(out: Path, n_images: int, steps: int, lam: float, seed: int, image_size: int) -> int:
    corpus = out / "corpus"
    print(f"🧪 Generating {n_images} images into {corpus}")
    manifest = emit_corpus(n_images, None, corpus, seed)

    print(f"🏋️  Training {steps} steps (λ={lam})")
    output = ExperimentWorkflow().run(ExperimentInput(
        manifest=manifest,
        out_dir=out / "run",
        train_config=TrainConfig.desk(steps, lam=lam, seed=seed, eval_every=max(1, steps // 4)),
        model_overrides={"image_size": image_size},
        eval_config=EvalConfig(render=True),
        show_progress=True,
    ))

    print()
    print(format_report(output.report), end="")
    print()
    print(f"✅ Checkpoint: {output.checkpoint}")
    for stage, seconds in output.durations.items():
        print(f"   {stage}: {seconds:.1f}s")
    return 0


def main():
    parser = argparse.ArgumentParser(description="Run the desk-scale pipeline end to end")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--n-images", type=int, default=20)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--lambda", dest="lam", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--image-size", type=int, default=256)
    args = parser.parse_args()

    setup_logging(log_level="WARNING", json_format=False)
    apply_runtime_settings()
    try:
        sys.exit(run_pipeline(args.out, args.n_images, args.steps, args.lam, args.seed, args.image_size))
    except AlgaeDetectionError as e:
        print(f"❌ {e}")
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        print("\n⚠️  Interrupted")
        sys.exit(130)


if __name__ == "__main__":
    main()
