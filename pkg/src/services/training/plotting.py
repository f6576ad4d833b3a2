"""λ スイープの図（matplotlib Agg）"""

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.core.exceptions import IngestionError
from src.services.training.sweep import SweepReport

MAP_VS_LAMBDA = "sweep_map_vs_lambda.png"
MAP_VS_STEP = "sweep_map_vs_step.png"


def plot_sweep(report: SweepReport, out_dir: Path, dpi: int = 120) -> List[Path]:
    """最終 mAP と λ の関係、λ ごとの評価 mAP とステップの関係を PNG に描く

    失敗したメンバーは点を打たずに飛ばします。
    """
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)

        done = [r for r in report.rows if r.final_map_genus is not None]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r.lam for r in done], [r.final_map_genus * 100 for r in done], marker="o", label="genus")
        ax.plot(
            [r.lam for r in done if r.final_map_class is not None],
            [r.final_map_class * 100 for r in done if r.final_map_class is not None],
            marker="s",
            label="class",
        )
        ax.set_xlabel("λ")
        ax.set_ylabel("mAP@0.5 (%)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = out_dir / MAP_VS_LAMBDA
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(6, 4))
        for key, records in report.series.items():
            points = [(r.step, r.map_genus) for r in records if r.map_genus is not None]
            if points:
                ax.plot([s for s, _ in points], [m * 100 for _, m in points], marker=".", label=f"λ={key}")
        ax.set_xlabel("step")
        ax.set_ylabel("genus mAP@0.5 (%)")
        ax.grid(True, alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
        fig.tight_layout()
        path = out_dir / MAP_VS_STEP
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    except OSError as e:
        raise IngestionError("Plot output not writable", details={"out_dir": str(out_dir)}, original_error=e)
    return written
