"""合成コーパスの書き出し

属ごとのインスタンス数は、プロファイルの重みから最大剰余法で決めた割当を
シャッフルして画像へ配ります。そのため実現頻度はプロファイルに丸め誤差の
範囲で一致します。画像ごとのシードは SeedSequence([seed, index]) なので、
並列数を変えても出力は変わりません。
"""

from concurrent.futures import ProcessPoolExecutor
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.exceptions import ConfigurationError, IngestionError
from src.core.logging_config import get_structured_logger
from src.core.metrics import metrics
from src.domain.models.dataset import AnnotatedImage
from src.domain.models.synthgen import GenusStyle, SceneSpec
from src.domain.models.taxonomy import Taxonomy
from src.infrastructure.imaging import write_png
from src.services.data.dataset_service import IMAGES_DIR, save_manifest
from src.services.synthgen.scene import generate_scene
from src.services.synthgen.styles import DEFAULT_STYLES, resolve_styles

logger = get_structured_logger(__name__)

RARE_DEFAULT_COUNT = 6


class CorpusProfile(BaseModel):
    """属の出現比率

    Attributes:
        weights: 属 → 相対重み（正規化は不要）
        fixed_counts: 比率と無関係に固定個数だけ出す属（希少属用）
    """

    model_config = ConfigDict(frozen=True)

    weights: Dict[str, float] = Field(default_factory=dict)
    fixed_counts: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _check(self) -> "CorpusProfile":
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("profile weights must be non-negative")
        if any(c < 0 for c in self.fixed_counts.values()):
            raise ValueError("fixed counts must be non-negative")
        if sum(self.weights.values()) <= 0:
            raise ValueError("profile needs at least one positive weight")
        overlap = set(self.weights) & set(self.fixed_counts)
        if overlap:
            raise ValueError(f"genera both weighted and fixed: {sorted(overlap)}")
        return self

    @property
    def genera(self) -> List[str]:
        return list(self.weights) + list(self.fixed_counts)

    def frequencies(self) -> Dict[str, float]:
        total = sum(self.weights.values())
        return {g: w / total for g, w in self.weights.items()}

    @classmethod
    def default(cls) -> "CorpusProfile":
        """6 属（3 綱）の長い裾の分布 + 希少属 1 つ"""
        return cls(
            weights={
                "Cymbella": 0.24,
                "Navicula": 0.20,
                "Scenedesmus": 0.18,
                "Microcystis": 0.16,
                "Synedra": 0.13,
                "Pediastrum": 0.09,
            },
            fixed_counts={"Cryptomonas": RARE_DEFAULT_COUNT},
        )

    @classmethod
    def uniform(cls) -> "CorpusProfile":
        common = [s.genus for s in DEFAULT_STYLES if s.genus != "Cryptomonas"]
        return cls(weights={g: 1.0 for g in common})


def parse_profile(text: Optional[str]) -> CorpusProfile:
    """プロファイル指定を解釈する

    ``default`` / ``uniform`` / ``"A:0.7,B:0.2,C:0.1"`` / JSON ファイルのパス。
    JSON は ``{"weights": {...}, "fixed_counts": {...}}`` または属 → 重みの辞書。

    Raises:
        ConfigurationError: 解釈できない指定
    """
    if text is None or text == "default":
        return CorpusProfile.default()
    if text == "uniform":
        return CorpusProfile.uniform()
    try:
        path = Path(text)
        if path.suffix == ".json" or path.is_file():
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if "weights" not in data:
                data = {"weights": data}
            return CorpusProfile.model_validate(data)
        weights = {}
        for item in text.split(","):
            genus, _, value = item.partition(":")
            if not genus.strip() or not value.strip():
                raise ValueError(f"expected GENUS:WEIGHT, got {item!r}")
            weights[genus.strip()] = float(value)
        return CorpusProfile(weights=weights)
    except (OSError, ValueError, ValidationError) as e:
        raise ConfigurationError(
            "Invalid class-imbalance profile",
            details={"profile": text},
            original_error=e
        )


def allocate_counts(total: int, profile: CorpusProfile) -> Dict[str, int]:
    """総インスタンス数を属へ割り当てる

    固定個数の属を先に取り、残りを最大剰余法で重みに比例配分します。
    残りが正重みの属数以上あれば、各属に最低 1 個を保証します。
    """
    counts: Dict[str, int] = {}
    remaining = total
    for genus, fixed in profile.fixed_counts.items():
        counts[genus] = min(fixed, remaining)
        remaining -= counts[genus]

    freqs = profile.frequencies()
    positive = [g for g, f in freqs.items() if f > 0]
    floor_each = 1 if remaining >= len(positive) else 0
    base = {g: floor_each if g in positive else 0 for g in freqs}
    pool = remaining - sum(base.values())
    ideal = {g: pool * f for g, f in freqs.items()}
    alloc = {g: base[g] + int(np.floor(ideal[g])) for g in freqs}
    leftover = remaining - sum(alloc.values())
    # 剰余の大きい順（同点は宣言順）
    order = sorted(freqs, key=lambda g: (-(ideal[g] - np.floor(ideal[g])), list(freqs).index(g)))
    for g in order[:leftover]:
        alloc[g] += 1
    counts.update(alloc)
    return counts


def plan_corpus(
    n_images: int,
    profile: CorpusProfile,
    spec: SceneSpec,
    seed: int,
) -> List[Tuple[str, ...]]:
    """画像ごとの属リストを決める"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_images]))
    lo, hi = spec.instance_count
    per_image = rng.integers(lo, hi + 1, size=n_images)
    counts = allocate_counts(int(per_image.sum()), profile)
    labels = [g for g in profile.genera for _ in range(counts.get(g, 0))]
    labels = [labels[i] for i in rng.permutation(len(labels))]
    plan = []
    start = 0
    for k in per_image:
        plan.append(tuple(labels[start:start + int(k)]))
        start += int(k)
    return plan


def _emit_one(
    out_dir: Path,
    index: int,
    seed: int,
    genera: Tuple[str, ...],
    spec: SceneSpec,
    styles: Sequence[GenusStyle],
) -> AnnotatedImage:
    image_id = f"img_{index:05d}"
    image = generate_scene(
        spec,
        styles,
        np.random.SeedSequence([seed, index]),
        genera=genera,
        image_id=image_id,
    )
    file = out_dir / IMAGES_DIR / f"{image_id}.png"
    write_png(file, image.pixels)
    return AnnotatedImage(
        image_id=image_id,
        width=image.width,
        height=image.height,
        instances=image.instances,
        file=file,
    )


def emit_corpus(
    n_images: int,
    profile: Optional[CorpusProfile],
    out_dir: Path,
    seed: int,
    spec: Optional[SceneSpec] = None,
    styles: Optional[Sequence[GenusStyle]] = None,
    jobs: int = 1,
) -> Path:
    """合成コーパスをマニフェスト形式で書き出す

    Args:
        n_images: 画像枚数（1 以上）
        profile: 属の出現比率（None なら既定）
        out_dir: 出力ディレクトリ
        seed: コーパスのシード
        spec: シーン条件（None なら既定）
        styles: 属スタイルの上書き
        jobs: 並列プロセス数

    Returns:
        annotations.jsonl のパス

    Raises:
        ConfigurationError: n_images が 1 未満
        IngestionError: 出力ディレクトリに書けない
    """
    if n_images < 1:
        raise ConfigurationError("n_images must be at least 1", details={"n_images": n_images})
    profile = profile or CorpusProfile.default()
    spec = spec or SceneSpec()
    style_map = resolve_styles(profile.genera, styles)
    style_list = list(style_map.values())

    out_dir = Path(out_dir)
    try:
        (out_dir / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IngestionError("Output directory is not writable", details={"path": str(out_dir)}, original_error=e)

    plan = plan_corpus(n_images, profile, spec, seed)
    args = [(out_dir, i, seed, genera, spec, style_list) for i, genera in enumerate(plan)]
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                images = list(executor.map(_emit_one, *zip(*args)))
        else:
            images = [_emit_one(*a) for a in args]
        taxonomy = Taxonomy.from_pairs((g, style_map[g].class_name) for g in profile.genera)
        manifest = save_manifest(images, taxonomy, out_dir)
    except OSError as e:
        raise IngestionError("Failed to write corpus", details={"path": str(out_dir)}, original_error=e)

    n_instances = sum(len(img.instances) for img in images)
    metrics.images_generated_total.inc(len(images))
    metrics.instances_generated_total.inc(n_instances)
    logger.info(
        "Corpus written",
        manifest=str(manifest),
        images=len(images),
        instances=n_instances,
        seed=seed,
    )
    return manifest
