"""Pytest Configuration and Fixtures

全テストで共有されるフィクスチャと設定を定義します。
"""

from pathlib import Path
from typing import Callable, List

import numpy as np
import pytest
import torch

from src.domain.models.dataset import AnnotatedImage, Instance
from src.domain.models.detection import LabeledBox, ScoredBox
from src.domain.models.detector import ModelConfig
from src.domain.models.geometry import BoundingBox
from src.domain.models.synthgen import SceneSpec
from src.domain.models.taxonomy import Taxonomy
from src.services.synthgen import CorpusProfile, emit_corpus

TINY_IMAGE_SIZE = 128


@pytest.fixture
def taxonomy() -> Taxonomy:
    """3 綱 5 属 + else の小さなタクソノミー"""
    return Taxonomy.from_pairs([
        ("Cymbella", "Bacillariophyta"),
        ("Navicula", "Bacillariophyta"),
        ("Scenedesmus", "Chlorophyta"),
        ("Pediastrum", "Chlorophyta"),
        ("Microcystis", "Cyanophyta"),
    ])


@pytest.fixture
def box() -> Callable[..., BoundingBox]:
    """BoundingBox を短く書くためのヘルパー"""
    def _box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
        return BoundingBox(float(x1), float(y1), float(x2), float(y2))
    return _box


@pytest.fixture
def scored(box) -> Callable[..., ScoredBox]:
    def _scored(label: str, score: float, *coords: float) -> ScoredBox:
        return ScoredBox(box=box(*coords), label=label, score=score)
    return _scored


@pytest.fixture
def labeled(box) -> Callable[..., LabeledBox]:
    def _labeled(label: str, *coords: float) -> LabeledBox:
        return LabeledBox(box=box(*coords), label=label)
    return _labeled


@pytest.fixture
def make_image() -> Callable[..., AnnotatedImage]:
    """画素付きの AnnotatedImage を作るヘルパー（画素は固定シードの乱数）"""
    def _make(
        image_id: str,
        instances: List[tuple] = (),
        width: int = 64,
        height: int = 64,
        seed: int = 0,
    ) -> AnnotatedImage:
        rng = np.random.default_rng(seed)
        pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        return AnnotatedImage(
            image_id=image_id,
            width=width,
            height=height,
            instances=tuple(
                Instance(box=BoundingBox(*(float(c) for c in coords)), genus=genus)
                for genus, *coords in instances
            ),
            pixels=pixels,
        )
    return _make


@pytest.fixture
def tiny_scene() -> SceneSpec:
    return SceneSpec(width=256, height=256, instance_count=(1, 3))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Path:
    """12 枚の合成コーパス（セッションで 1 回だけ生成）"""
    out = tmp_path_factory.mktemp("corpus")
    profile = CorpusProfile(weights={"Cymbella": 1.0, "Scenedesmus": 1.0, "Microcystis": 1.0})
    return emit_corpus(12, profile, out, seed=7, spec=SceneSpec(width=256, height=256, instance_count=(1, 3)))


@pytest.fixture
def tiny_model_config() -> Callable[..., ModelConfig]:
    """CPU で数秒で回る検出器設定"""
    def _config(num_genera: int, **overrides) -> ModelConfig:
        values = dict(
            image_size=TINY_IMAGE_SIZE,
            backbone_width=8,
            fpn_channels=16,
            roi_feature_dim=32,
            rpn_pre_nms_top_n_train=200,
            rpn_post_nms_top_n_train=50,
            rpn_pre_nms_top_n_test=100,
            rpn_post_nms_top_n_test=30,
            roi_batch_size_per_image=32,
            rpn_batch_size_per_image=64,
        )
        values.update(overrides)
        return ModelConfig.desk(num_genera, **values)
    return _config


@pytest.fixture(autouse=True)
def seeded():
    """各テストの前に torch と numpy のグローバル乱数を固定"""
    torch.manual_seed(0)
    np.random.seed(0)
    yield
