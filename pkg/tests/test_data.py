"""データ層（マニフェスト、分割、前処理、拡張、サンプル列）のテスト"""

import json

import numpy as np
import pytest
import torch

from src.core.exceptions import DataValidationError, IngestionError, TaxonomyLookupError
from src.domain.models.dataset import NormalizationStats
from src.infrastructure.imaging import write_png
from src.services.data import (
    AugmentedDataset,
    Sample,
    StepBatchSampler,
    apply_relabel,
    compute_normalization_stats,
    crop_boxes,
    iterate_batches,
    load_dataset,
    prepare_dataset,
    random_crop,
    resize_and_standardize,
    resize_sample,
    rotate90,
    save_manifest,
    split_dataset,
    standardize,
)
from src.services.taxonomy import save_taxonomy


def _write_manifest(root, taxonomy, records, size=(32, 24)):
    """images/a.png と任意のレコード行を持つマニフェストを作る"""
    write_png(root / "images" / "a.png", np.zeros((size[1], size[0], 3), dtype=np.uint8))
    save_taxonomy(taxonomy, root / "taxonomy.csv")
    lines = [r if isinstance(r, str) else json.dumps(r) for r in records]
    (root / "annotations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


def _record(image_id="a", instances=(), width=32, height=24):
    return {
        "image_id": image_id,
        "file": "images/a.png",
        "width": width,
        "height": height,
        "instances": [
            {"x1": x1, "y1": y1, "x2": x2, "y2": y2, "genus": g} for g, x1, y1, x2, y2 in instances
        ],
    }


def _raster_rebox(mask):
    ys, xs = np.nonzero(mask)
    return (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)


class TestManifest:
    """load_dataset / save_manifest のテスト"""

    def test_load(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(instances=[("Cymbella", 1, 2, 10, 12)])])
        images, loaded_tax = load_dataset(tmp_path)
        assert loaded_tax == taxonomy
        assert len(images) == 1
        assert images[0].genera == ("Cymbella",)
        assert images[0].load_pixels().shape == (24, 32, 3)

    def test_empty_image_is_valid(self, taxonomy, tmp_path):
        """個体 0 の画像も読み込める"""
        _write_manifest(tmp_path, taxonomy, [_record()])
        images, _ = load_dataset(tmp_path / "annotations.jsonl")
        assert images[0].instances == ()

    def test_box_out_of_bounds(self, taxonomy, tmp_path):
        """範囲外のボックスは image_id 付きの DataValidationError"""
        _write_manifest(tmp_path, taxonomy, [_record(instances=[("Cymbella", 1, 2, 40, 12)])])
        with pytest.raises(DataValidationError) as exc_info:
            load_dataset(tmp_path)
        assert exc_info.value.details["image_id"] == "a"

    def test_degenerate_box(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(instances=[("Cymbella", 5, 2, 5, 12)])])
        with pytest.raises(DataValidationError):
            load_dataset(tmp_path)

    def test_unknown_genus(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(instances=[("Xyz", 1, 2, 10, 12)])])
        with pytest.raises(TaxonomyLookupError):
            load_dataset(tmp_path)

    def test_malformed_record_reports_line(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(), '{"image_id": "b", "width": "wide"}'])
        with pytest.raises(IngestionError) as exc_info:
            load_dataset(tmp_path)
        assert exc_info.value.details["line"] == 2
        assert exc_info.value.details["image_id"] == "b"

    def test_duplicate_image_id(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(), _record()])
        with pytest.raises(DataValidationError):
            load_dataset(tmp_path)

    def test_size_mismatch_with_file(self, taxonomy, tmp_path):
        _write_manifest(tmp_path, taxonomy, [_record(width=64)])
        with pytest.raises(DataValidationError):
            load_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestionError):
            load_dataset(tmp_path)

    def test_save_then_load(self, taxonomy, make_image, tmp_path):
        """save_manifest の出力をそのまま読み戻せる"""
        image = make_image("x", [("Navicula", 3, 4, 20, 30)], width=40, height=40)
        write_png(tmp_path / "images" / "x.png", image.pixels)
        save_manifest([image], taxonomy, tmp_path)
        images, loaded_tax = load_dataset(tmp_path)
        assert images[0].image_id == "x"
        assert images[0].boxes == image.boxes
        assert loaded_tax == taxonomy


class TestSplit:
    """split_dataset のテスト"""

    @pytest.mark.parametrize("n", [1, 2, 5, 10, 37, 1859])
    def test_partition(self, n):
        ids = [f"img_{i}" for i in range(n)]
        split = split_dataset(ids, seed=3)
        assert set(split.train) | set(split.test) == set(ids)
        assert not set(split.train) & set(split.test)
        assert len(split.train) == (n * 4) // 5

    def test_full_corpus_sizes(self):
        """1859 枚は 1487 / 372 に分かれる"""
        split = split_dataset([f"img_{i:04d}" for i in range(1859)], seed=0)
        assert (len(split.train), len(split.test)) == (1487, 372)

    def test_deterministic(self):
        ids = [f"img_{i}" for i in range(20)]
        assert split_dataset(ids, 1) == split_dataset(ids, 1)
        assert split_dataset(ids, 1).train != split_dataset(ids, 2).train

    def test_duplicate_ids(self):
        with pytest.raises(DataValidationError):
            split_dataset(["a", "a", "b"], 0)

    def test_prepare_merges_on_train_counts(self, tiny_corpus):
        """希少属マージは学習側の件数で決まり、両側に適用される"""
        images, taxonomy = load_dataset(tiny_corpus)
        prepared = prepare_dataset(images, taxonomy, seed=0, image_size=64, threshold=10_000)
        assert prepared.taxonomy.genera == ("else",)
        assert all(g == "else" for img in prepared.test for g in img.genera)
        assert set(prepared.relabel) == set(taxonomy.genera)

    def test_prepare_keeps_common_genera(self, tiny_corpus):
        images, taxonomy = load_dataset(tiny_corpus)
        prepared = prepare_dataset(images, taxonomy, seed=0, image_size=64, threshold=0)
        assert prepared.taxonomy.genera == taxonomy.genera
        assert len(prepared.train) + len(prepared.test) == len(images)
        assert all(s > 0 for s in prepared.stats.std)

    def test_apply_relabel_requires_total_map(self, make_image):
        with pytest.raises(TaxonomyLookupError):
            apply_relabel([make_image("a", [("Cymbella", 0, 0, 5, 5)])], {"Navicula": "else"})


class TestTransforms:
    """前処理のテスト"""

    def test_resize_scales_boxes_per_axis(self, make_image):
        image = make_image("a", [("Cymbella", 10, 20, 30, 40)], width=100, height=50)
        out = resize_sample(Sample.from_image(image), 800)
        assert (out.width, out.height) == (800, 800)
        assert out.boxes[0].tolist() == pytest.approx([80.0, 320.0, 240.0, 640.0])

    def test_resize_and_standardize(self, make_image):
        image = make_image("a", [("Cymbella", 10, 20, 30, 40)], width=100, height=50)
        stats = NormalizationStats(mean=(100.0, 110.0, 120.0), std=(50.0, 60.0, 70.0))
        prepared = resize_and_standardize(image, stats, size=64)
        assert prepared.tensor.shape == (3, 64, 64)
        assert prepared.tensor.dtype == torch.float32
        assert prepared.scale == pytest.approx((0.64, 1.28))

    def test_standardize_per_channel(self):
        pixels = np.full((2, 2, 3), [10, 20, 30], dtype=np.uint8)
        stats = NormalizationStats(mean=(10.0, 10.0, 10.0), std=(1.0, 2.0, 4.0))
        out = standardize(pixels, stats)
        assert out[:, 0, 0].tolist() == pytest.approx([0.0, 5.0, 5.0])

    def test_stats(self, make_image):
        images = [make_image("a", seed=1), make_image("b", seed=2)]
        stats = compute_normalization_stats(images, size=64)
        stacked = np.concatenate([img.pixels.reshape(-1, 3) for img in images]).astype(np.float64)
        assert stats.mean == pytest.approx(tuple(stacked.mean(axis=0)))
        assert stats.std == pytest.approx(tuple(stacked.std(axis=0)))

    def test_stats_empty(self):
        with pytest.raises(DataValidationError):
            compute_normalization_stats([], size=64)

    def test_stats_constant_channel_floored(self):
        from src.domain.models.dataset import AnnotatedImage

        flat = AnnotatedImage(image_id="f", width=8, height=8, pixels=np.full((8, 8, 3), 7, dtype=np.uint8))
        stats = compute_normalization_stats([flat], size=8)
        assert stats.std == (1.0, 1.0, 1.0)

    @pytest.mark.parametrize("direction", [1, -1])
    def test_rotate_matches_raster(self, direction):
        """ボックスを塗った画像を回して囲み直した結果と一致する"""
        size = 800
        box = (10, 20, 30, 40)
        pixels = np.zeros((size, size, 3), dtype=np.uint8)
        pixels[box[1]:box[3], box[0]:box[2]] = 255
        sample = Sample(pixels=pixels, boxes=np.array([box], dtype=np.float64), labels=("Cymbella",))
        out = rotate90(sample, direction)
        assert tuple(out.boxes[0]) == _raster_rebox(out.pixels[..., 0] > 0)
        assert out.labels == ("Cymbella",)

    def test_rotate_round_trip(self, make_image):
        sample = Sample.from_image(make_image("a", [("Cymbella", 3, 5, 20, 40)]))
        back = rotate90(rotate90(sample, 1), -1)
        assert np.array_equal(back.pixels, sample.pixels)
        np.testing.assert_allclose(back.boxes, sample.boxes, rtol=0, atol=1e-9)

    def test_four_quarter_turns_are_identity(self, make_image):
        """+90° を 4 回で画素もボックスも元に戻る"""
        sample = Sample.from_image(make_image("a", [("Cymbella", 3, 5, 20, 40), ("Navicula", 30, 2, 61, 17)]))
        out = sample
        for _ in range(4):
            out = rotate90(out, 1)
        assert np.array_equal(out.pixels, sample.pixels)
        np.testing.assert_allclose(out.boxes, sample.boxes, rtol=0, atol=1e-9)
        assert out.labels == sample.labels

    def test_rotate_requires_square(self, make_image):
        with pytest.raises(DataValidationError):
            rotate90(Sample.from_image(make_image("a", width=30, height=20)), 1)

    def test_crop_bisecting_box(self):
        """窓 (x0, y0, w, h) で二分されたボックスは交差の長方形になり、窓原点へ移る"""
        boxes = np.array([[0.0, 0.0, 20.0, 20.0], [28.0, 0.0, 40.0, 10.0]])
        out, keep = crop_boxes(boxes, (10, 0, 20, 30), min_retained=0.25)
        # 2 番目は 20 / 120 しか残らない
        assert keep.tolist() == [True, False]
        assert out.tolist() == [[0.0, 0.0, 10.0, 20.0]]

    def test_crop_drops_small_fragments(self):
        boxes = np.array([[28.0, 0.0, 40.0, 10.0]])
        out, keep = crop_boxes(boxes, (0, 0, 30, 30), min_retained=0.25)
        assert keep.tolist() == [False]
        assert out.shape == (0, 4)

    def test_random_crop_deterministic_and_in_bounds(self, make_image):
        sample = Sample.from_image(make_image("a", [("Cymbella", 3, 5, 40, 40), ("Navicula", 30, 30, 60, 60)]))
        a = random_crop(sample, 42, 0.6, resize_to=64)
        b = random_crop(sample, 42, 0.6, resize_to=64)
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.boxes, b.boxes)
        assert a.pixels.shape == (64, 64, 3)
        assert np.all(a.boxes >= 0) and np.all(a.boxes <= 64)
        assert len(a.labels) == a.boxes.shape[0]


class TestAugmentedDataset:
    """学習サンプル列のテスト"""

    def test_deterministic_samples(self, taxonomy, make_image):
        images = [make_image(f"i{k}", [("Cymbella", 5, 5, 30, 30)], seed=k) for k in range(3)]
        ds = AugmentedDataset(images, taxonomy, NormalizationStats.identity(), seed=9, size=48)
        x1, t1 = ds[(2, 1)]
        x2, t2 = ds[(2, 1)]
        assert torch.equal(x1, x2)
        assert torch.equal(t1["boxes"], t2["boxes"])
        assert x1.shape == (3, 48, 48)
        assert bool((t1["boxes"] >= 0).all()) and bool((t1["boxes"] <= 48).all())
        assert all(int(label) == taxonomy.genus_index("Cymbella") + 1 for label in t1["labels"])

    def test_without_augmentation(self, taxonomy, make_image):
        images = [make_image("i", [("Navicula", 8, 8, 32, 32)])]
        ds = AugmentedDataset(images, taxonomy, NormalizationStats.identity(), seed=0, size=32, augment=False)
        _, target = ds[(0, 0)]
        assert target["boxes"].tolist() == [[4.0, 4.0, 16.0, 16.0]]

    def test_resize_cache_is_bounded(self, taxonomy, make_image):
        """キャッシュは cache_size 枚を超えず、追い出された画像も同じサンプルを返す"""
        images = [make_image(f"i{k}", [("Cymbella", 5, 5, 30, 30)], seed=k) for k in range(5)]
        bounded = AugmentedDataset(images, taxonomy, NormalizationStats.identity(), seed=3, size=32, cache_size=2)
        uncached = AugmentedDataset(images, taxonomy, NormalizationStats.identity(), seed=3, size=32, cache_size=0)
        for epoch in range(2):
            for index in range(5):
                x1, t1 = bounded[(epoch, index)]
                x2, t2 = uncached[(epoch, index)]
                assert torch.equal(x1, x2)
                assert torch.equal(t1["boxes"], t2["boxes"])
                assert bounded.cached_count <= 2
        assert bounded.cached_count == 2
        assert uncached.cached_count == 0

    def test_sampler_covers_each_epoch(self):
        sampler = StepBatchSampler(num_samples=5, batch_size=5, total_steps=3, seed=1)
        for step in range(3):
            batch = sampler.batch(step)
            assert sorted(i for _, i in batch) == [0, 1, 2, 3, 4]
            assert {e for e, _ in batch} == {step}

    def test_sampler_resume(self):
        """途中のステップから始めても同じバッチ列になる"""
        full = list(StepBatchSampler(7, 3, 10, seed=4))
        resumed = list(StepBatchSampler(7, 3, 10, seed=4, start_step=6))
        assert resumed == full[6:]
        assert len(StepBatchSampler(7, 3, 10, seed=4, start_step=6)) == 4

    def test_iterate_batches(self, taxonomy, make_image):
        """ステップ番号は start_step から始まり、バッチは固定サイズ"""
        images = [make_image(f"i{k}", [("Cymbella", 5, 5, 30, 30)], seed=k) for k in range(5)]
        ds = AugmentedDataset(images, taxonomy, NormalizationStats.identity(), seed=2, size=32, augment=False)
        batches = list(iterate_batches(ds, batch_size=2, total_steps=4, seed=2, start_step=1))
        assert [step for step, _, _ in batches] == [1, 2, 3]
        for _, tensor, targets in batches:
            assert tensor.shape == (2, 3, 32, 32)
            assert len(targets) == 2
