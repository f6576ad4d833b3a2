"""決定的なサンプル列（torch Dataset / BatchSampler）

サンプルの並びは (シード, エポック, 画像インデックス) だけで決まり、
DataLoader のワーカー数やスケジューリングには依存しません。
各サンプルの拡張乱数は SeedSequence([seed, epoch, index]) から導出します。
"""

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, Sampler

from src.core.constants import CROP_MIN_FRACTION, IMAGE_SIZE, RESIZE_CACHE_SIZE, ROTATE_PROBABILITY
from src.core.exceptions import ConfigurationError
from src.domain.models.dataset import AnnotatedImage, NormalizationStats
from src.domain.models.taxonomy import Taxonomy
from src.services.data.transforms import Sample, augment, resize_sample, standardize

# エポック順列の乱数ストリームをサンプル拡張と分けるための識別子
_ORDER_STREAM = 0x5EED


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, _ORDER_STREAM])).permutation(n)


class AugmentedDataset(Dataset):
    """学習用 Dataset

    ``dataset[(epoch, index)]`` は標準化済み画像 (3, S, S) と
    ``{"boxes": (N, 4) float32, "labels": (N,) int64}`` を返します。
    ラベルは 1 始まりの属インデックスで、0 は背景です。
    """

    def __init__(
        self,
        images: Sequence[AnnotatedImage],
        taxonomy: Taxonomy,
        stats: NormalizationStats,
        seed: int,
        size: int = IMAGE_SIZE,
        augment: bool = True,
        rotate_probability: float = ROTATE_PROBABILITY,
        crop_min_fraction: float = CROP_MIN_FRACTION,
        cache_size: int = RESIZE_CACHE_SIZE,
    ):
        if not images:
            raise ConfigurationError("Training dataset is empty")
        self.images = list(images)
        self.taxonomy = taxonomy
        self.stats = stats
        self.seed = seed
        self.size = size
        self.augment = augment
        self.rotate_probability = rotate_probability
        self.crop_min_fraction = crop_min_fraction
        self._genus_index = {g: i + 1 for i, g in enumerate(taxonomy.genera)}
        self.cache_size = cache_size
        self._resized: "OrderedDict[int, Sample]" = OrderedDict()

    def __len__(self) -> int:
        return len(self.images)

    def _base(self, index: int) -> Sample:
        # 最近使った cache_size 枚だけ保持する（0 ならキャッシュしない）
        cached = self._resized.get(index)
        if cached is not None:
            self._resized.move_to_end(index)
            return cached
        base = resize_sample(Sample.from_image(self.images[index]), self.size)
        if self.cache_size > 0:
            self._resized[index] = base
            if len(self._resized) > self.cache_size:
                self._resized.popitem(last=False)
        return base

    @property
    def cached_count(self) -> int:
        return len(self._resized)

    def sample(self, epoch: int, index: int) -> Sample:
        base = self._base(index)
        if not self.augment:
            return base
        return augment(
            base,
            sample_rng(self.seed, epoch, index),
            self.size,
            self.rotate_probability,
            self.crop_min_fraction,
        )

    def __getitem__(self, key: Tuple[int, int]):
        epoch, index = key
        sample = self.sample(epoch, index)
        labels = torch.tensor([self._genus_index[g] for g in sample.labels], dtype=torch.int64)
        target = {
            "boxes": torch.from_numpy(sample.boxes.astype(np.float32)).reshape(-1, 4),
            "labels": labels,
        }
        return standardize(sample.pixels, self.stats), target


class StepBatchSampler(Sampler):
    """ステップ単位のバッチ列

    グローバルなサンプル位置 p = step·B + k は、エポック p // N の
    順列の (p mod N) 番目の画像を指します。途中のステップから再開できます。
    """

    def __init__(
        self,
        num_samples: int,
        batch_size: int,
        total_steps: int,
        seed: int,
        start_step: int = 0,
    ):
        if num_samples <= 0:
            raise ConfigurationError("Cannot sample from an empty dataset")
        self.num_samples = num_samples
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.seed = seed
        self.start_step = start_step
        self._orders: Dict[int, np.ndarray] = {}

    def _order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            self._orders = {epoch: epoch_order(self.seed, epoch, self.num_samples)}
        return self._orders[epoch]

    def batch(self, step: int) -> List[Tuple[int, int]]:
        out = []
        for k in range(self.batch_size):
            p = step * self.batch_size + k
            epoch, pos = divmod(p, self.num_samples)
            out.append((epoch, int(self._order(epoch)[pos])))
        return out

    def __iter__(self) -> Iterator[List[Tuple[int, int]]]:
        for step in range(self.start_step, self.total_steps):
            yield self.batch(step)

    def __len__(self) -> int:
        return max(0, self.total_steps - self.start_step)


def collate(batch):
    images = torch.stack([item[0] for item in batch])
    targets = [item[1] for item in batch]
    return images, targets


def make_loader(
    dataset: AugmentedDataset,
    batch_size: int,
    total_steps: int,
    seed: int,
    start_step: int = 0,
    num_workers: int = 0,
) -> DataLoader:
    """決定的な学習ローダー（ワーカーは先読みのみ、順序はサンプラーが決める）"""
    sampler = StepBatchSampler(len(dataset), batch_size, total_steps, seed, start_step)
    return DataLoader(
        dataset,
        batch_sampler=sampler,
        collate_fn=collate,
        num_workers=num_workers,
        prefetch_factor=2 if num_workers > 0 else None,
    )


def iterate_batches(
    dataset: AugmentedDataset,
    batch_size: int,
    total_steps: int,
    seed: int,
    start_step: int = 0,
) -> Iterator[Tuple[int, torch.Tensor, list]]:
    """(step, images, targets) を順に返す"""
    loader = make_loader(dataset, batch_size, total_steps, seed, start_step)
    for step, (images, targets) in enumerate(loader, start=start_step):
        yield step, images, targets
