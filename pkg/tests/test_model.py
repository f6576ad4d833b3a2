"""三分岐検出器（教師の割当、損失、後処理、チェックポイント）のテスト"""

import math

import pytest
import torch
from pydantic import ValidationError

from src.core.exceptions import CheckpointError, ConfigurationError, DataValidationError, IngestionError, NumericError
from src.domain.models.dataset import NormalizationStats
from src.domain.models.detector import LossBreakdown, LossWeights, ModelConfig
from src.domain.models.taxonomy import Taxonomy
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.detector import AlgaeDetector
from src.models.losses import RegionTargets, RoIOutputs, combine_losses, compute_loss, cross_entropy
from src.models.postprocess import foreground_probs, hierarchical_rescore, roll_up_probs
from src.models.roi_heads import assign_targets, class_lookup

from tests.conftest import TINY_IMAGE_SIZE


def _batch(n=1):
    images = torch.randn(n, 3, TINY_IMAGE_SIZE, TINY_IMAGE_SIZE)
    targets = [
        {
            "boxes": torch.tensor([[10.0, 10.0, 60.0, 60.0], [70.0, 70.0, 120.0, 110.0]]),
            "labels": torch.tensor([1, 3]),
        }
        for _ in range(n)
    ]
    return images, targets


def _build(taxonomy, config, seed=0):
    torch.manual_seed(seed)
    return AlgaeDetector(config, taxonomy)


def _loss(model, images, targets, lam, seed=1):
    model.train()
    torch.manual_seed(seed)
    output = model(images, targets)
    return model.compute_loss(output, LossWeights(lam=lam))


class TestModelConfig:
    """ModelConfig / LossWeights のテスト"""

    def test_desk_defaults(self):
        config = ModelConfig.desk(27)
        assert config.num_classes == 6
        assert config.num_genera == 27

    def test_num_classes_fixed(self):
        with pytest.raises(ValidationError):
            ModelConfig(num_genera=5, num_classes=7)

    def test_needs_two_genera(self):
        with pytest.raises(ValidationError):
            ModelConfig(num_genera=1)

    def test_lambda_alias_and_bounds(self):
        assert LossWeights(**{"lambda": 0.5}).lam == 0.5
        with pytest.raises(ValidationError):
            LossWeights(lam=-0.1)

    def test_mismatched_taxonomy(self, taxonomy, tiny_model_config):
        with pytest.raises(ConfigurationError):
            AlgaeDetector(tiny_model_config(taxonomy.num_genera + 1), taxonomy)


class TestAssignTargets:
    """assign_targets のテスト"""

    def test_background_below_threshold(self, taxonomy):
        proposals = torch.tensor([[0.0, 0.0, 10.0, 10.0], [50.0, 50.0, 60.0, 60.0]])
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0]])
        genus, cls, matched = assign_targets(proposals, gt, torch.tensor([1]), taxonomy)
        assert genus.tolist() == [1, 0]
        assert matched.tolist() == [0, -1]
        assert cls.tolist() == [taxonomy.class_index("Bacillariophyta") + 1, 0]

    def test_tie_picks_lower_index(self, taxonomy):
        proposals = torch.tensor([[0.0, 0.0, 10.0, 10.0]])
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])
        genus, _, matched = assign_targets(proposals, gt, torch.tensor([5, 2]), taxonomy)
        assert matched.tolist() == [0]
        assert genus.tolist() == [5]

    def test_no_ground_truth(self, taxonomy):
        genus, cls, matched = assign_targets(torch.rand(3, 4) * 10 + torch.tensor([0, 0, 20, 20]),
                                             torch.zeros((0, 4)), torch.zeros(0, dtype=torch.long), taxonomy)
        assert genus.tolist() == [0, 0, 0]
        assert cls.tolist() == [0, 0, 0]
        assert matched.tolist() == [-1, -1, -1]

    def test_class_follows_genus(self, taxonomy):
        """正例の綱ラベルは常に属ラベルの綱"""
        lookup = class_lookup(taxonomy)
        proposals = torch.rand(200, 2) * 60
        proposals = torch.cat([proposals, proposals + 10 + torch.rand(200, 2) * 40], dim=1)
        gt = torch.tensor([[0.0, 0.0, 30.0, 30.0], [20.0, 20.0, 70.0, 60.0], [40.0, 5.0, 90.0, 40.0]])
        genus, cls, _ = assign_targets(proposals, gt, torch.tensor([1, 4, 5]), taxonomy)
        assert torch.equal(cls, lookup[genus])
        assert bool((genus > 0).any())


class TestLosses:
    """損失関数のテスト"""

    def test_cross_entropy_value(self):
        value = cross_entropy(torch.tensor([2.0, 1.0, 0.0]), 0)
        expected = math.log(math.exp(2) + math.exp(1) + 1.0) - 2.0
        assert float(value) == pytest.approx(expected, abs=1e-6)

    def test_cross_entropy_out_of_range(self):
        with pytest.raises(DataValidationError):
            cross_entropy(torch.tensor([2.0, 1.0, 0.0]), 3)
        with pytest.raises(DataValidationError):
            cross_entropy(torch.tensor([2.0, 1.0, 0.0]), -1)

    def test_combine_in_float64(self):
        total = combine_losses(torch.tensor(1.5), torch.tensor(0.25), torch.tensor(2.0), 0.2)
        assert total.dtype == torch.float64
        assert float(total) == pytest.approx(2.15, abs=1e-12)

    def test_breakdown_identity(self):
        terms = LossBreakdown.compose(0.7, 1.1, 0.9, 0.5)
        assert terms.identity_error() <= 1e-12
        with pytest.raises(NumericError):
            LossBreakdown(l_box=1.0, l_genus=1.0, l_cls=1.0, l_total=5.0, lam=0.5)
        with pytest.raises(NumericError):
            LossBreakdown.compose(-1.0, 1.0, 1.0, 0.5)

    def test_non_finite_loss(self):
        outputs = RoIOutputs(
            box_deltas=torch.zeros(2, 4),
            genus_logits=torch.tensor([[float("nan"), 0.0], [0.0, 1.0]]),
            class_logits=torch.zeros(2, 7),
        )
        targets = RegionTargets(
            genus_labels=torch.tensor([1, 0]),
            class_labels=torch.tensor([1, 0]),
            regression_targets=torch.zeros(2, 4),
            matched_gt=torch.tensor([0, -1]),
        )
        with pytest.raises(NumericError):
            compute_loss(outputs, targets, LossWeights(lam=0.2))

    def test_loss_gradients_match_finite_differences(self):
        """4 領域の float64 出力で、L_total の解析勾配が数値微分と一致する"""
        generator = torch.Generator().manual_seed(0)
        genus_logits = torch.randn(4, 4, dtype=torch.float64, generator=generator, requires_grad=True)
        class_logits = torch.randn(4, 7, dtype=torch.float64, generator=generator, requires_grad=True)
        # 正例 3 行のうち 1 行は smooth-L1 の線形域、残りは二次域
        box_deltas = torch.tensor(
            [[0.5, -0.4, 0.3, 0.6], [0.02, -0.03, 0.04, 0.01], [0.3, 0.2, -0.2, -0.1], [0.05, -0.06, 0.07, -0.02]],
            dtype=torch.float64,
            requires_grad=True,
        )
        targets = RegionTargets(
            genus_labels=torch.tensor([2, 0, 1, 3]),
            class_labels=torch.tensor([1, 0, 2, 6]),
            regression_targets=torch.tensor(
                [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.27, 0.25, -0.15, -0.08], [0.0, 0.0, 0.0, 0.0]],
                dtype=torch.float64,
            ),
            matched_gt=torch.tensor([0, -1, 1, 2]),
        )

        def l_total(genus, cls, deltas):
            outputs = RoIOutputs(box_deltas=deltas, genus_logits=genus, class_logits=cls)
            return compute_loss(outputs, targets, LossWeights(lam=0.3)).l_total

        assert torch.autograd.gradcheck(l_total, (genus_logits, class_logits, box_deltas), eps=1e-6, atol=1e-7)

    def test_forward_loss_identity(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        images, targets = _batch(2)
        terms = _loss(model, images, targets, lam=0.2)
        breakdown = terms.breakdown()
        assert breakdown.identity_error() <= 1e-6
        assert breakdown.l_cls > 0.0
        terms.l_total.backward()

    def test_lambda_is_linear(self, taxonomy, tiny_model_config):
        """同じ順伝播なら L_total(λ=1) − L_total(λ=0) = L_cls"""
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        images, targets = _batch()
        model.train()
        output = model(images, targets)
        zero = model.compute_loss(output, LossWeights(lam=0.0))
        one = model.compute_loss(output, LossWeights(lam=1.0))
        assert float(one.l_total - zero.l_total) == pytest.approx(float(one.l_cls), rel=1e-9)

    def test_region_targets_consistent(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        images, targets = _batch()
        model.train()
        output = model(images, targets)
        rt = output.region_targets
        assert torch.equal(rt.class_labels, class_lookup(taxonomy)[rt.genus_labels])
        assert bool(rt.positive.any())

    def test_zero_lambda_isolates_class_branch(self, taxonomy, tiny_model_config):
        """λ = 0 では Branch-3 に勾配が流れず、共有部の勾配は Branch-3 の無いモデルと同じ"""
        images, targets = _batch()
        with_branch = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        without = _build(taxonomy, tiny_model_config(taxonomy.num_genera, class_branch=False))

        _loss(with_branch, images, targets, lam=0.0).l_total.backward()
        _loss(without, images, targets, lam=0.0).l_total.backward()

        for p in with_branch.roi_heads.class_predictor.parameters():
            assert p.grad is None
        grads = dict(without.named_parameters())
        for name, p in with_branch.named_parameters():
            if name.startswith("roi_heads.class_predictor"):
                continue
            other = grads[name]
            if p.grad is None:
                assert other.grad is None
                continue
            assert torch.allclose(p.grad, other.grad, atol=1e-7), name

    def test_without_class_branch(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera, class_branch=False))
        images, targets = _batch()
        terms = _loss(model, images, targets, lam=0.5)
        assert float(terms.l_cls) == 0.0


class TestPredict:
    """推論と後処理のテスト"""

    def test_predict_structure(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        images, _ = _batch()
        (detections,) = model.predict(images, original_sizes=[(256, 192)], score_floor=0.0)
        scores = [d.confidence for d in detections]
        assert scores == sorted(scores, reverse=True)
        for d in detections:
            assert d.box.within(256, 192)
            assert d.genus in taxonomy.genera
            assert d.class_name in taxonomy.classes
            assert len(d.class_scores) == 6
            assert sum(d.genus_scores) == pytest.approx(1.0, abs=1e-6)

    def test_predict_keeps_training_mode(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        model.train()
        model.predict(_batch()[0])
        assert model.training

    def test_wrong_input_shape(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        with pytest.raises(ConfigurationError):
            model.predict(torch.zeros(1, 3, 64, 64))

    def test_training_needs_targets(self, taxonomy, tiny_model_config):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        model.train()
        with pytest.raises(ConfigurationError):
            model(_batch()[0])

    def test_foreground_probs_normalized(self):
        probs = foreground_probs(torch.tensor([[5.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))
        assert probs.sum(dim=1).tolist() == pytest.approx([1.0, 1.0])
        assert probs[1].tolist() == pytest.approx([0.5, 0.5])

    def test_roll_up(self):
        genus_probs = torch.tensor([[0.2, 0.3, 0.5]], dtype=torch.float64)
        out = roll_up_probs(genus_probs, torch.tensor([0, 0, 2]), 3)
        assert out.tolist() == [pytest.approx([0.5, 0.0, 0.5])]

    def test_rescore(self):
        genus_probs = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        class_probs = torch.tensor([[0.9, 0.1]], dtype=torch.float64)
        index = torch.tensor([0, 1])
        assert torch.equal(hierarchical_rescore(genus_probs, class_probs, index, 0.0), genus_probs)
        assert hierarchical_rescore(genus_probs, class_probs, index, 1.0).tolist() == [pytest.approx([0.9, 0.1])]
        with pytest.raises(ConfigurationError):
            hierarchical_rescore(genus_probs, class_probs, index, -1.0)


class TestCheckpoint:
    """チェックポイントのテスト"""

    def test_round_trip(self, taxonomy, tiny_model_config, tmp_path):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        stats = NormalizationStats(mean=(1.0, 2.0, 3.0), std=(4.0, 5.0, 6.0))
        path = save_checkpoint(tmp_path / "ckpt" / "model.pt", model, step=7, stats=stats)
        ckpt = load_checkpoint(path, taxonomy=taxonomy)
        assert ckpt.step == 7
        assert ckpt.stats == stats
        assert ckpt.taxonomy == taxonomy
        for (name, a), b in zip(model.state_dict().items(), ckpt.model.state_dict().values()):
            assert torch.equal(a, b), name
        images, _ = _batch()
        assert model.predict(images) == ckpt.model.predict(images)

    def test_taxonomy_mismatch(self, taxonomy, tiny_model_config, tmp_path):
        model = _build(taxonomy, tiny_model_config(taxonomy.num_genera))
        path = save_checkpoint(tmp_path / "model.pt", model, 0, NormalizationStats.identity())
        other = Taxonomy.from_pairs([(g, taxonomy.genus_to_class[g]) for g in reversed(taxonomy.genera[:-1])])
        with pytest.raises(CheckpointError):
            load_checkpoint(path, taxonomy=other)

    def test_missing(self, tmp_path):
        with pytest.raises(IngestionError):
            load_checkpoint(tmp_path / "nope.pt")

    def test_garbage(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
