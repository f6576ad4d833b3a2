"""デスク規模の過学習ラン

20 枚の合成コーパスに学習させ、学習集合で mAP@50 が十分に上がることを確かめます。
CPU で数十分かかるため slow マーカー付き（``pytest -m slow``）。
"""

import pytest

from src.domain.models.detector import ModelConfig
from src.domain.models.synthgen import SceneSpec
from src.domain.models.training import TrainConfig
from src.services.data import load_dataset, prepare_dataset
from src.services.evaluation import evaluate_model
from src.services.synthgen import emit_corpus, parse_profile
from src.services.training import train

pytestmark = [pytest.mark.integration, pytest.mark.slow]

OVERFIT_PROFILE = "Cymbella:1,Navicula:1,Synedra:1,Scenedesmus:1,Pediastrum:1,Microcystis:1"
OVERFIT_STEPS = 2000
OVERFIT_SIZE = 256


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    manifest = emit_corpus(
        20,
        parse_profile(OVERFIT_PROFILE),
        root / "corpus",
        seed=11,
        spec=SceneSpec(width=OVERFIT_SIZE, height=OVERFIT_SIZE, instance_count=(1, 3)),
    )
    images, taxonomy = load_dataset(manifest)
    prepared = prepare_dataset(images, taxonomy, seed=0, image_size=OVERFIT_SIZE, threshold=0)
    config = TrainConfig.desk(OVERFIT_STEPS, lam=0.2, seed=0, augment=False, checkpoint_every=250)
    model_config = ModelConfig.desk(prepared.taxonomy.num_genera, image_size=OVERFIT_SIZE)
    result = train(prepared, config, model_config, root / "run")
    return prepared, result


def test_training_set_map(overfit_run):
    prepared, result = overfit_run
    assert prepared.taxonomy.num_genera == 7
    report = evaluate_model(result.model, prepared.train, prepared.stats)
    assert report.map_genus >= 0.9
    assert report.map_class >= report.map_genus


def test_loss_settles(overfit_run):
    """最後の 3 つのチェックポイントで直近 100 ステップの平均損失が増えない"""
    _, result = overfit_run
    log = result.log
    assert log.max_identity_error() <= 1e-6
    ends = [OVERFIT_STEPS - 500, OVERFIT_STEPS - 250, OVERFIT_STEPS]
    means = [log.trailing_mean(step - 1, window=100) for step in ends]
    assert means[0] >= means[1] >= means[2]
