"""Integration tests for the desk-scale acceptance runs.

Deselected by default; run with ``pytest -m acceptance``.
"""

import numpy as np
import pytest

from lessnet.domain.config import BaselineConfig, LossConfig, ModelConfig, SynthConfig, TrainConfig
from lessnet.domain.evaluation import evaluate_samples, unregistered_report
from lessnet.domain.experiments import pooling_level_ablation, redundancy_experiment
from lessnet.domain.models import LessNet
from lessnet.domain.synth import generate_dataset
from lessnet.domain.trainer import train

pytestmark = [pytest.mark.integration, pytest.mark.slow, pytest.mark.acceptance]

SEEDS = [0, 1, 2]


@pytest.fixture(scope="module")
def dataset():
    """Default 64x64 task with 200 training, 20 validation and 50 test pairs."""
    return generate_dataset(SynthConfig(), 200, 20, 50)


@pytest.fixture(scope="module")
def train_cfg():
    """Twenty epochs of Adam at 1e-4 on MSE with lambda 0.01."""
    return TrainConfig(learning_rate=1e-4, epochs=20, seed=0, loss=LossConfig(similarity="mse", lam=0.01))


def test_registration_quality(dataset, train_cfg):
    """Test LessNet C=8 gains 0.10 Dice and halves the image MSE on held-out pairs."""
    model = LessNet(ModelConfig(channels=8))
    result = train(model, dataset, train_cfg)
    report = evaluate_samples(model, result.best, dataset.test)
    before = unregistered_report(dataset.test)

    assert report.dice().mean - before.dice().mean >= 0.10
    mse_before = np.mean([row.mse_before for row in report.rows])
    mse_after = np.mean([row.mse_after for row in report.rows])
    assert mse_after <= 0.5 * mse_before


def test_encoder_is_redundant(dataset, train_cfg):
    """Test training only the decoder beats training only the encoder."""
    rows = {row.setting: row for row in redundancy_experiment(dataset, BaselineConfig(), train_cfg, SEEDS)}
    full = rows["full"].dice.mean
    decoder = rows["decoder_only"].dice.mean
    encoder = rows["encoder_only"].dice.mean
    assert full >= decoder
    assert decoder - encoder >= 0.01


def test_pooling_levels_do_not_hurt(dataset, train_cfg):
    """Test each added pooling level keeps mean Dice within 0.005 of the previous setting."""
    rows = pooling_level_ablation(dataset, ModelConfig(channels=8), train_cfg, SEEDS)
    scores = [row.dice.mean for row in rows[1:]]
    assert [row.setting for row in rows[1:]] == ["1/8", "1/8+1/4", "1/8+1/4+1/2", "1/8+1/4+1/2+original"]
    for previous, current in zip(scores, scores[1:]):
        assert current >= previous - 0.005
