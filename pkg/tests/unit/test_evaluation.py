"""Unit tests for Dice, folding and evaluation reports."""

import numpy as np
import pytest

from lessnet.core.errors import EvaluationError
from lessnet.domain.config import ModelConfig, SynthConfig
from lessnet.domain.evaluation import (
    Aggregate,
    EvalReport,
    dice,
    evaluate_pair,
    evaluate_samples,
    unregistered_report,
)
from lessnet.domain.models import EncoderDecoder, LessNet
from lessnet.domain.synth import RegistrationSample, generate_sample


@pytest.fixture
def sample():
    """Synthetic 32x32 pair."""
    return generate_sample(SynthConfig(extents=(32, 32), seed=4))


@pytest.fixture
def model():
    """Small untrained LessNet."""
    return LessNet(ModelConfig(channels=2))


def test_dice_identical():
    """Test identical maps score one on every label."""
    labels = np.array([[0, 1], [2, 2]])
    result = dice(labels, labels)
    assert result.per_label == {1: 1.0, 2: 1.0}
    assert result.mean == 1.0


def test_dice_disjoint():
    """Test disjoint labels score zero."""
    assert dice(np.array([[1, 0]]), np.array([[0, 1]])).mean == 0.0


def test_dice_half_overlap():
    """Test four voxels each with two shared score one half."""
    a = np.zeros((4, 4), dtype=np.int32)
    b = np.zeros((4, 4), dtype=np.int32)
    a[0, :] = 1
    b[0, :2] = 1
    b[1, :2] = 1
    assert dice(a, b).per_label[1] == pytest.approx(0.5)


def test_dice_excludes_absent_labels():
    """Test labels missing from both maps are skipped and one-sided labels score zero."""
    a = np.array([[1, 1, 2]])
    b = np.array([[1, 1, 0]])
    result = dice(a, b, labels=[1, 2, 3])
    assert result.per_label == {1: 1.0, 2: 0.0}
    assert result.mean == pytest.approx(0.5)


def test_dice_symmetric():
    """Test Dice does not depend on argument order."""
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 4, (8, 8)), rng.integers(0, 4, (8, 8))
    assert dice(a, b).per_label == dice(b, a).per_label


def test_dice_errors():
    """Test empty label sets and mismatched extents are rejected."""
    with pytest.raises(EvaluationError):
        dice(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(EvaluationError):
        dice(np.ones((4, 4)), np.ones((4, 2)))


def test_aggregate():
    """Test mean and population standard deviation."""
    agg = Aggregate.of([0.5, 0.7, 0.9])
    assert agg.mean == pytest.approx(0.7)
    assert agg.std == pytest.approx(np.std([0.5, 0.7, 0.9]))


def test_untrained_model_keeps_initial_alignment(model, sample):
    """Test a near-identity field leaves Dice at its initial value."""
    row = evaluate_pair(model, model.init_parameters(0), sample)
    assert row.mean_dice == pytest.approx(row.initial_dice, abs=0.01)
    assert row.fold_fraction == 0.0
    assert row.pair_id == sample.name
    assert row.mse_after == pytest.approx(row.mse_before, rel=1e-2)


def test_identical_pair_scores_one(model, sample):
    """Test a pair registered to itself has perfect overlap."""
    same = RegistrationSample(sample.fixed, sample.fixed, sample.fixed_labels, sample.fixed_labels)
    row = evaluate_pair(model, model.init_parameters(0), same, pair_id="self")
    assert row.mean_dice == 1.0
    assert row.initial_dice == 1.0
    assert row.pair_id == "self"


def test_diffeomorphic_override(model, sample):
    """Test evaluation can integrate a plain model's output as a velocity."""
    row = evaluate_pair(model, model.init_parameters(0), sample, diffeomorphic=True)
    assert row.fold_fraction == 0.0
    assert model.diffeomorphic is False


def test_baseline_has_no_diffeomorphic_override(sample):
    """Test requesting a diffeomorphic baseline is an error."""
    baseline = EncoderDecoder()
    with pytest.raises(EvaluationError):
        evaluate_pair(baseline, baseline.init_parameters(0), sample, diffeomorphic=True)


def test_report_aggregates(model, sample):
    """Test report aggregates match the per-pair rows."""
    other = generate_sample(SynthConfig(extents=(32, 32)), 5)
    report = evaluate_samples(model, model.init_parameters(0), [sample, other])
    assert len(report) == 2
    assert report.dice().mean == pytest.approx(np.mean([r.mean_dice for r in report.rows]))
    assert report.labels == sorted({k for r in report.rows for k in r.label_dice})
    assert "pairs=2" in report.summary()


def test_empty_evaluation(model):
    """Test evaluating nothing is an error."""
    with pytest.raises(EvaluationError):
        evaluate_samples(model, model.init_parameters(0), [])


def test_unregistered_report(sample):
    """Test the identity reference reports initial Dice and no folding."""
    report = unregistered_report([sample])
    row = report.rows[0]
    assert row.mean_dice == row.initial_dice
    assert report.folding().mean == 0.0
    assert isinstance(report, EvalReport)


def test_evaluation_of_3d_pair():
    """Test volumetric pairs are scored with the same metrics."""
    sample = generate_sample(SynthConfig(extents=(16, 16, 16), amplitude=2.0, sigma=4.0))
    model = LessNet(ModelConfig(rank=3, channels=1))
    row = evaluate_pair(model, model.init_parameters(0), sample)
    assert 0.0 <= row.mean_dice <= 1.0
