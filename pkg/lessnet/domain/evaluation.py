"""Registration quality: Dice overlap and Jacobian folding."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from lessnet.core import metrics
from lessnet.core.errors import EvaluationError
from lessnet.domain.losses import mse
from lessnet.domain.models.base import ParameterSet, RegistrationModel
from lessnet.domain.synth import RegistrationSample
from lessnet.domain.warp import folding_fraction, warp, warp_labels
from lessnet.settings import settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiceResult:
    """Per-label Dice and their unweighted mean."""

    per_label: dict[int, float]
    mean: float


def dice(a: np.ndarray, b: np.ndarray, labels: Iterable[int] | None = None) -> DiceResult:
    """Overlap ``2|A_l & B_l| / (|A_l| + |B_l|)`` per label.

    Labels absent from both maps are excluded; a label present in only one map
    scores 0. The default label set is every nonzero label of either map.

    Raises:
        EvaluationError: If extents differ or no label remains after exclusion
    """
    if a.shape != b.shape:
        raise EvaluationError(f"label maps differ in extents: {a.shape} vs {b.shape}")
    if labels is None:
        candidates = sorted(set(np.unique(a).tolist()) | set(np.unique(b).tolist()))
        labels = [int(label) for label in candidates if label != 0]

    per_label: dict[int, float] = {}
    for label in sorted(set(labels)):
        in_a = a == label
        in_b = b == label
        total = int(in_a.sum()) + int(in_b.sum())
        if total == 0:
            continue
        per_label[int(label)] = 2.0 * int((in_a & in_b).sum()) / total

    if not per_label:
        raise EvaluationError("no label is present in either map")
    return DiceResult(per_label=per_label, mean=float(np.mean(list(per_label.values()))))


@dataclass(frozen=True)
class EvalRow:
    """Registration quality of one pair."""

    pair_id: str
    mean_dice: float
    label_dice: dict[int, float]
    fold_fraction: float
    initial_dice: float
    mse_before: float
    mse_after: float


def evaluate_pair(
    model: RegistrationModel,
    params: ParameterSet,
    sample: RegistrationSample,
    diffeomorphic: bool | None = None,
    pair_id: str | None = None,
) -> EvalRow:
    """Register one pair and score it against the fixed labels.

    The moving labels are warped by nearest neighbour with the same
    displacement as the image. For diffeomorphic models the predicted
    velocity is exponentiated first (``diffeomorphic`` overrides the model's
    own setting).
    """
    if diffeomorphic is not None and diffeomorphic != model.diffeomorphic:
        if "diffeomorphic" not in type(model.config).model_fields:
            raise EvaluationError(f"{model.kind} models have no diffeomorphic variant")
        model = type(model)(model.config.updated(diffeomorphic=diffeomorphic))
    u = model.displacement(params, sample.moving, sample.fixed)

    warped = warp(sample.moving, u)
    warped_labels = warp_labels(sample.moving_labels, u.data)
    registered = dice(warped_labels, sample.fixed_labels)
    initial = dice(sample.moving_labels, sample.fixed_labels)

    if settings.metrics_enabled:
        metrics.record_pair_evaluated(model.kind)

    return EvalRow(
        pair_id=pair_id or sample.name,
        mean_dice=registered.mean,
        label_dice=registered.per_label,
        fold_fraction=folding_fraction(u),
        initial_dice=initial.mean,
        mse_before=mse(sample.moving, sample.fixed).item(),
        mse_after=mse(warped, sample.fixed).item(),
    )


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Aggregate":
        if not values:
            return cls(float("nan"), float("nan"))
        return cls(float(np.mean(values)), float(np.std(values)))


@dataclass
class EvalReport:
    """Per-pair rows and their mean/std aggregates."""

    rows: list[EvalRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> list[int]:
        return sorted({label for row in self.rows for label in row.label_dice})

    def dice(self) -> Aggregate:
        return Aggregate.of([row.mean_dice for row in self.rows])

    def folding(self) -> Aggregate:
        return Aggregate.of([row.fold_fraction for row in self.rows])

    def initial_dice(self) -> Aggregate:
        return Aggregate.of([row.initial_dice for row in self.rows])

    def summary(self) -> str:
        d, f, i = self.dice(), self.folding(), self.initial_dice()
        return (
            f"pairs={len(self.rows)} dice={d.mean:.4f}+-{d.std:.4f} "
            f"fold_pct={100 * f.mean:.4f}+-{100 * f.std:.4f} initial_dice={i.mean:.4f}"
        )


def evaluate_samples(
    model: RegistrationModel,
    params: ParameterSet,
    samples: Sequence[RegistrationSample],
    diffeomorphic: bool | None = None,
) -> EvalReport:
    """Evaluate every sample in order.

    Raises:
        EvaluationError: If there are no samples
    """
    if not samples:
        raise EvaluationError("nothing to evaluate: the sample list is empty")
    report = EvalReport([evaluate_pair(model, params, s, diffeomorphic) for s in samples])
    logger.info(f"Evaluated {model.kind}: {report.summary()}")
    return report


def unregistered_report(samples: Sequence[RegistrationSample]) -> EvalReport:
    """Scores of the identity transform (initial alignment)."""
    rows = []
    for sample in samples:
        initial = dice(sample.moving_labels, sample.fixed_labels)
        before = mse(sample.moving, sample.fixed).item()
        rows.append(
            EvalRow(
                pair_id=sample.name,
                mean_dice=initial.mean,
                label_dice=initial.per_label,
                fold_fraction=0.0,
                initial_dice=initial.mean,
                mse_before=before,
                mse_after=before,
            )
        )
    return EvalReport(rows)
