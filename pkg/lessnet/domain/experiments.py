"""Experiment protocols: encoder redundancy, pooling ablations, model size, diffeomorphism."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from lessnet.core.errors import ConfigError
from lessnet.domain.config import BaselineConfig, FreezeMode, ModelConfig, PoolModeName, TrainConfig
from lessnet.domain.evaluation import Aggregate, evaluate_samples, unregistered_report
from lessnet.domain.models import EncoderDecoder, LessNet, RegistrationModel
from lessnet.domain.synth import RegistrationDataset
from lessnet.domain.trainer import train

logger = logging.getLogger(__name__)

# (setting, freeze mode) in the order reported
FREEZE_SETTINGS: tuple[tuple[str, FreezeMode], ...] = (
    ("encoder_only", "decoder_except_output"),
    ("decoder_only", "encoder"),
    ("full", "none"),
)

# (setting, pooling levels, include original pair)
POOLING_LEVEL_SETTINGS: tuple[tuple[str, tuple[int, ...], bool], ...] = (
    ("1/8", (8,), False),
    ("1/8+1/4", (4, 8), False),
    ("1/8+1/4+1/2", (2, 4, 8), False),
    ("1/8+1/4+1/2+original", (2, 4, 8), True),
)

POOLING_TYPE_SETTINGS: tuple[tuple[str, tuple[PoolModeName, ...]], ...] = (
    ("min", ("min",)),
    ("avg", ("avg",)),
    ("max", ("max",)),
    ("min+avg+max", ("min", "avg", "max")),
)


@dataclass(frozen=True)
class RunOutcome:
    setting: str
    seed: int
    dice: float
    folding: float


@dataclass(frozen=True)
class ExperimentRow:
    """Mean and std over seeds for one setting."""

    setting: str
    runs: int
    dice: Aggregate
    folding: Aggregate
    params: int | None = None
    mult_adds: int | None = None


@dataclass(frozen=True)
class ProfileRow:
    channels: int
    params: int
    mult_adds: int


def _check_seeds(seeds: Sequence[int], minimum: int = 1) -> None:
    if len(seeds) < minimum:
        raise ConfigError(f"this experiment needs at least {minimum} seeds, got {list(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be distinct, got {list(seeds)}")


def _check_dataset(dataset: RegistrationDataset) -> None:
    if not dataset.train or not dataset.validation or not dataset.evaluation_split():
        raise ConfigError("experiments need non-empty train, validation and test (or validation) splits")


def run_once(
    model: RegistrationModel,
    dataset: RegistrationDataset,
    train_cfg: TrainConfig,
    seed: int,
    setting: str,
) -> RunOutcome:
    """Train with ``seed`` and score the best checkpoint on the held-out split."""
    cfg = train_cfg.updated(seed=seed)
    result = train(model, dataset, cfg)
    report = evaluate_samples(model, result.best, dataset.evaluation_split())
    outcome = RunOutcome(setting, seed, report.dice().mean, report.folding().mean)
    logger.info(
        f"{setting} seed={seed}: dice={outcome.dice:.4f} fold_pct={100 * outcome.folding:.4f}",
        extra={"seed": seed, "config": setting},
    )
    return outcome


def summarise(
    setting: str,
    outcomes: Sequence[RunOutcome],
    params: int | None = None,
    mult_adds: int | None = None,
) -> ExperimentRow:
    return ExperimentRow(
        setting=setting,
        runs=len(outcomes),
        dice=Aggregate.of([o.dice for o in outcomes]),
        folding=Aggregate.of([o.folding for o in outcomes]),
        params=params,
        mult_adds=mult_adds,
    )


def unregistered_row(dataset: RegistrationDataset) -> ExperimentRow:
    report = unregistered_report(dataset.evaluation_split())
    return ExperimentRow("unregistered", len(report), report.dice(), report.folding())


def redundancy_experiment(
    dataset: RegistrationDataset,
    cfg: BaselineConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
) -> list[ExperimentRow]:
    """Train the baseline with a frozen decoder, a frozen encoder and nothing frozen.

    Budgets are identical across settings; only the freeze mode differs. The
    first row is the unregistered (identity) reference.

    Raises:
        ConfigError: With fewer than three seeds
    """
    _check_seeds(seeds, minimum=3)
    _check_dataset(dataset)
    model = EncoderDecoder(cfg)
    rows = [unregistered_row(dataset)]
    for setting, mode in FREEZE_SETTINGS:
        freeze_cfg = train_cfg.updated(freeze=mode, diffeomorphic=False)
        outcomes = [run_once(model, dataset, freeze_cfg, seed, setting) for seed in seeds]
        rows.append(summarise(setting, outcomes, model.count_parameters()))
    return rows


def _lessnet_rows(
    dataset: RegistrationDataset,
    variants: Sequence[tuple[str, ModelConfig]],
    train_cfg: TrainConfig,
    seeds: Sequence[int],
) -> list[ExperimentRow]:
    _check_seeds(seeds)
    _check_dataset(dataset)
    spatial = dataset.train[0].fixed.spatial_shape
    rows = [unregistered_row(dataset)]
    for setting, model_cfg in variants:
        model = LessNet(model_cfg)
        cfg = train_cfg.updated(diffeomorphic=model_cfg.diffeomorphic)
        outcomes = [run_once(model, dataset, cfg, seed, setting) for seed in seeds]
        rows.append(summarise(setting, outcomes, model.count_parameters(), model.count_mult_adds(spatial)))
    return rows


def pooling_level_ablation(
    dataset: RegistrationDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
) -> list[ExperimentRow]:
    """Add pyramid levels from 1/8 up to the original pair, one at a time."""
    variants = [
        (
            setting,
            model_cfg.updated(pyramid=model_cfg.pyramid.updated(levels=levels, include_original=original)),
        )
        for setting, levels, original in POOLING_LEVEL_SETTINGS
    ]
    return _lessnet_rows(dataset, variants, train_cfg, seeds)


def pooling_type_ablation(
    dataset: RegistrationDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
) -> list[ExperimentRow]:
    """Each pooling mode alone, then all three together."""
    variants = [
        (setting, model_cfg.updated(pyramid=model_cfg.pyramid.updated(modes=modes)))
        for setting, modes in POOLING_TYPE_SETTINGS
    ]
    return _lessnet_rows(dataset, variants, train_cfg, seeds)


def model_size_scan(
    dataset: RegistrationDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    channels: Sequence[int],
    seeds: Sequence[int],
) -> list[ExperimentRow]:
    """Train and evaluate LessNet for each width multiplier C."""
    if not channels or any(c < 1 for c in channels):
        raise ConfigError(f"channel values must be positive, got {list(channels)}")
    variants = [(f"C={c}", model_cfg.updated(channels=c)) for c in channels]
    return _lessnet_rows(dataset, variants, train_cfg, seeds)


def diffeomorphism_check(
    dataset: RegistrationDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
    diffeo_lam: float | None = None,
) -> list[ExperimentRow]:
    """LessNet against Diff-LessNet with the same budget; reports Dice and folding.

    ``diffeo_lam`` overrides the regularisation weight of the diffeomorphic run.
    """
    _check_seeds(seeds)
    _check_dataset(dataset)
    spatial = dataset.train[0].fixed.spatial_shape
    rows = [unregistered_row(dataset)]
    for setting, diffeomorphic in (("lessnet", False), ("diff-lessnet", True)):
        model = LessNet(model_cfg.updated(diffeomorphic=diffeomorphic))
        loss = train_cfg.loss
        if diffeomorphic and diffeo_lam is not None:
            loss = loss.updated(lam=diffeo_lam)
        cfg = train_cfg.updated(diffeomorphic=diffeomorphic, loss=loss)
        outcomes = [run_once(model, dataset, cfg, seed, setting) for seed in seeds]
        rows.append(summarise(setting, outcomes, model.count_parameters(), model.count_mult_adds(spatial)))
    return rows


def profile_scan(
    rank: int,
    channels: Sequence[int],
    spatial: tuple[int, ...],
    convs_per_block: int = 1,
) -> list[ProfileRow]:
    """Parameter and mult-add counts of LessNet for each C, without training."""
    rows = []
    for c in channels:
        model = LessNet(ModelConfig(rank=rank, channels=c, convs_per_block=convs_per_block))  # type: ignore[arg-type]
        model.check_extents(spatial)
        rows.append(ProfileRow(c, model.count_parameters(), model.count_mult_adds(spatial)))
    return rows
