"""Adam optimisation with freeze masks and validation-driven checkpoint selection."""

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from lessnet.autograd import backward, record
from lessnet.core import metrics
from lessnet.core.errors import FreezeError, NonFiniteError, TrainingError
from lessnet.domain.config import FreezeMode, TrainConfig
from lessnet.domain.evaluation import evaluate_samples
from lessnet.domain.losses import LossBreakdown, total_loss
from lessnet.domain.models.base import ParameterSet, RegistrationModel
from lessnet.domain.synth import RegistrationDataset, RegistrationSample
from lessnet.settings import settings

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Step counter and first/second moment estimates keyed by tensor entry name."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update, in place.

    Layers with ``trainable=False`` keep their values and moments.

    Args:
        params: Parameters to update
        grads: Gradient per entry name (``<layer>.weight`` / ``<layer>.bias``)
        state: Moment state, advanced by one step
        cfg: Learning rate and Adam constants

    Returns:
        The same ``params`` and ``state`` objects

    Raises:
        TrainingError: If a gradient of a trainable layer is missing, misshaped or non-finite
    """
    trainable = {name for name, p in params.items() if p.trainable}
    for entry, tensor in params.tensors():
        layer = entry.rpartition(".")[0]
        if layer not in trainable:
            continue
        grad = grads.get(entry)
        if grad is None:
            raise TrainingError(f"missing gradient for {entry}", layer=layer)
        if grad.shape != tensor.shape:
            raise TrainingError(f"gradient shape {grad.shape} does not match {entry} {tensor.shape}", layer=layer)
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient in layer {layer}", layer=layer)

    state.step += 1
    t = state.step
    correction1 = 1 - cfg.beta1**t
    correction2 = 1 - cfg.beta2**t
    for entry, tensor in params.tensors():
        if entry.rpartition(".")[0] not in trainable:
            continue
        g = grads[entry].astype(np.float64)
        m = state.m.get(entry, np.zeros_like(g))
        v = state.v.get(entry, np.zeros_like(g))
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.m[entry], state.v[entry] = m, v
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        tensor.data = (tensor.data - update).astype(tensor.dtype)
    return params, state


def apply_freeze(params: ParameterSet, mode: FreezeMode) -> ParameterSet:
    """Set trainable flags for a freeze mode.

    ``none`` trains everything; ``encoder`` freezes ``encoder/`` layers;
    ``decoder_except_output`` freezes ``decoder/`` layers and keeps the
    ``output/`` layer trainable.

    Raises:
        FreezeError: If the mode refers to layers the model does not have
    """
    names = list(params)
    if mode == "none":
        frozen: set[str] = set()
    elif mode == "encoder":
        frozen = {n for n in names if n.startswith("encoder/")}
        if not frozen:
            raise FreezeError("freeze mode 'encoder' needs encoder/ layers; this model has no learnable encoder")
    elif mode == "decoder_except_output":
        frozen = {n for n in names if n.startswith("decoder/")}
        if not frozen:
            raise FreezeError("freeze mode 'decoder_except_output' needs decoder/ layers")
    else:
        raise FreezeError(f"unknown freeze mode {mode!r}")

    for name, param in params.items():
        param.trainable = name not in frozen
    logger.info(f"Freeze mode {mode}: {len(frozen)} of {len(names)} layers frozen")
    return params


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    similarity: float
    regularizer: float
    validation_dice: float
    folding_fraction: float
    wall_seconds: float


@dataclass
class TrainLog:
    """One record per completed epoch, numbered from 1."""

    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise TrainingError(f"epoch {rec.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(rec)


@dataclass
class TrainResult:
    best: ParameterSet
    last: ParameterSet
    log: TrainLog
    best_epoch: int | None
    best_dice: float


def compute_gradients(
    model: RegistrationModel,
    params: ParameterSet,
    sample: RegistrationSample,
    cfg: TrainConfig,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss of one pair and the gradient of every trainable tensor."""
    params.prepare_gradients()
    with record() as computation:
        field_ = model.predict(params, sample.moving, sample.fixed)
        breakdown = total_loss(
            sample.moving, sample.fixed, field_, cfg.loss, model.diffeomorphic, model.integration_steps
        )
        backward(breakdown.total, computation)

    grads: dict[str, np.ndarray] = {}
    for entry, tensor in params.tensors():
        if tensor.requires_grad:
            grads[entry] = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
    return breakdown, grads


def train_step(
    model: RegistrationModel,
    params: ParameterSet,
    sample: RegistrationSample,
    state: AdamState,
    cfg: TrainConfig,
) -> LossBreakdown:
    """Forward, backward and one Adam update on a single pair."""
    breakdown, grads = compute_gradients(model, params, sample, cfg)
    adam_step(params, grads, state, cfg)
    return breakdown


def _validate(model: RegistrationModel, params: ParameterSet, samples: list[RegistrationSample]) -> tuple[float, float]:
    report = evaluate_samples(model, params, samples)
    return report.dice().mean, report.folding().mean


def train(
    model: RegistrationModel,
    dataset: RegistrationDataset,
    cfg: TrainConfig,
    params: ParameterSet | None = None,
    on_epoch: Callable[[EpochRecord, ParameterSet], None] | None = None,
) -> TrainResult:
    """Train on ``dataset.train`` and keep the parameters with the best validation Dice.

    Pair order is reshuffled every epoch from a stream seeded by ``cfg.seed``,
    so identical configurations produce identical logs.

    Args:
        model: Network to train
        dataset: Train and validation splits
        cfg: Optimiser, loss and freeze settings
        params: Starting parameters (default: ``model.init_parameters(cfg.seed)``)
        on_epoch: Called after every epoch with its record and current parameters

    Returns:
        TrainResult with the best and last parameters and the log

    Raises:
        TrainingError: If the training split is empty, validation is missing, or
            a loss or gradient becomes non-finite
    """
    if not dataset.train:
        raise TrainingError("the training split is empty")
    if cfg.epochs > 0 and not dataset.validation:
        raise TrainingError("the validation split is empty; best-checkpoint selection needs it")
    if cfg.diffeomorphic != model.diffeomorphic:
        raise TrainingError(
            f"train config diffeomorphic={cfg.diffeomorphic} disagrees with the {model.kind} model "
            f"(diffeomorphic={model.diffeomorphic})"
        )

    params = params if params is not None else model.init_parameters(cfg.seed)
    apply_freeze(params, cfg.freeze)
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    best = params.copy()
    best_epoch: int | None = None
    best_dice = float("-inf")

    logger.info(
        f"Training {model.kind}: {len(dataset.train)} pairs, {cfg.epochs} epochs, "
        f"{params.scalar_count()} parameters ({len(params.trainable_names())}/{len(params)} layers trainable)",
        extra={"model": model.kind, "seed": cfg.seed},
    )

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(dataset.train))
        totals = np.zeros(3)
        for pair_index in order:
            step_started = time.perf_counter()
            try:
                breakdown = train_step(model, params, dataset.train[pair_index], state, cfg)
            except NonFiniteError as e:
                raise TrainingError(
                    f"non-finite values in {e.op} ({e.stage} pass) at epoch {epoch}, pair {pair_index}",
                    epoch=epoch,
                    pair_index=int(pair_index),
                ) from e
            except TrainingError as e:
                raise TrainingError(
                    f"{e} at epoch {epoch}, pair {pair_index}",
                    epoch=epoch,
                    pair_index=int(pair_index),
                    layer=e.layer,
                ) from e
            values = (breakdown.total.item(), breakdown.similarity.item(), breakdown.regularizer.item())
            if not np.isfinite(values).all():
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, pair {pair_index}", epoch=epoch, pair_index=int(pair_index)
                )
            totals += values
            if settings.metrics_enabled:
                metrics.record_train_step(model.kind, time.perf_counter() - step_started)
            logger.debug(
                f"epoch {epoch} pair {pair_index} loss {values[0]:.6f}",
                extra={"epoch": epoch, "pair_index": int(pair_index)},
            )

        val_dice, fold = _validate(model, params, dataset.validation)
        means = totals / len(order)
        rec = EpochRecord(
            epoch=epoch,
            train_loss=float(means[0]),
            similarity=float(means[1]),
            regularizer=float(means[2]),
            validation_dice=val_dice,
            folding_fraction=fold,
            wall_seconds=time.perf_counter() - started if settings.record_wall_time else 0.0,
        )
        log.append(rec)
        if val_dice > best_dice:
            best, best_epoch, best_dice = params.copy(), epoch, val_dice
        if settings.metrics_enabled:
            metrics.record_epoch(model.kind, rec.train_loss, val_dice)
        logger.info(
            f"Epoch {epoch}/{cfg.epochs}: loss={rec.train_loss:.6f} sim={rec.similarity:.6f} "
            f"reg={rec.regularizer:.6f} val_dice={val_dice:.4f} fold_pct={100 * fold:.4f}",
            extra={"epoch": epoch, "model": model.kind},
        )
        if on_epoch is not None:
            on_epoch(rec, params)

    return TrainResult(best=best, last=params, log=log, best_epoch=best_epoch, best_dice=best_dice)
