"""Prometheus metrics for training and evaluation runs."""

from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

registry = CollectorRegistry()

train_steps_total = Counter(
    "lessnet_train_steps_total",
    "Total optimisation steps",
    ["model"],
    registry=registry,
)

train_step_seconds = Histogram(
    "lessnet_train_step_seconds",
    "Duration of one forward+backward+Adam step in seconds",
    ["model"],
    buckets=[0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0],
    registry=registry,
)

epoch_loss = Gauge(
    "lessnet_epoch_loss",
    "Mean training loss of the last completed epoch",
    ["model"],
    registry=registry,
)

validation_dice = Gauge(
    "lessnet_validation_dice",
    "Mean validation Dice of the last completed epoch",
    ["model"],
    registry=registry,
)

pairs_evaluated_total = Counter(
    "lessnet_pairs_evaluated_total",
    "Total registration pairs evaluated",
    ["model"],
    registry=registry,
)


def record_train_step(model: str, seconds: float) -> None:
    """Record one optimisation step."""
    train_steps_total.labels(model=model).inc()
    train_step_seconds.labels(model=model).observe(seconds)


def record_epoch(model: str, loss: float, dice: float) -> None:
    """Record the summary of a completed epoch."""
    epoch_loss.labels(model=model).set(loss)
    validation_dice.labels(model=model).set(dice)


def record_pair_evaluated(model: str) -> None:
    """Record a pair evaluation."""
    pairs_evaluated_total.labels(model=model).inc()


def write_metrics(path: Path) -> None:
    """Write all metrics in the Prometheus text exposition format."""
    write_to_textfile(str(path), registry)
