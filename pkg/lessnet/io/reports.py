"""CSV reports for training logs, evaluations and experiment tables."""

import csv
import logging
from collections.abc import Sequence
from pathlib import Path

from lessnet.domain.evaluation import EvalReport
from lessnet.domain.experiments import ExperimentRow
from lessnet.domain.trainer import TrainLog

logger = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ["epoch", "loss", "sim", "reg", "val_dice", "fold_pct", "seconds"]
EXPERIMENT_COLUMNS = [
    "setting",
    "runs",
    "mean_dice",
    "std_dice",
    "fold_pct",
    "std_fold_pct",
    "params",
    "mult_adds",
]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_train_log(path: Path, log: TrainLog) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for rec in log.records:
            writer.writerow(
                [
                    rec.epoch,
                    _fmt(rec.train_loss),
                    _fmt(rec.similarity),
                    _fmt(rec.regularizer),
                    _fmt(rec.validation_dice),
                    _fmt(100 * rec.folding_fraction),
                    f"{rec.wall_seconds:.3f}",
                ]
            )


def eval_columns(report: EvalReport) -> list[str]:
    return ["pair_id", "mean_dice", "fold_pct"] + [f"label_{k}_dice" for k in report.labels]


def write_eval_report(path: Path, report: EvalReport) -> None:
    """Per-pair rows, then ``mean`` and ``std`` summary rows.

    A label absent from both maps of a pair leaves its cell empty.
    """
    labels = report.labels
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(eval_columns(report))
        for row in report.rows:
            cells = [_fmt(row.label_dice[k]) if k in row.label_dice else "" for k in labels]
            writer.writerow([row.pair_id, _fmt(row.mean_dice), _fmt(100 * row.fold_fraction)] + cells)
        d, fold = report.dice(), report.folding()
        writer.writerow(["mean", _fmt(d.mean), _fmt(100 * fold.mean)] + [""] * len(labels))
        writer.writerow(["std", _fmt(d.std), _fmt(100 * fold.std)] + [""] * len(labels))


def write_experiment_table(path: Path, rows: Sequence[ExperimentRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EXPERIMENT_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.setting,
                    row.runs,
                    _fmt(row.dice.mean),
                    _fmt(row.dice.std),
                    _fmt(100 * row.folding.mean),
                    _fmt(100 * row.folding.std),
                    "" if row.params is None else row.params,
                    "" if row.mult_adds is None else row.mult_adds,
                ]
            )
    logger.info(f"Wrote {len(rows)} experiment rows to {path}")


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
