"""Unit tests for CSV reports."""

from lessnet.domain.evaluation import Aggregate, EvalReport, EvalRow
from lessnet.domain.experiments import ExperimentRow
from lessnet.domain.trainer import EpochRecord, TrainLog
from lessnet.io.reports import (
    EXPERIMENT_COLUMNS,
    TRAIN_LOG_COLUMNS,
    read_csv,
    write_eval_report,
    write_experiment_table,
    write_train_log,
)


def test_train_log(tmp_path):
    """Test one row per epoch with folding as a percentage."""
    log = TrainLog()
    log.append(EpochRecord(1, 0.5, 0.4, 0.1, 0.7, 0.002, 0.0))
    log.append(EpochRecord(2, 0.25, 0.2, 0.05, 0.75, 0.0, 0.0))
    path = tmp_path / "train_log.csv"
    write_train_log(path, log)
    rows = read_csv(path)
    assert list(rows[0]) == TRAIN_LOG_COLUMNS
    assert rows[0]["fold_pct"] == "0.200000"
    assert rows[1]["val_dice"] == "0.750000"
    assert rows[1]["seconds"] == "0.000"


def test_empty_train_log(tmp_path):
    """Test zero epochs still write the header."""
    path = tmp_path / "train_log.csv"
    write_train_log(path, TrainLog())
    assert path.read_text().strip() == ",".join(TRAIN_LOG_COLUMNS)


def test_eval_report(tmp_path):
    """Test per-pair rows are followed by mean and std rows."""
    report = EvalReport(
        [
            EvalRow("a", 0.8, {1: 0.8}, 0.0, 0.5, 0.1, 0.05),
            EvalRow("b", 0.6, {1: 0.7, 2: 0.5}, 0.01, 0.4, 0.1, 0.06),
        ]
    )
    path = tmp_path / "eval.csv"
    write_eval_report(path, report)
    rows = read_csv(path)
    assert [r["pair_id"] for r in rows] == ["a", "b", "mean", "std"]
    assert rows[0]["label_2_dice"] == ""
    assert rows[1]["fold_pct"] == "1.000000"
    assert rows[2]["mean_dice"] == "0.700000"
    assert rows[3]["mean_dice"] == "0.100000"


def test_experiment_table(tmp_path):
    """Test experiment rows carry aggregates and optional counts."""
    rows = [
        ExperimentRow("unregistered", 2, Aggregate(0.5, 0.1), Aggregate(0.0, 0.0)),
        ExperimentRow("C=4", 3, Aggregate(0.8, 0.02), Aggregate(0.001, 0.0), params=5450, mult_adds=1000),
    ]
    path = tmp_path / "size.csv"
    write_experiment_table(path, rows)
    loaded = read_csv(path)
    assert list(loaded[0]) == EXPERIMENT_COLUMNS
    assert loaded[0]["params"] == ""
    assert loaded[1]["params"] == "5450"
    assert loaded[1]["fold_pct"] == "0.100000"
