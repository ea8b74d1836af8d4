"""Dataset directories: one sub-directory per sample, listed in a manifest."""

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from lessnet.core.errors import DatasetError, TensorIOError
from lessnet.domain.synth import RegistrationDataset, RegistrationSample
from lessnet.io.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
SPLITS = {"train": "train", "validation": "val", "test": "test"}

MOVING = "moving.ltf"
FIXED = "fixed.ltf"
MOVING_LABELS = "moving_labels.ltf"
FIXED_LABELS = "fixed_labels.ltf"
GROUND_TRUTH = "ground_truth.ltf"


def write_sample(directory: Path, sample: RegistrationSample) -> None:
    """Write images, label maps and the optional ground truth as LTF files."""
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / MOVING, sample.moving)
    write_tensor(directory / FIXED, sample.fixed)
    write_tensor(directory / MOVING_LABELS, sample.moving_labels[None].astype(np.float32))
    write_tensor(directory / FIXED_LABELS, sample.fixed_labels[None].astype(np.float32))
    if sample.ground_truth is not None:
        write_tensor(directory / GROUND_TRUTH, sample.ground_truth)


def _labels(path: Path) -> np.ndarray:
    data = read_tensor(path).data
    if data.shape[0] != 1:
        raise DatasetError(f"label map {path} must have one channel, got shape {data.shape}")
    labels = data[0]
    if (labels < 0).any() or not np.array_equal(labels, np.round(labels)):
        raise DatasetError(f"label map {path} must hold nonnegative integers")
    return labels.astype(np.int32)


def read_sample(directory: Path) -> RegistrationSample:
    """Load one sample directory.

    Raises:
        DatasetError: If a required file is missing or a label map is not integral
    """
    for required in (MOVING, FIXED, MOVING_LABELS, FIXED_LABELS):
        if not (directory / required).is_file():
            raise DatasetError(f"sample directory {directory} is missing {required}")
    gt_path = directory / GROUND_TRUTH
    return RegistrationSample(
        moving=read_tensor(directory / MOVING),
        fixed=read_tensor(directory / FIXED),
        moving_labels=_labels(directory / MOVING_LABELS),
        fixed_labels=_labels(directory / FIXED_LABELS),
        ground_truth=read_tensor(gt_path) if gt_path.is_file() else None,
        name=directory.name,
    )


def write_manifest(path: Path, names: Sequence[str]) -> None:
    path.write_text("".join(f"{name}\n" for name in names))


def read_manifest(path: Path) -> list[str]:
    """Sample directory names, one per line; blank lines and ``#`` comments are skipped."""
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    lines = (line.strip() for line in path.read_text().splitlines())
    return [line for line in lines if line and not line.startswith("#")]


def write_split(directory: Path, samples: Sequence[RegistrationSample]) -> None:
    """Write samples under ``directory`` and list them in its manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for index, sample in enumerate(samples):
        name = sample.name or f"pair_{index:05d}"
        write_sample(directory / name, sample)
        names.append(name)
    write_manifest(directory / MANIFEST, names)


def read_split(directory: Path) -> list[RegistrationSample]:
    """Load every sample listed in ``directory/manifest.txt``.

    Raises:
        DatasetError: If the manifest or a listed sample is missing or malformed
    """
    samples = []
    for name in read_manifest(directory / MANIFEST):
        try:
            samples.append(read_sample(directory / name))
        except TensorIOError as e:
            raise DatasetError(f"cannot read sample {directory / name}: {e}") from e
    return samples


def write_dataset(root: Path, dataset: RegistrationDataset) -> None:
    """Write ``train/``, ``val/`` and ``test/`` splits under ``root``."""
    for attr, folder in SPLITS.items():
        write_split(root / folder, getattr(dataset, attr))
    logger.info(
        f"Wrote dataset to {root}: train={len(dataset.train)} val={len(dataset.validation)} "
        f"test={len(dataset.test)}"
    )


def load_dataset(root: Path) -> RegistrationDataset:
    """Load a dataset root; splits without a manifest are empty.

    ``root`` may also be a single split directory holding a manifest, which
    is then loaded as the training split.

    Raises:
        DatasetError: If no manifest is found at all
    """
    if (root / MANIFEST).is_file():
        return RegistrationDataset(train=read_split(root))
    found = {attr: root / folder for attr, folder in SPLITS.items() if (root / folder / MANIFEST).is_file()}
    if not found:
        raise DatasetError(f"no {MANIFEST} under {root} or its train/val/test directories")
    return RegistrationDataset(**{attr: read_split(path) for attr, path in found.items()})


def load_split(root: Path, split: str) -> list[RegistrationSample]:
    """One split by folder name (``train``, ``val`` or ``test``).

    Raises:
        DatasetError: If the split is unknown or empty
    """
    if split not in SPLITS.values():
        raise DatasetError(f"unknown split {split!r}, expected one of {sorted(SPLITS.values())}")
    samples = read_split(root / split) if (root / split).is_dir() else read_split(root)
    if not samples:
        raise DatasetError(f"split {split!r} under {root} is empty")
    return samples
