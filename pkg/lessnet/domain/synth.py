"""Synthetic registration pairs with known deformations and label maps."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from lessnet.autograd import Tensor
from lessnet.core.errors import SynthError
from lessnet.core.retry import RetryExhaustedError, retry_attempts
from lessnet.domain.config import SynthConfig
from lessnet.domain.warp import folding_fraction, warp, warp_labels

logger = logging.getLogger(__name__)

PairMode = Literal["all_ordered", "atlas_to_subject"]


@dataclass
class RegistrationSample:
    """A moving/fixed pair with label maps.

    Images are ``[1, S...]`` tensors in ``[0, 1]``; label maps are integer
    arrays ``[S...]`` with 0 as background. ``ground_truth`` is the
    displacement that produced the moving image from the fixed one
    (``moving = warp(fixed, ground_truth)``), when known.
    """

    moving: Tensor
    fixed: Tensor
    moving_labels: np.ndarray
    fixed_labels: np.ndarray
    ground_truth: Tensor | None = None
    name: str = ""

    def __post_init__(self) -> None:
        spatial = self.fixed.spatial_shape
        if self.moving.shape != self.fixed.shape or self.fixed.shape[0] != 1:
            raise SynthError(
                f"moving {self.moving.shape} and fixed {self.fixed.shape} must both be [1, S...]"
            )
        for labels in (self.moving_labels, self.fixed_labels):
            if labels.shape != spatial:
                raise SynthError(f"label map shape {labels.shape} does not match image extents {spatial}")
            if labels.size and labels.min() < 0:
                raise SynthError("labels must be nonnegative integers")


@dataclass
class RegistrationDataset:
    """Train, validation and test pair splits."""

    train: list[RegistrationSample] = field(default_factory=list)
    validation: list[RegistrationSample] = field(default_factory=list)
    test: list[RegistrationSample] = field(default_factory=list)

    def evaluation_split(self) -> list[RegistrationSample]:
        """Held-out samples for final scoring: test, else validation."""
        return self.test or self.validation


def generate_dataset(
    cfg: SynthConfig, count: int, validation: int | None = None, test: int | None = None
) -> RegistrationDataset:
    """Independent samples with seeds ``cfg.seed, cfg.seed + 1, ...`` split three ways.

    Defaults hold out ``max(1, count // 10)`` validation and ``max(1, count // 4)``
    test samples on top of ``count`` training samples.
    """
    if count < 1:
        raise SynthError(f"count must be >= 1, got {count}")
    n_val = max(1, count // 10) if validation is None else validation
    n_test = max(1, count // 4) if test is None else test
    samples = [generate_sample(cfg, cfg.seed + i) for i in range(count + n_val + n_test)]
    return RegistrationDataset(
        train=samples[:count],
        validation=samples[count : count + n_val],
        test=samples[count + n_val :],
    )


def generate_template(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random smooth-blob image and its label map.

    Labels are the argmax of ``num_structures`` smoothed noise fields inside
    an ellipsoidal foreground; each label gets a constant intensity plus a
    faint texture, and the result is smoothed and rescaled to ``[0, 1]``.
    """
    shape = cfg.extents
    grids = np.meshgrid(*[np.linspace(-1.0, 1.0, n) for n in shape], indexing="ij")
    radii = rng.uniform(0.7, 0.9, size=len(shape))
    foreground = sum((g / r) ** 2 for g, r in zip(grids, radii, strict=True)) <= 1.0

    region_sigma = min(shape) / 12
    fields = np.stack(
        [ndimage.gaussian_filter(rng.standard_normal(shape), region_sigma) for _ in range(cfg.num_structures)]
    )
    labels = (fields.argmax(axis=0) + 1) * foreground

    intensities = np.concatenate([[0.0], rng.uniform(0.2, 1.0, size=cfg.num_structures)])
    texture = ndimage.gaussian_filter(rng.standard_normal(shape), 1.5) * 0.05
    image = ndimage.gaussian_filter(intensities[labels] + texture * foreground, 1.0)
    low, high = image.min(), image.max()
    image = (image - low) / (high - low) if high > low else np.zeros(shape)
    return image.astype(np.float32), labels.astype(np.int32)


def random_displacement(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Smooth random displacement ``[rank, S...]`` with maximum magnitude ``cfg.amplitude``."""
    shape = cfg.extents
    u = np.stack([ndimage.gaussian_filter(rng.standard_normal(shape), cfg.sigma) for _ in shape])
    peak = float(np.sqrt((u**2).sum(axis=0)).max())
    if cfg.amplitude == 0 or peak == 0:
        return np.zeros_like(u, dtype=np.float32)
    return (u * (cfg.amplitude / peak)).astype(np.float32)


def fold_free_displacement(cfg: SynthConfig, seed: int) -> np.ndarray:
    """Draw displacements until one has no negative Jacobian determinant.

    Raises:
        SynthError: After ``cfg.max_attempts`` folded draws
    """

    def attempt(index: int) -> np.ndarray:
        u = random_displacement(cfg, np.random.default_rng([seed, index]))
        fraction = folding_fraction(u)
        if fraction > 0:
            raise SynthError(f"deformation folds on {fraction:.4%} of voxels")
        return u

    try:
        return retry_attempts(attempt, max_attempts=cfg.max_attempts, retryable_exceptions=(SynthError,))
    except RetryExhaustedError as e:
        raise SynthError(
            f"no fold-free deformation after {e.attempts} attempts "
            f"(sigma={cfg.sigma}, amplitude={cfg.amplitude}); increase sigma or lower amplitude"
        ) from e


def deform(image: np.ndarray, labels: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image linearly and its labels by nearest neighbour with the same field."""
    warped = warp(Tensor(image[None]), Tensor(u)).data[0]
    return warped, warp_labels(labels, u)


def generate_sample(cfg: SynthConfig, seed: int | None = None) -> RegistrationSample:
    """One synthetic pair: fixed is a random template, moving is its deformation.

    Deterministic in ``seed`` (default ``cfg.seed``).
    """
    seed = cfg.seed if seed is None else seed
    image, labels = generate_template(cfg, np.random.default_rng(seed))
    u = fold_free_displacement(cfg, seed)
    moving, moving_labels = deform(image, labels, u)
    logger.debug(f"Generated sample seed={seed} extents={cfg.extents}")
    return RegistrationSample(
        moving=Tensor(moving[None]),
        fixed=Tensor(image[None]),
        moving_labels=moving_labels,
        fixed_labels=labels,
        ground_truth=Tensor(u),
        name=f"sample_{seed:05d}",
    )


@dataclass
class Subject:
    """One synthetic subject: an image and its label map."""

    image: np.ndarray
    labels: np.ndarray
    name: str


def generate_subjects(cfg: SynthConfig, count: int, seed: int | None = None) -> list[Subject]:
    """Subjects sharing one anatomy, each deformed from the template by its own field.

    Subject 0 is the undeformed template and serves as the atlas.
    """
    if count < 1:
        raise SynthError(f"count must be >= 1, got {count}")
    seed = cfg.seed if seed is None else seed
    image, labels = generate_template(cfg, np.random.default_rng(seed))
    subjects = [Subject(image, labels, "subject_0000")]
    for index in range(1, count):
        u = fold_free_displacement(cfg, seed * 100_003 + index)
        warped, warped_labels = deform(image, labels, u)
        subjects.append(Subject(warped, warped_labels, f"subject_{index:04d}"))
    return subjects


def build_pairs(
    images: Sequence[object], mode: PairMode = "all_ordered", atlas_index: int = 0
) -> list[tuple[int, int]]:
    """Ordered ``(moving, fixed)`` index pairs.

    ``all_ordered`` yields every ordered pair of distinct images;
    ``atlas_to_subject`` registers the atlas to every other subject.

    Raises:
        SynthError: If fewer than two images are given, the mode is unknown or
            the atlas index is out of range
    """
    n = len(images)
    if n < 2:
        raise SynthError(f"building pairs needs at least 2 images, got {n}")
    if mode == "all_ordered":
        return [(i, j) for i in range(n) for j in range(n) if i != j]
    if mode == "atlas_to_subject":
        if not 0 <= atlas_index < n:
            raise SynthError(f"atlas index {atlas_index} out of range for {n} images")
        return [(atlas_index, j) for j in range(n) if j != atlas_index]
    raise SynthError(f"unknown pairing mode {mode!r}, expected 'all_ordered' or 'atlas_to_subject'")


def samples_from_pairs(subjects: Sequence[Subject], pairs: Sequence[tuple[int, int]]) -> list[RegistrationSample]:
    """Materialise index pairs as samples (no ground truth between two subjects)."""
    samples = []
    for m, f in pairs:
        moving, fixed = subjects[m], subjects[f]
        samples.append(
            RegistrationSample(
                moving=Tensor(moving.image[None]),
                fixed=Tensor(fixed.image[None]),
                moving_labels=moving.labels,
                fixed_labels=fixed.labels,
                name=f"{moving.name}_to_{fixed.name}",
            )
        )
    return samples


def generate_paired_dataset(
    cfg: SynthConfig,
    count: int,
    mode: PairMode,
    validation: int | None = None,
    test: int | None = None,
) -> RegistrationDataset:
    """Subjects from one template, split three ways, paired within each split.

    Each split holds at least two subjects; in ``atlas_to_subject`` mode the
    first subject of a split is its atlas.
    """
    n_val = max(2, count // 10) if validation is None else validation
    n_test = max(2, count // 4) if test is None else test
    if count < 2 or n_val < 2 or n_test < 2:
        raise SynthError(
            f"pairing needs at least 2 subjects per split, got train={count} val={n_val} test={n_test}"
        )
    subjects = generate_subjects(cfg, count + n_val + n_test)
    groups = (subjects[:count], subjects[count : count + n_val], subjects[count + n_val :])
    train, val, held_out = (samples_from_pairs(g, build_pairs(g, mode)) for g in groups)
    logger.info(f"Built {mode} pairs: train={len(train)} val={len(val)} test={len(held_out)}")
    return RegistrationDataset(train=train, validation=val, test=held_out)
