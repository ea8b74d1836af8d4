"""Experiment configuration models."""

import sys
from typing import Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PoolModeName = Literal["min", "avg", "max"]
FreezeMode = Literal["none", "encoder", "decoder_except_output"]

POOL_MODE_ORDER: tuple[PoolModeName, ...] = ("min", "avg", "max")
POOL_LEVELS: tuple[int, ...] = (2, 4, 8)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def updated(self, **changes: Any) -> Self:
        """Copy with ``changes`` applied, validated like a fresh instance.

        Raises:
            ValidationError: If a changed value breaks a field or model rule
        """
        return type(self).model_validate({**self.model_dump(), **changes})


class PyramidConfig(_Frozen):
    """Which pooling features are built and concatenated into the decoder."""

    modes: tuple[PoolModeName, ...] = POOL_MODE_ORDER
    levels: tuple[int, ...] = POOL_LEVELS
    include_original: bool = True

    @field_validator("modes")
    @classmethod
    def canonical_modes(cls, modes: tuple[str, ...]) -> tuple[str, ...]:
        if not modes:
            raise ValueError("at least one pooling mode is required")
        if len(set(modes)) != len(modes):
            raise ValueError(f"duplicate pooling modes in {modes}")
        return tuple(m for m in POOL_MODE_ORDER if m in modes)

    @field_validator("levels")
    @classmethod
    def canonical_levels(cls, levels: tuple[int, ...]) -> tuple[int, ...]:
        unknown = set(levels) - set(POOL_LEVELS)
        if unknown:
            raise ValueError(f"pooling levels must be a subset of {POOL_LEVELS}, got {levels}")
        return tuple(sorted(set(levels)))

    @property
    def channels_per_level(self) -> int:
        return 2 * len(self.modes)


class ModelConfig(_Frozen):
    """LessNet architecture hyperparameters."""

    rank: Literal[2, 3] = 2
    channels: int = Field(8, ge=1, description="Width multiplier C; block widths are 4C, 3C, 2C, C")
    convs_per_block: int = Field(1, ge=1)
    diffeomorphic: bool = False
    integration_steps: int = Field(7, ge=0)
    displacement_scale: tuple[float, ...] | None = None
    pyramid: PyramidConfig = PyramidConfig()

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelConfig":
        if self.displacement_scale is not None:
            if len(self.displacement_scale) != self.rank:
                raise ValueError(
                    f"displacement_scale needs {self.rank} values, got {self.displacement_scale}"
                )
            if any(s <= 0 for s in self.displacement_scale):
                raise ValueError(f"displacement_scale must be positive, got {self.displacement_scale}")
        if 8 not in self.pyramid.levels:
            raise ValueError("the 1/8 pooling level feeds the first decoder block and cannot be disabled")
        return self

    @property
    def block_widths(self) -> tuple[int, int, int, int]:
        c = self.channels
        return (4 * c, 3 * c, 2 * c, c)


class BaselineConfig(_Frozen):
    """Small symmetric encoder-decoder with skip connections."""

    rank: Literal[2, 3] = 2
    encoder_widths: tuple[int, ...] = (16, 32, 32, 32)
    decoder_widths: tuple[int, ...] = (32, 32, 32, 16)

    @model_validator(mode="after")
    def check_widths(self) -> "BaselineConfig":
        if not self.encoder_widths:
            raise ValueError("encoder_widths must not be empty")
        if len(self.decoder_widths) != len(self.encoder_widths):
            raise ValueError(
                f"decoder_widths {self.decoder_widths} must mirror encoder_widths {self.encoder_widths}"
            )
        if any(w < 1 for w in self.encoder_widths + self.decoder_widths):
            raise ValueError("layer widths must be positive")
        return self

    @property
    def divisor(self) -> int:
        return 2 ** len(self.encoder_widths)


class LossConfig(_Frozen):
    """Similarity term and regularisation weight."""

    similarity: Literal["mse", "ncc"] = "mse"
    lam: float = Field(0.01, ge=0, description="Regularisation weight (lambda)")
    ncc_window: int = Field(9, ge=1)
    ncc_mode: Literal["local", "global"] = "local"
    epsilon: float = Field(1e-5, gt=0)

    @field_validator("ncc_window")
    @classmethod
    def odd_window(cls, window: int) -> int:
        if window % 2 == 0:
            raise ValueError(f"ncc_window must be odd, got {window}")
        return window


class TrainConfig(_Frozen):
    """Optimisation settings."""

    learning_rate: float = Field(1e-4, gt=0)
    batch_size: Literal[1] = 1
    epochs: int = Field(20, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = 0
    freeze: FreezeMode = "none"
    loss: LossConfig = LossConfig()
    diffeomorphic: bool = False


class SynthConfig(_Frozen):
    """Synthetic registration task parameters."""

    extents: tuple[int, ...] = (64, 64)
    num_structures: int = Field(8, ge=1)
    sigma: float = Field(6.0, gt=0, description="Gaussian smoothing of the random displacement, voxels")
    amplitude: float = Field(4.0, ge=0, description="Maximum displacement magnitude, voxels")
    seed: int = 0
    max_attempts: int = Field(10, ge=1)

    @field_validator("extents")
    @classmethod
    def divisible_extents(cls, extents: tuple[int, ...]) -> tuple[int, ...]:
        if len(extents) not in (2, 3):
            raise ValueError(f"extents must be 2D or 3D, got {extents}")
        if any(n < 16 or n % 16 for n in extents):
            raise ValueError(f"every extent must be a positive multiple of 16, got {extents}")
        return extents

    @property
    def rank(self) -> int:
        return len(self.extents)
