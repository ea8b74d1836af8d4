"""Base registration-model interface and parameter containers."""

import math
from abc import ABC, abstractmethod
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from lessnet.autograd import Tensor, concat
from lessnet.core.errors import ShapeError
from lessnet.domain.warp import exponentiate_displacement

LayerKind = Literal["conv", "conv_stride2", "fractional_conv"]


@dataclass(frozen=True)
class LayerSpec:
    """One learnable layer.

    ``divisor`` is the spatial down-sampling factor of the layer's output
    relative to the full-resolution input.
    """

    name: str
    kind: LayerKind
    c_in: int
    c_out: int
    divisor: int
    is_output: bool = False

    @property
    def kernel(self) -> int:
        return 2 if self.kind == "fractional_conv" else 3

    def weight_shape(self, rank: int) -> tuple[int, ...]:
        if self.kind == "fractional_conv":
            return (self.c_in, self.c_out) + (2,) * rank
        return (self.c_out, self.c_in) + (3,) * rank

    def parameter_count(self, rank: int) -> int:
        return self.c_in * self.c_out * self.kernel**rank + self.c_out

    def mult_adds(self, spatial: tuple[int, ...]) -> int:
        rank = len(spatial)
        out_voxels = math.prod(n // self.divisor for n in spatial)
        if self.kind == "fractional_conv":
            in_voxels = out_voxels // 2**rank
            return in_voxels * self.c_in * self.c_out * 2**rank
        return out_voxels * self.c_out * self.c_in * 3**rank


@dataclass
class Parameter:
    """Weight and bias of one layer."""

    weight: Tensor
    bias: Tensor
    trainable: bool = True

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class ParameterSet:
    """Ordered mapping from layer name to its parameters."""

    layers: dict[str, Parameter] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Parameter:
        return self.layers[name]

    def __contains__(self, name: object) -> bool:
        return name in self.layers

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def items(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self.layers.items())

    def scalar_count(self) -> int:
        return sum(p.size for p in self.layers.values())

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Flattened ``(entry_name, tensor)`` pairs: ``<layer>.weight``, ``<layer>.bias``."""
        for name, param in self.layers.items():
            yield f"{name}.weight", param.weight
            yield f"{name}.bias", param.bias

    def trainable_names(self) -> list[str]:
        return [name for name, p in self.layers.items() if p.trainable]

    def frozen_names(self) -> list[str]:
        return [name for name, p in self.layers.items() if not p.trainable]

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {
                name: Parameter(Tensor(p.weight.data), Tensor(p.bias.data), p.trainable)
                for name, p in self.layers.items()
            }
        )

    def prepare_gradients(self) -> None:
        """Mark trainable tensors for differentiation and clear stale gradients."""
        for param in self.layers.values():
            for tensor in (param.weight, param.bias):
                tensor.requires_grad = param.trainable
                tensor.grad = None

    @classmethod
    def from_arrays(cls, entries: dict[str, np.ndarray]) -> "ParameterSet":
        """Rebuild a set from ``<layer>.weight`` / ``<layer>.bias`` arrays.

        Raises:
            ShapeError: If a layer is missing its weight or bias
        """
        names: list[str] = []
        for key in entries:
            layer, _, _ = key.rpartition(".")
            if layer not in names:
                names.append(layer)
        layers: dict[str, Parameter] = {}
        for layer in names:
            weight = entries.get(f"{layer}.weight")
            bias = entries.get(f"{layer}.bias")
            if weight is None or bias is None:
                raise ShapeError(f"parameter entries for layer {layer!r} need both weight and bias")
            layers[layer] = Parameter(Tensor(weight), Tensor(bias))
        return cls(layers)


class RegistrationModel(ABC):
    """Base interface for registration networks.

    A model is a layer table plus a forward pass; its parameters live in a
    separate :class:`ParameterSet` so they can be checkpointed, frozen and
    swapped independently.
    """

    kind: str = ""

    def __init__(self, config: Any):
        self.config = config

    @property
    def rank(self) -> int:
        return int(self.config.rank)

    @property
    def diffeomorphic(self) -> bool:
        return bool(getattr(self.config, "diffeomorphic", False))

    @property
    def integration_steps(self) -> int:
        return int(getattr(self.config, "integration_steps", 0))

    @abstractmethod
    def layer_table(self) -> list[LayerSpec]:
        """Learnable layers in execution order."""
        pass

    @abstractmethod
    def check_extents(self, spatial: tuple[int, ...]) -> None:
        """Validate that the network accepts inputs of this spatial shape.

        Raises:
            ShapeError: If an extent has the wrong divisibility or rank
        """
        pass

    @abstractmethod
    def forward(self, params: ParameterSet, pair: Tensor) -> Tensor:
        """Map a ``[2, S...]`` moving/fixed pair to a ``[rank, S...]`` field.

        The field is a displacement, or a stationary velocity for
        diffeomorphic models.
        """
        pass

    def predict(self, params: ParameterSet, moving: Tensor, fixed: Tensor) -> Tensor:
        """Stack the pair and run the forward pass."""
        if moving.shape != fixed.shape or moving.shape[0] != 1:
            raise ShapeError(
                f"moving {moving.shape} and fixed {fixed.shape} must both be [1, S...] with equal extents"
            )
        if moving.ndim - 1 != self.rank:
            raise ShapeError(f"{self.kind} is configured for rank {self.rank}, got images {moving.shape}")
        self.check_extents(moving.spatial_shape)
        return self.forward(params, concat([moving, fixed]))

    def displacement(self, params: ParameterSet, moving: Tensor, fixed: Tensor) -> Tensor:
        """Predicted displacement, integrating the velocity for diffeomorphic models."""
        field_ = self.predict(params, moving, fixed)
        if self.diffeomorphic:
            return exponentiate_displacement(field_, self.integration_steps)
        return field_

    def init_parameters(self, seed: int) -> ParameterSet:
        """Seeded initialisation.

        Hidden layers draw weights and biases from ``U(-b, b)`` with
        ``b = sqrt(1 / fan_in)``; the output layer starts near zero so the
        initial field is close to the identity.
        """
        rng = np.random.default_rng(seed)
        layers: dict[str, Parameter] = {}
        for spec in self.layer_table():
            shape = spec.weight_shape(self.rank)
            if spec.is_output:
                weight = rng.normal(0.0, 1e-5, size=shape)
                bias = np.zeros(spec.c_out)
            else:
                bound = math.sqrt(1.0 / (spec.c_in * spec.kernel**self.rank))
                weight = rng.uniform(-bound, bound, size=shape)
                bias = rng.uniform(-bound, bound, size=spec.c_out)
            layers[spec.name] = Parameter(Tensor(weight), Tensor(bias))
        return ParameterSet(layers)

    def count_parameters(self) -> int:
        """Learnable scalars, from the layer table alone."""
        return sum(spec.parameter_count(self.rank) for spec in self.layer_table())

    def count_mult_adds(self, spatial: tuple[int, ...]) -> int:
        """Multiply-accumulate operations of one forward pass at ``spatial``.

        Pooling, activations and warping are not counted.
        """
        if len(spatial) != self.rank:
            raise ShapeError(f"{self.kind} is configured for rank {self.rank}, got extents {spatial}")
        return sum(spec.mult_adds(spatial) for spec in self.layer_table())

    def header(self) -> dict[str, Any]:
        """Architecture description stored next to checkpoints."""
        return {"kind": self.kind, "config": self.config.model_dump(mode="json")}
