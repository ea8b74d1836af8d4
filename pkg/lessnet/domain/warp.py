"""Dense warping, scaling-and-squaring exponentiation and Jacobian analysis.

Fields are channel-first ``[rank, S...]`` in voxel units; channel ``a`` is the
component along spatial axis ``a`` (numpy ``indexing="ij"`` order). Sampling
outside the image clamps to the border.
"""

import logging
from dataclasses import dataclass

import numpy as np

from lessnet.autograd import Tensor, add, getitem, grid_sample, mul, spatial_gradient, sub
from lessnet.core.errors import WarpError

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 7


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel displacement ``u``; the warped coordinate is ``x + u(x)``."""

    data: Tensor

    def __post_init__(self) -> None:
        if self.data.shape[0] != self.data.ndim - 1:
            raise WarpError(
                f"field of shape {self.data.shape} needs one channel per spatial axis "
                f"({self.data.ndim - 1})"
            )

    @property
    def rank(self) -> int:
        return self.data.ndim - 1

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.data.spatial_shape


class VelocityField(DisplacementField):
    """Stationary velocity ``v``; same layout as a displacement."""


@dataclass(frozen=True)
class DeformationField:
    """Absolute mapping ``phi = Id + u`` in voxel coordinates."""

    data: Tensor

    def displacement(self) -> DisplacementField:
        return DisplacementField(sub(self.data, identity_array(self.data.spatial_shape, self.data.dtype)))


def _field_tensor(field: DisplacementField | Tensor) -> Tensor:
    tensor = field.data if isinstance(field, DisplacementField) else field
    if tensor.shape[0] != tensor.ndim - 1:
        raise WarpError(f"field of shape {tensor.shape} needs one channel per spatial axis")
    return tensor


def identity_array(spatial: tuple[int, ...], dtype: np.dtype | type = np.float32) -> np.ndarray:
    """Voxel coordinates ``[rank, S...]``: channel ``a`` holds the index along axis ``a``."""
    axes = [np.arange(n, dtype=dtype) for n in spatial]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def identity_grid(spatial: tuple[int, ...]) -> DeformationField:
    """The identity deformation ``phi(x) = x``."""
    return DeformationField(Tensor(identity_array(tuple(spatial))))


def warp(image: Tensor, u: DisplacementField | Tensor) -> Tensor:
    """Pull-warp: ``out(x) = image(x + u(x))`` with linear interpolation and border clamp.

    Args:
        image: ``[C, S...]`` (C = 1 for images; fields warp channel-wise)
        u: Displacement ``[rank, S...]``

    Raises:
        WarpError: If spatial extents differ
    """
    field = _field_tensor(u)
    if image.spatial_shape != field.spatial_shape:
        raise WarpError(
            f"image spatial shape {image.spatial_shape} does not match field {field.spatial_shape}"
        )
    coords = add(field, identity_array(field.spatial_shape, field.dtype))
    return grid_sample(image, coords)


def compose(u_left: Tensor, u_right: Tensor) -> Tensor:
    """Displacement of ``phi_left o phi_right``: ``u_right + u_left(x + u_right(x))``."""
    return add(u_right, warp(u_left, u_right))


def exponentiate_displacement(v: VelocityField | Tensor, steps: int = DEFAULT_STEPS) -> Tensor:
    """Displacement of ``Exp(v)`` by scaling and squaring.

    Starts from ``v / 2**steps`` and self-composes ``steps`` times.
    """
    if steps < 0:
        raise WarpError(f"steps must be >= 0, got {steps}")
    u = mul(_field_tensor(v), 1.0 / 2**steps)
    for _ in range(steps):
        u = compose(u, u)
    return u


def exponentiate(v: VelocityField | Tensor, steps: int = DEFAULT_STEPS) -> DeformationField:
    """Group exponential of a stationary velocity field, as an absolute deformation."""
    u = exponentiate_displacement(v, steps)
    return DeformationField(add(u, identity_array(u.spatial_shape, u.dtype)))


def jacobian_determinant(phi: Tensor) -> Tensor:
    """Per-voxel determinant of ``d phi_i / d x_j`` as a ``[1, S...]`` tensor.

    Derivatives are central differences with one-sided differences at the
    borders; every extent must be at least 2.
    """
    rank = phi.ndim - 1
    if phi.shape[0] != rank:
        raise WarpError(f"deformation of shape {phi.shape} needs {rank} channels")
    if any(n < 2 for n in phi.spatial_shape):
        raise WarpError(f"jacobian needs extents >= 2 on every axis, got {phi.spatial_shape}")

    J = [[spatial_gradient(getitem(phi, slice(i, i + 1)), j) for j in range(rank)] for i in range(rank)]
    if rank == 2:
        return sub(mul(J[0][0], J[1][1]), mul(J[0][1], J[1][0]))
    if rank == 3:
        minor0 = sub(mul(J[1][1], J[2][2]), mul(J[1][2], J[2][1]))
        minor1 = sub(mul(J[1][0], J[2][2]), mul(J[1][2], J[2][0]))
        minor2 = sub(mul(J[1][0], J[2][1]), mul(J[1][1], J[2][0]))
        return add(sub(mul(J[0][0], minor0), mul(J[0][1], minor1)), mul(J[0][2], minor2))
    raise WarpError(f"jacobian supports 2D and 3D fields, got rank {rank}")


def jacobian_folding(phi: DeformationField | Tensor) -> tuple[Tensor, float]:
    """Jacobian determinant map and the fraction of voxels with a negative determinant.

    Border voxels are included in the fraction.
    """
    data = phi.data if isinstance(phi, DeformationField) else phi
    det = jacobian_determinant(data)
    negative = float(np.count_nonzero(det.data < 0)) / det.size
    return det, negative


def folding_fraction(u: np.ndarray | Tensor) -> float:
    """Negative-Jacobian fraction of ``Id + u`` for a displacement array."""
    array = u.data if isinstance(u, Tensor) else np.asarray(u)
    phi = Tensor.wrap(array + identity_array(array.shape[1:], array.dtype))
    return jacobian_folding(phi)[1]


def warp_labels(labels: np.ndarray, u: np.ndarray | Tensor) -> np.ndarray:
    """Nearest-neighbour pull-warp of an integer label map ``[S...]`` (border clamp)."""
    field = u.data if isinstance(u, Tensor) else np.asarray(u)
    spatial = labels.shape
    if field.shape != (len(spatial),) + spatial:
        raise WarpError(f"label map shape {spatial} does not match field shape {field.shape}")
    coords = field + identity_array(spatial, field.dtype)
    index = tuple(
        np.clip(np.rint(coords[a]), 0, n - 1).astype(np.intp) for a, n in enumerate(spatial)
    )
    return labels[index]


def invert_displacement(u: np.ndarray | Tensor, iterations: int = 30) -> np.ndarray:
    """Approximate inverse displacement by fixed-point iteration ``w = -u(x + w(x))``."""
    field = Tensor.wrap(u.data if isinstance(u, Tensor) else np.asarray(u))
    inverse = Tensor.wrap(-field.data)
    for _ in range(iterations):
        inverse = Tensor.wrap(-warp(field, inverse).data)
    return inverse.data
