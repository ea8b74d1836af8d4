"""Differentiable primitives over channel-first tensors.

Every primitive computes its forward result with numpy and registers an
adjoint with the active :class:`~lessnet.autograd.tensor.ComputationRecord`.
Spatial rank is ``ndim - 1`` (there is no batch axis; batch size is 1).
"""

import itertools
import logging
from collections.abc import Sequence
from typing import Any, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from lessnet.autograd.tensor import Tensor, make_result
from lessnet.core.errors import ShapeError

logger = logging.getLogger(__name__)

PoolMode = Literal["min", "avg", "max"]


def as_tensor(value: Any) -> Tensor:
    """Return ``value`` as a tensor (constants do not require gradients)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from e


# Elementwise arithmetic


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), adjoint)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), adjoint)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("mul", a.data * b.data, (a, b), adjoint)


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def adjoint(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("div", out, (a, b), adjoint)


def neg(x: Tensor) -> Tensor:
    return make_result("neg", -x.data, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return make_result("square", x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Sum of all elements, as a one-element tensor."""
    total = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype),)

    return make_result("sum", total, (x,), adjoint)


def mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a one-element tensor."""
    count = x.size
    value = np.asarray(x.data.mean(), dtype=x.dtype).reshape(1)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.full(x.shape, g.reshape(()) / count, dtype=x.dtype),)

    return make_result("mean", value, (x,), adjoint)


def getitem(x: Tensor, key: Any) -> Tensor:
    """Basic slicing (ints and slices only)."""
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, int | slice) and k is not Ellipsis:
            raise ShapeError(f"getitem supports ints and slices only, got {type(k).__name__}")
    out = np.array(x.data[key])

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        full[key] = g.reshape(full[key].shape)
        return (full,)

    return make_result("getitem", out, (x,), adjoint)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; spatial extents must match."""
    if not parts:
        raise ShapeError("concat needs at least one part")
    spatial = parts[0].spatial_shape
    for part in parts[1:]:
        if part.spatial_shape != spatial:
            raise ShapeError(
                f"concat: spatial mismatch {part.spatial_shape} vs {spatial} "
                f"(shapes {[p.shape for p in parts]})"
            )
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def adjoint(g: np.ndarray) -> list[np.ndarray]:
        return [g[bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return make_result("concat", out, tuple(parts), adjoint)


# Activations


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """``x`` for x >= 0 else ``slope * x``; derivative at 0 is 1."""
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data).astype(x.dtype)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.where(positive, g, slope * g).astype(g.dtype),)

    return make_result("leaky_relu", out, (x,), adjoint)


def softsign(x: Tensor) -> Tensor:
    """``x / (1 + |x|)``, range (-1, 1)."""
    denom = 1 + np.abs(x.data)
    out = x.data / denom

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        return (g / (denom * denom),)

    return make_result("softsign", out, (x,), adjoint)


# Convolutions


def _spatial_axes(rank: int, start: int = 1) -> list[int]:
    return list(range(start, start + rank))


def conv(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3(x3) cross-correlation with zero padding 1, plus bias.

    Args:
        x: Input ``[Cin, S...]``
        weight: ``[Cout, Cin, 3...]``
        bias: ``[Cout]``
        stride: 1 keeps the spatial extents; 2 halves them (extents must be even)

    Returns:
        ``[Cout, S/stride...]``
    """
    rank = x.ndim - 1
    if weight.ndim != rank + 2 or weight.shape[2:] != (3,) * rank:
        raise ShapeError(
            f"conv: weight shape {weight.shape} is not [Cout, Cin{', 3' * rank}] "
            f"for input shape {x.shape}"
        )
    c_out, c_in = weight.shape[:2]
    if c_in != x.shape[0]:
        raise ShapeError(
            f"conv: input has {x.shape[0]} channels (shape {x.shape}) but weight "
            f"{weight.shape} expects {c_in}"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"conv: bias shape {bias.shape} does not match Cout={c_out}")
    if stride not in (1, 2):
        raise ShapeError(f"conv: stride must be 1 or 2, got {stride}")
    if stride == 2 and any(n % 2 for n in x.spatial_shape):
        raise ShapeError(f"conv: stride 2 needs even extents, got {x.spatial_shape}")

    spatial_axes = _spatial_axes(rank)
    padded = np.pad(x.data, [(0, 0)] + [(1, 1)] * rank)
    windows = sliding_window_view(padded, (3,) * rank, axis=tuple(spatial_axes))
    if stride > 1:
        windows = windows[(slice(None),) + (slice(None, None, stride),) * rank]
    kernel_axes = list(range(rank + 1, 2 * rank + 1))
    out = np.tensordot(weight.data, windows, axes=([1] + list(range(2, rank + 2)), [0] + kernel_axes))
    out += bias.data.reshape((-1,) + (1,) * rank)
    out_spatial = out.shape[1:]

    def adjoint(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray]:
        gb = g.sum(axis=tuple(spatial_axes))
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, windows, axes=(spatial_axes, spatial_axes))
        gx = None
        if x.requires_grad:
            columns = np.tensordot(weight.data, g, axes=([0], [0]))  # [Cin, k..., S'...]
            g_padded = np.zeros_like(padded)
            for offset in itertools.product(range(3), repeat=rank):
                target = (slice(None),) + tuple(
                    slice(o, o + stride * (n - 1) + 1, stride)
                    for o, n in zip(offset, out_spatial, strict=True)
                )
                g_padded[target] += columns[(slice(None),) + offset]
            gx = g_padded[(slice(None),) + (slice(1, -1),) * rank]
        return gx, gw, gb

    return make_result("conv", out, (x, weight, bias), adjoint)


def fractional_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Transposed convolution, kernel 2, stride 2, no padding: doubles every extent.

    Args:
        x: Input ``[Cin, S...]``
        weight: ``[Cin, Cout, 2...]``
        bias: ``[Cout]``

    Returns:
        ``[Cout, 2S...]``
    """
    rank = x.ndim - 1
    if weight.ndim != rank + 2 or weight.shape[2:] != (2,) * rank:
        raise ShapeError(
            f"fractional_conv: weight shape {weight.shape} is not [Cin, Cout{', 2' * rank}] "
            f"for input shape {x.shape}"
        )
    c_in, c_out = weight.shape[:2]
    if c_in != x.shape[0]:
        raise ShapeError(
            f"fractional_conv: input has {x.shape[0]} channels (shape {x.shape}) but weight "
            f"{weight.shape} expects {c_in}"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"fractional_conv: bias shape {bias.shape} does not match Cout={c_out}")

    spatial = x.spatial_shape
    spatial_axes = _spatial_axes(rank)
    tiles = np.tensordot(weight.data, x.data, axes=([0], [0]))  # [Cout, 2..., S...]
    interleave = [0] + [axis for i in range(rank) for axis in (rank + 1 + i, 1 + i)]
    out = tiles.transpose(interleave).reshape((c_out,) + tuple(2 * n for n in spatial))
    out += bias.data.reshape((-1,) + (1,) * rank)

    split_shape = (c_out,) + tuple(itertools.chain.from_iterable((n, 2) for n in spatial))
    deinterleave = [0] + [2 + 2 * i for i in range(rank)] + [1 + 2 * i for i in range(rank)]

    def adjoint(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray]:
        gb = g.sum(axis=tuple(spatial_axes))
        g_tiles = g.reshape(split_shape).transpose(deinterleave)  # [Cout, 2..., S...]
        gw = gx = None
        if weight.requires_grad:
            gw = np.tensordot(
                x.data, g_tiles, axes=(spatial_axes, list(range(rank + 1, 2 * rank + 1)))
            )
        if x.requires_grad:
            gx = np.tensordot(weight.data, g_tiles, axes=(list(range(1, rank + 2)), list(range(rank + 1))))
        return gx, gw, gb

    return make_result("fractional_conv", out, (x, weight, bias), adjoint)


# Pooling


def pool(x: Tensor, mode: PoolMode, k: int) -> Tensor:
    """Non-overlapping window reduction (kernel ``k``, stride ``k``) per channel.

    Max/min gradients route to the first selected element in row-major window
    order; the average gradient is split evenly over the window.
    """
    if mode not in ("min", "avg", "max"):
        raise ShapeError(f"pool: unknown mode {mode!r}")
    rank = x.ndim - 1
    spatial = x.spatial_shape
    if k < 1 or any(n % k for n in spatial):
        raise ShapeError(f"pool: every spatial extent of {spatial} must be divisible by k={k}")

    channels = x.shape[0]
    out_spatial = tuple(n // k for n in spatial)
    split = x.data.reshape((channels,) + tuple(itertools.chain.from_iterable((n, k) for n in out_spatial)))
    order = [0] + [1 + 2 * i for i in range(rank)] + [2 + 2 * i for i in range(rank)]
    restore = list(np.argsort(order))
    windows = split.transpose(order).reshape((channels,) + out_spatial + (k**rank,))
    window_shape = (channels,) + out_spatial + (k,) * rank

    def _unwindow(g_windows: np.ndarray) -> np.ndarray:
        return g_windows.reshape(window_shape).transpose(restore).reshape(x.shape)

    if mode == "avg":
        out = windows.mean(axis=-1).astype(x.dtype)

        def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
            share = np.repeat((g / k**rank)[..., None], k**rank, axis=-1)
            return (_unwindow(share),)

    else:
        index = windows.argmax(axis=-1) if mode == "max" else windows.argmin(axis=-1)
        out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]

        def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
            routed = np.zeros(windows.shape, dtype=g.dtype)
            np.put_along_axis(routed, index[..., None], g[..., None], axis=-1)
            return (_unwindow(routed),)

    return make_result(f"pool_{mode}", np.ascontiguousarray(out), (x,), adjoint)


# Local window sums and finite differences


def box_sum(x: Tensor, window: int) -> Tensor:
    """Sum over a centred odd ``window`` on every spatial axis, zero outside the domain.

    The operator is self-adjoint, so the backward pass applies it again.
    """
    if window < 1 or window % 2 == 0:
        raise ShapeError(f"box_sum: window must be odd and positive, got {window}")
    rank = x.ndim - 1
    size = (1,) + (window,) * rank
    volume = window**rank

    def _apply(array: np.ndarray) -> np.ndarray:
        return ndimage.uniform_filter(array, size=size, mode="constant", cval=0.0) * volume

    out = _apply(x.data).astype(x.dtype)
    return make_result("box_sum", out, (x,), lambda g: (_apply(g).astype(g.dtype),))


def spatial_gradient(x: Tensor, axis: int) -> Tensor:
    """Derivative along spatial ``axis``: central differences, one-sided at the borders."""
    array_axis = axis + 1
    if not 0 <= axis < x.ndim - 1:
        raise ShapeError(f"spatial_gradient: axis {axis} out of range for shape {x.shape}")
    if x.shape[array_axis] < 2:
        raise ShapeError(f"spatial_gradient: extent along axis {axis} must be >= 2, got {x.shape}")
    out = np.gradient(x.data, axis=array_axis).astype(x.dtype)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        gm = np.moveaxis(g, array_axis, 0)
        acc = np.zeros_like(gm)
        if gm.shape[0] > 2:
            acc[2:] += gm[1:-1] / 2
            acc[:-2] -= gm[1:-1] / 2
        acc[1] += gm[0]
        acc[0] -= gm[0]
        acc[-1] += gm[-1]
        acc[-2] -= gm[-1]
        return (np.moveaxis(acc, 0, array_axis),)

    return make_result("spatial_gradient", out, (x,), adjoint)


# Resampling


def grid_sample(image: Tensor, coords: Tensor) -> Tensor:
    """Sample ``image`` at absolute voxel coordinates with (bi/tri)linear interpolation.

    Coordinates outside ``[0, extent - 1]`` are clamped to the border; the
    gradient with respect to a clamped coordinate is zero.

    Args:
        image: ``[C, S...]``
        coords: ``[rank, T...]``; channel ``a`` is the position along spatial axis ``a``

    Returns:
        ``[C, T...]``
    """
    rank = image.ndim - 1
    if coords.shape[0] != rank or coords.ndim != rank + 1:
        raise ShapeError(
            f"grid_sample: coordinates shape {coords.shape} does not match image rank "
            f"{rank} (image shape {image.shape})"
        )
    dtype = image.dtype
    spatial = image.spatial_shape
    channels = image.shape[0]
    flat_image = image.data.reshape(channels, -1)
    strides = [int(np.prod(spatial[a + 1 :])) for a in range(rank)]

    lows: list[np.ndarray] = []
    fracs: list[np.ndarray] = []
    insides: list[np.ndarray] = []
    for a in range(rank):
        n = spatial[a]
        c = coords.data[a]
        clamped = np.clip(c, 0, n - 1)
        if n == 1:
            low = np.zeros(c.shape, dtype=np.intp)
            frac = np.zeros(c.shape, dtype=dtype)
        else:
            low = np.minimum(np.floor(clamped).astype(np.intp), n - 2)
            frac = (clamped - low).astype(dtype)
        lows.append(low)
        fracs.append(frac)
        insides.append(((c >= 0) & (c <= n - 1) & (n > 1)).astype(dtype))

    corners = list(itertools.product((0, 1), repeat=rank))
    indices: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    out = np.zeros((channels,) + coords.spatial_shape, dtype=dtype)
    for bits in corners:
        index = np.zeros(coords.spatial_shape, dtype=np.intp)
        weight = np.ones(coords.spatial_shape, dtype=dtype)
        for a, bit in enumerate(bits):
            step = bit if spatial[a] > 1 else 0
            index += (lows[a] + step) * strides[a]
            weight *= fracs[a] if bit else 1 - fracs[a]
        indices.append(index)
        weights.append(weight)
        out += flat_image[:, index] * weight

    def adjoint(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        g_image = g_coords = None
        if image.requires_grad:
            g_flat = np.zeros_like(flat_image)
            for index, weight in zip(indices, weights, strict=True):
                for ch in range(channels):
                    g_flat[ch] += np.bincount(
                        index.ravel(), weights=(g[ch] * weight).ravel(), minlength=flat_image.shape[1]
                    ).astype(dtype)
            g_image = g_flat.reshape(image.shape)
        if coords.requires_grad:
            g_coords = np.zeros_like(coords.data)
            for bits, index in zip(corners, indices, strict=True):
                sampled = (g * flat_image[:, index]).sum(axis=0)
                for a in range(rank):
                    slope = np.full(coords.spatial_shape, 1.0 if bits[a] else -1.0, dtype=dtype)
                    for b, bit in enumerate(bits):
                        if b != a:
                            slope *= fracs[b] if bit else 1 - fracs[b]
                    g_coords[a] += sampled * slope * insides[a]
        return g_image, g_coords

    return make_result("grid_sample", out, (image, coords), adjoint)
