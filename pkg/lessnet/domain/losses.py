"""Similarity terms, the diffusion regulariser and the composite training objective."""

import logging
from dataclasses import dataclass

import numpy as np

from lessnet.autograd import Tensor, add, box_sum, div, getitem, mean, mul, square, sub, sum_all
from lessnet.core.errors import LossError
from lessnet.domain.config import LossConfig
from lessnet.domain.warp import exponentiate_displacement, warp

logger = logging.getLogger(__name__)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise LossError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    _same_shape("mse", a, b)
    return mean(square(sub(a, b)))


def _local_ncc(a: Tensor, b: Tensor, window: int, eps: float) -> Tensor:
    # In-bounds voxel count of each window; windows are clipped at the border
    counts = box_sum(Tensor(np.ones(a.shape, dtype=a.dtype)), window).data
    sum_a = box_sum(a, window)
    sum_b = box_sum(b, window)
    sum_aa = box_sum(square(a), window)
    sum_bb = box_sum(square(b), window)
    sum_ab = box_sum(mul(a, b), window)

    cross = sub(sum_ab, div(mul(sum_a, sum_b), counts))
    var_a = sub(sum_aa, div(square(sum_a), counts))
    var_b = sub(sum_bb, div(square(sum_b), counts))
    r = div(square(cross), add(mul(var_a, var_b), eps))
    return mean(r)


def _global_ncc(a: Tensor, b: Tensor, eps: float) -> Tensor:
    n = float(a.size)
    sum_a, sum_b = sum_all(a), sum_all(b)
    cross = sub(sum_all(mul(a, b)), div(mul(sum_a, sum_b), n))
    var_a = sub(sum_all(square(a)), div(square(sum_a), n))
    var_b = sub(sum_all(square(b)), div(square(sum_b), n))
    return div(square(cross), add(mul(var_a, var_b), eps))


def ncc(a: Tensor, b: Tensor, window: int = 9, eps: float = 1e-5, mode: str = "local") -> Tensor:
    """Squared normalised cross-correlation similarity in ``[0, 1]``.

    Local mode computes, for every voxel-centred window,
    ``r = cov(a, b)**2 / (var(a) * var(b) + eps)`` (sums over the in-bounds
    voxels of the window) and returns the mean of ``r``. Global mode uses a
    single window covering the whole image.

    Args:
        a: First image ``[C, S...]``
        b: Second image, same shape
        window: Odd window extent on every axis (local mode)
        eps: Added to the denominator product
        mode: ``"local"`` or ``"global"``

    Raises:
        LossError: If shapes differ, the window is even or the mode is unknown
    """
    _same_shape("ncc", a, b)
    if window < 1 or window % 2 == 0:
        raise LossError(f"ncc: window must be odd and positive, got {window}")
    if mode == "local":
        return _local_ncc(a, b, window, eps)
    if mode == "global":
        return _global_ncc(a, b, eps)
    raise LossError(f"ncc: unknown mode {mode!r}, expected 'local' or 'global'")


def diffusion_reg(u: Tensor) -> Tensor:
    """First-order diffusion penalty: mean squared forward difference, averaged over axes.

    Axes of extent 1 have no differences and are skipped.
    """
    rank = u.ndim - 1
    terms: list[Tensor] = []
    for axis in range(rank):
        if u.shape[axis + 1] < 2:
            continue
        ahead = [slice(None)] * u.ndim
        behind = [slice(None)] * u.ndim
        ahead[axis + 1] = slice(1, None)
        behind[axis + 1] = slice(None, -1)
        diff = sub(getitem(u, tuple(ahead)), getitem(u, tuple(behind)))
        terms.append(mean(square(diff)))
    if not terms:
        raise LossError(f"diffusion_reg needs an extent >= 2 on some axis, got {u.shape}")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return mul(total, 1.0 / len(terms))


def similarity_loss(warped: Tensor, fixed: Tensor, cfg: LossConfig) -> Tensor:
    """Similarity term to minimise: MSE, or ``1 - ncc``."""
    if cfg.similarity == "mse":
        return mse(warped, fixed)
    return sub(1.0, ncc(warped, fixed, cfg.ncc_window, cfg.epsilon, cfg.ncc_mode))


@dataclass(frozen=True)
class LossBreakdown:
    """Total objective and its two components (all one-element tensors)."""

    total: Tensor
    similarity: Tensor
    regularizer: Tensor


def total_loss(
    moving: Tensor,
    fixed: Tensor,
    field: Tensor,
    cfg: LossConfig,
    diffeomorphic: bool = False,
    integration_steps: int = 7,
) -> LossBreakdown:
    """Composite objective ``similarity(warp(moving, u), fixed) + lam * reg``.

    For diffeomorphic models ``field`` is a stationary velocity ``v``: the
    moving image is warped by ``Exp(v)`` and the regulariser acts on ``v``.
    """
    _same_shape("total_loss", moving, fixed)
    u = exponentiate_displacement(field, integration_steps) if diffeomorphic else field
    warped = warp(moving, u)
    similarity = similarity_loss(warped, fixed, cfg)
    regularizer = diffusion_reg(field)
    total = add(similarity, mul(regularizer, cfg.lam))
    return LossBreakdown(total=total, similarity=similarity, regularizer=regularizer)
