"""Handcrafted multi-scale pooling features that replace a learnable encoder."""

import logging
from dataclasses import dataclass

from lessnet.autograd import Tensor, concat, pool
from lessnet.core.errors import PyramidError
from lessnet.domain.config import PyramidConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoolingPyramid:
    """Pooling features of a moving/fixed pair.

    Each present level stacks, per enabled mode in the order min, avg, max, the
    pooled moving and fixed channels: ``[min_M, min_F, avg_M, avg_F, max_M, max_F]``
    when all modes are on. Disabled levels are ``None``.
    """

    original: Tensor | None
    level_half: Tensor | None
    level_quarter: Tensor | None
    level_eighth: Tensor | None

    def level(self, k: int) -> Tensor | None:
        return {2: self.level_half, 4: self.level_quarter, 8: self.level_eighth}[k]

    def element_count(self) -> int:
        levels = (self.level_half, self.level_quarter, self.level_eighth)
        return sum(t.size for t in levels if t is not None)


def build_pyramid(pair: Tensor, cfg: PyramidConfig | None = None) -> PoolingPyramid:
    """Pool the stacked pair at windows 2, 4 and 8 and concatenate the modes.

    Each window is applied directly to the original pair (not by composing
    window-2 pools). The operation has no parameters.

    Args:
        pair: ``[2, S...]`` tensor, moving image in channel 0, fixed in channel 1
        cfg: Enabled modes, levels and whether the original pair is kept

    Returns:
        PoolingPyramid with disabled entries set to None

    Raises:
        PyramidError: If the pair is not 2-channel or an extent is not divisible by 8
    """
    cfg = cfg or PyramidConfig()
    if pair.shape[0] != 2:
        raise PyramidError(f"expected a 2-channel moving/fixed pair, got shape {pair.shape}")
    if any(n % 8 for n in pair.spatial_shape):
        raise PyramidError(
            f"every spatial extent must be divisible by 8 for the pooling pyramid, got {pair.spatial_shape}"
        )

    levels: dict[int, Tensor | None] = {}
    for k in (2, 4, 8):
        if k in cfg.levels:
            levels[k] = concat([pool(pair, mode, k) for mode in cfg.modes])
        else:
            levels[k] = None

    return PoolingPyramid(
        original=pair if cfg.include_original else None,
        level_half=levels[2],
        level_quarter=levels[4],
        level_eighth=levels[8],
    )
