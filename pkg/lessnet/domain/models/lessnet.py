"""LessNet: a learnable decoder over the handcrafted pooling pyramid."""

import logging

import numpy as np

from lessnet.autograd import Tensor, concat, conv, fractional_conv, leaky_relu, mul, softsign
from lessnet.core.errors import ShapeError
from lessnet.domain.config import ModelConfig
from lessnet.domain.models.base import LayerSpec, ParameterSet, RegistrationModel
from lessnet.domain.pyramid import PoolingPyramid, build_pyramid

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01

# Block index -> (pyramid level concatenated after upsampling, output divisor)
_BLOCK_LEVELS = {2: 4, 3: 2}


class LessNet(RegistrationModel):
    """Four decoder blocks of widths ``4C, 3C, 2C, C`` from 1/8 scale to full scale.

    Block 1 convolves the 1/8 pooling features. Blocks 2 to 4 upsample with a
    fractional convolution, concatenate the matching pyramid level (the 1/4
    and 1/2 features, then the original pair) and convolve. A final
    convolution with SoftSign maps to ``rank`` channels in voxel units.
    """

    kind = "lessnet"

    def __init__(self, config: ModelConfig | None = None):
        super().__init__(config or ModelConfig())
        self.config: ModelConfig

    def _skip_channels(self, block: int) -> int:
        pyramid = self.config.pyramid
        if block == 4:
            return 2 if pyramid.include_original else 0
        return pyramid.channels_per_level if _BLOCK_LEVELS[block] in pyramid.levels else 0

    def layer_table(self) -> list[LayerSpec]:
        widths = self.config.block_widths
        extra = self.config.convs_per_block - 1
        layers: list[LayerSpec] = []

        def block_convs(block: int, c_in: int, width: int, divisor: int) -> None:
            layers.append(LayerSpec(f"decoder/block{block}/conv1", "conv", c_in, width, divisor))
            for i in range(extra):
                layers.append(LayerSpec(f"decoder/block{block}/conv{i + 2}", "conv", width, width, divisor))

        block_convs(1, self.config.pyramid.channels_per_level, widths[0], 8)
        for block, divisor in ((2, 4), (3, 2), (4, 1)):
            prev, width = widths[block - 2], widths[block - 1]
            layers.append(LayerSpec(f"decoder/block{block}/up", "fractional_conv", prev, width, divisor))
            block_convs(block, width + self._skip_channels(block), width, divisor)
        layers.append(LayerSpec("output/conv", "conv", widths[3], self.rank, 1, is_output=True))
        return layers

    def check_extents(self, spatial: tuple[int, ...]) -> None:
        if len(spatial) != self.rank:
            raise ShapeError(f"lessnet is configured for rank {self.rank}, got extents {spatial}")
        if any(n % 8 for n in spatial):
            raise ShapeError(f"lessnet needs every extent divisible by 8, got {spatial}")

    def scale(self, spatial: tuple[int, ...]) -> np.ndarray:
        """Per-axis SoftSign-to-voxel factor, shaped to broadcast over ``[rank, S...]``."""
        values = self.config.displacement_scale or tuple((n - 1) / 2 for n in spatial)
        return np.asarray(values, dtype=np.float64).reshape((self.rank,) + (1,) * self.rank)

    def forward(self, params: ParameterSet, pair: Tensor) -> Tensor:
        return self.decode(params, build_pyramid(pair, self.config.pyramid))

    def decode(self, params: ParameterSet, pyramid: PoolingPyramid) -> Tensor:
        """Run the decoder blocks over a prebuilt pyramid.

        Levels that are ``None`` (ablations) skip their concatenation.
        """
        eighth = pyramid.level_eighth
        if eighth is None:
            raise ShapeError("the 1/8 pooling level is required by the first decoder block")
        extra = self.config.convs_per_block

        def layer(name: str, x: Tensor) -> Tensor:
            p = params[name]
            if name.endswith("/up"):
                return leaky_relu(fractional_conv(x, p.weight, p.bias), LEAKY_SLOPE)
            return leaky_relu(conv(x, p.weight, p.bias), LEAKY_SLOPE)

        def convs(block: int, x: Tensor) -> Tensor:
            for i in range(extra):
                x = layer(f"decoder/block{block}/conv{i + 1}", x)
            return x

        x = convs(1, eighth)
        skips = {2: pyramid.level_quarter, 3: pyramid.level_half, 4: pyramid.original}
        for block in (2, 3, 4):
            x = layer(f"decoder/block{block}/up", x)
            skip = skips[block]
            if skip is not None:
                x = concat([x, skip])
            x = convs(block, x)

        out = params["output/conv"]
        field = softsign(conv(x, out.weight, out.bias))
        scale = self.scale(field.spatial_shape).astype(field.dtype)
        return mul(field, scale)
