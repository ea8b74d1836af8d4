"""Small symmetric encoder-decoder baseline for the encoder-redundancy experiment."""

import logging

from lessnet.autograd import Tensor, concat, conv, fractional_conv, leaky_relu
from lessnet.core.errors import ShapeError
from lessnet.domain.config import BaselineConfig
from lessnet.domain.models.base import LayerSpec, ParameterSet, RegistrationModel

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2


class EncoderDecoder(RegistrationModel):
    """Contracting path of stride-2 convolutions, expanding path with skips.

    Decoder level ``j`` upsamples with a fractional convolution, concatenates
    the encoder activation of the same scale (the input pair at full scale)
    and convolves. The output convolution is linear and predicts voxel
    displacements directly.
    """

    kind = "baseline"

    def __init__(self, config: BaselineConfig | None = None):
        super().__init__(config or BaselineConfig())
        self.config: BaselineConfig

    def layer_table(self) -> list[LayerSpec]:
        enc = self.config.encoder_widths
        dec = self.config.decoder_widths
        depth = len(enc)
        layers: list[LayerSpec] = []
        c_in = 2
        for i, width in enumerate(enc):
            layers.append(LayerSpec(f"encoder/conv{i + 1}", "conv_stride2", c_in, width, 2 ** (i + 1)))
            c_in = width
        for j, width in enumerate(dec):
            divisor = 2 ** (depth - 1 - j)
            skip = enc[depth - 2 - j] if depth - 2 - j >= 0 else 2
            layers.append(LayerSpec(f"decoder/block{j + 1}/up", "fractional_conv", c_in, width, divisor))
            layers.append(LayerSpec(f"decoder/block{j + 1}/conv", "conv", width + skip, width, divisor))
            c_in = width
        layers.append(LayerSpec("output/conv", "conv", c_in, self.rank, 1, is_output=True))
        return layers

    def check_extents(self, spatial: tuple[int, ...]) -> None:
        divisor = self.config.divisor
        if len(spatial) != self.rank:
            raise ShapeError(f"baseline is configured for rank {self.rank}, got extents {spatial}")
        if any(n % divisor for n in spatial):
            raise ShapeError(f"baseline needs every extent divisible by {divisor}, got {spatial}")

    def forward(self, params: ParameterSet, pair: Tensor) -> Tensor:
        if pair.shape[0] != 2:
            raise ShapeError(f"expected a 2-channel moving/fixed pair, got shape {pair.shape}")
        self.check_extents(pair.spatial_shape)

        activations = [pair]
        x = pair
        for i in range(len(self.config.encoder_widths)):
            p = params[f"encoder/conv{i + 1}"]
            x = leaky_relu(conv(x, p.weight, p.bias, stride=2), LEAKY_SLOPE)
            activations.append(x)

        # activations[k] has divisor 2**k; the deepest is the decoder input
        depth = len(self.config.decoder_widths)
        for j in range(depth):
            up = params[f"decoder/block{j + 1}/up"]
            x = leaky_relu(fractional_conv(x, up.weight, up.bias), LEAKY_SLOPE)
            x = concat([x, activations[depth - 1 - j]])
            c = params[f"decoder/block{j + 1}/conv"]
            x = leaky_relu(conv(x, c.weight, c.bias), LEAKY_SLOPE)

        out = params["output/conv"]
        return conv(x, out.weight, out.bias)


def baseline_forward(cfg: BaselineConfig, params: ParameterSet, pair: Tensor) -> Tensor:
    """Displacement field ``[rank, S...]`` of the baseline for a stacked pair."""
    return EncoderDecoder(cfg).forward(params, pair)
