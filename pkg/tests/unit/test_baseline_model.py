"""Unit tests for the encoder-decoder baseline."""

import numpy as np
import pytest
from pydantic import ValidationError

from lessnet.autograd import Tensor, precision
from lessnet.autograd.gradcheck import check_gradients
from lessnet.core.errors import ConfigError, ShapeError
from lessnet.domain.config import BaselineConfig, ModelConfig
from lessnet.domain.models import EncoderDecoder, LessNet, Parameter, ParameterSet, build_model

SMALL = BaselineConfig(encoder_widths=(2, 2, 2, 2), decoder_widths=(2, 2, 2, 2))


@pytest.fixture
def images():
    """Random 16x16 moving and fixed images."""
    rng = np.random.default_rng(21)
    return Tensor(rng.random((1, 16, 16))), Tensor(rng.random((1, 16, 16)))


def test_layer_table():
    """Test the encoder, decoder and output layers with their skip widths."""
    table = EncoderDecoder().layer_table()
    widths = {spec.name: (spec.kind, spec.c_in, spec.c_out) for spec in table}
    assert widths["encoder/conv1"] == ("conv_stride2", 2, 16)
    assert widths["encoder/conv4"] == ("conv_stride2", 32, 32)
    assert widths["decoder/block1/up"] == ("fractional_conv", 32, 32)
    assert widths["decoder/block1/conv"] == ("conv", 64, 32)
    assert widths["decoder/block4/conv"] == ("conv", 18, 16)
    assert widths["output/conv"] == ("conv", 16, 2)
    assert len(table) == 4 + 2 * 4 + 1


def test_count_matches_initialised_scalars():
    """Test the layer-table count equals the scalars actually initialised."""
    model = EncoderDecoder()
    assert model.init_parameters(0).scalar_count() == model.count_parameters()


def test_forward_shape(images):
    """Test the baseline predicts a full-resolution 2-channel field."""
    model = EncoderDecoder()
    assert model.predict(model.init_parameters(0), *images).shape == (2, 16, 16)


def test_zero_parameters_give_zero_field(images):
    """Test an all-zero parameter set predicts no displacement."""
    model = EncoderDecoder(SMALL)
    params = model.init_parameters(0)
    for _, param in params.items():
        param.weight.data[...] = 0
        param.bias.data[...] = 0
    np.testing.assert_array_equal(model.predict(params, *images).data, 0.0)


def test_extents_must_divide_by_sixteen():
    """Test four stride-2 levels need extents divisible by 16."""
    model = EncoderDecoder(SMALL)
    moving = Tensor(np.zeros((1, 24, 24)))
    with pytest.raises(ShapeError):
        model.predict(model.init_parameters(0), moving, moving)


def test_mirrored_widths_required():
    """Test encoder and decoder must have the same depth."""
    with pytest.raises(ValidationError):
        BaselineConfig(encoder_widths=(8, 8), decoder_widths=(8,))


def test_has_no_diffeomorphic_variant():
    """Test the baseline never integrates its output."""
    model = EncoderDecoder()
    assert model.diffeomorphic is False
    assert model.integration_steps == 0


def test_output_gradients_match_finite_differences():
    """Test analytic output-layer gradients through the whole baseline."""
    model = EncoderDecoder(SMALL)
    rng = np.random.default_rng(5)
    with precision("float64"):
        params = model.init_parameters(0)
        pair = Tensor(rng.random((2, 16, 16)))

    def forward(weight):
        layers = dict(params.layers)
        layers["output/conv"] = Parameter(weight, params["output/conv"].bias)
        return model.forward(ParameterSet(layers), pair)

    assert check_gradients(forward, [params["output/conv"].weight.data]).passed(1e-3)


def test_build_model_from_header():
    """Test checkpoint headers rebuild either network."""
    lessnet = LessNet(ModelConfig(channels=3))
    baseline = EncoderDecoder(SMALL)
    rebuilt = build_model(lessnet.header()["kind"], lessnet.header()["config"])
    assert isinstance(rebuilt, LessNet)
    assert rebuilt.config == lessnet.config
    assert build_model("baseline", baseline.header()["config"]).config == SMALL
    with pytest.raises(ConfigError):
        build_model("transformer", {})
