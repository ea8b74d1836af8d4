"""Unit tests for the pooling pyramid."""

import numpy as np
import pytest

from lessnet.autograd import Tensor, concat, pool
from lessnet.core.errors import PyramidError
from lessnet.domain.config import PyramidConfig
from lessnet.domain.pyramid import build_pyramid


@pytest.fixture
def pair():
    """Random 16x16 moving/fixed pair."""
    rng = np.random.default_rng(7)
    return Tensor(rng.random((2, 16, 16)))


def test_level_shapes():
    """Test an 8x8 pair gives 6x4x4, 6x2x2 and 6x1x1 levels."""
    pyramid = build_pyramid(Tensor(np.random.default_rng(0).random((2, 8, 8))))
    assert pyramid.level_half.shape == (6, 4, 4)
    assert pyramid.level_quarter.shape == (6, 2, 2)
    assert pyramid.level_eighth.shape == (6, 1, 1)
    assert pyramid.original.shape == (2, 8, 8)


def test_constant_pair_is_constant():
    """Test every entry of a constant pair's pyramid equals the constant."""
    pyramid = build_pyramid(Tensor(np.full((2, 16, 16), 0.25)))
    for k in (2, 4, 8):
        np.testing.assert_allclose(pyramid.level(k).data, 0.25)


def test_channel_order(pair):
    """Test channels are min, avg, max with moving before fixed."""
    half = build_pyramid(pair).level_half.data
    moving = Tensor(pair.data[:1])
    fixed = Tensor(pair.data[1:])
    np.testing.assert_array_equal(half[0], pool(moving, "min", 2).data[0])
    np.testing.assert_array_equal(half[1], pool(fixed, "min", 2).data[0])
    np.testing.assert_allclose(half[2], pool(moving, "avg", 2).data[0])
    np.testing.assert_array_equal(half[5], pool(fixed, "max", 2).data[0])


@pytest.mark.parametrize("mode", ["min", "avg", "max"])
def test_windows_compose(pair, mode):
    """Test pooling by 4 equals pooling by 2 twice."""
    twice = pool(pool(pair, mode, 2), mode, 2).data
    np.testing.assert_allclose(pool(pair, mode, 4).data, twice, rtol=1e-6)


def test_swapping_pair_swaps_channels(pair):
    """Test swapping moving and fixed swaps each channel pair of every level."""
    swapped = Tensor(pair.data[::-1].copy())
    original, mirrored = build_pyramid(pair), build_pyramid(swapped)
    for k in (2, 4, 8):
        a, b = original.level(k).data, mirrored.level(k).data
        np.testing.assert_allclose(a[0::2], b[1::2])
        np.testing.assert_allclose(a[1::2], b[0::2])


def test_element_count(pair):
    """Test the pyramid holds 6 * (1/4 + 1/16 + 1/64) of the pair's voxels."""
    assert build_pyramid(pair).element_count() == 6 * (64 + 16 + 4)


def test_element_count_3d():
    """Test the volumetric pyramid holds 6 * (1/8 + 1/64 + 1/512) of the voxels."""
    pyramid = build_pyramid(Tensor(np.zeros((2, 8, 8, 8))))
    assert pyramid.element_count() == 6 * (64 + 8 + 1)
    assert pyramid.level_eighth.shape == (6, 1, 1, 1)


def test_indivisible_extent():
    """Test extents not divisible by 8 are rejected."""
    with pytest.raises(PyramidError):
        build_pyramid(Tensor(np.zeros((2, 12, 16))))


def test_single_channel_rejected():
    """Test a single image is not a pair."""
    with pytest.raises(PyramidError):
        build_pyramid(Tensor(np.zeros((1, 16, 16))))


def test_disabled_levels_and_modes(pair):
    """Test ablation configs drop levels, the original pair and modes."""
    cfg = PyramidConfig(modes=("max",), levels=(8,), include_original=False)
    pyramid = build_pyramid(pair, cfg)
    assert pyramid.level_half is None
    assert pyramid.level_quarter is None
    assert pyramid.original is None
    assert pyramid.level_eighth.shape == (2, 2, 2)
    np.testing.assert_array_equal(pyramid.level_eighth.data, pool(pair, "max", 8).data)


def test_modes_are_canonical():
    """Test pooling modes are stored in min, avg, max order."""
    assert PyramidConfig(modes=("max", "min")).modes == ("min", "max")
    assert PyramidConfig(levels=(8, 2)).levels == (2, 8)


def test_pyramid_matches_manual_concat(pair):
    """Test a level is the channel concatenation of the pooled pair per mode."""
    manual = concat([pool(pair, mode, 4) for mode in ("min", "avg", "max")])
    np.testing.assert_array_equal(build_pyramid(pair).level_quarter.data, manual.data)
