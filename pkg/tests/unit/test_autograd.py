"""Unit tests for tensors and differentiable primitives."""

import numpy as np
import pytest

from lessnet.autograd import (
    Tensor,
    backward,
    box_sum,
    concat,
    conv,
    default_dtype,
    div,
    fractional_conv,
    getitem,
    grid_sample,
    leaky_relu,
    mean,
    mul,
    pool,
    precision,
    record,
    softsign,
    spatial_gradient,
    square,
    sum_all,
)
from lessnet.autograd.gradcheck import check_gradients
from lessnet.autograd.tensor import make_result
from lessnet.core.errors import NonFiniteError, ShapeError

TOLERANCE = 1e-3


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


def away_from_zero(rng, shape):
    """Random values with magnitude at least 0.1 (clear of activation kinks)."""
    return rng.choice([-1.0, 1.0], size=shape) * (0.1 + rng.random(shape))


def test_zero_extent_rejected():
    """Test tensors with a zero extent are rejected."""
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 4)))


def test_default_precision_is_float32():
    """Test float32 is the default and float64 is available in a block."""
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with precision("float64"):
        assert default_dtype() is np.float64
        assert Tensor([1.0]).dtype == np.float64
    assert default_dtype() is np.float32


def test_unknown_precision():
    """Test unknown precision names raise."""
    with pytest.raises(ValueError):
        with precision("float16"):
            pass


def test_gradient_accumulates_over_reuse():
    """Test a value consumed twice accumulates both gradient contributions."""
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with record() as rec:
        y = sum_all(square(x) + x)
        backward(y, rec)
    np.testing.assert_allclose(x.grad, [3.0, 5.0, 7.0])


def test_unused_leaf_gets_zero_gradient():
    """Test a leaf without a path to the loss receives zeros."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    w = Tensor([5.0, 5.0], requires_grad=True)
    with record() as rec:
        _ = mul(w, 2.0)
        loss = sum_all(x)
        backward(loss, rec)
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
    np.testing.assert_array_equal(w.grad, [0.0, 0.0])


def test_backward_needs_scalar():
    """Test backward on a non-scalar output raises."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with record() as rec:
        y = mul(x, 2.0)
        with pytest.raises(ShapeError):
            backward(y, rec)


def test_backward_outside_record():
    """Test backward without an active record raises."""
    with pytest.raises(ShapeError):
        backward(Tensor([1.0]))


def test_forward_non_finite_raises():
    """Test division by zero surfaces as NonFiniteError naming the op."""
    with pytest.raises(NonFiniteError) as exc:
        div(Tensor([1.0]), Tensor([0.0]))
    assert exc.value.op == "div"
    assert exc.value.stage == "forward"


def test_conv_identity_kernel():
    """Test a centred unit kernel reproduces the input."""
    x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4))
    weight = np.zeros((1, 1, 3, 3), dtype=np.float32)
    weight[0, 0, 1, 1] = 1.0
    out = conv(x, Tensor(weight), Tensor([0.5]))
    np.testing.assert_allclose(out.data, x.data + 0.5)


def test_conv_zero_padding():
    """Test border outputs only see in-bounds voxels."""
    x = Tensor(np.ones((1, 4, 4)))
    out = conv(x, Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    assert out.data[0, 0, 0] == 4.0
    assert out.data[0, 0, 1] == 6.0
    assert out.data[0, 1, 1] == 9.0


def test_conv_stride_two_halves_extents():
    """Test stride-2 convolution halves every extent."""
    out = conv(Tensor(np.ones((2, 8, 6))), Tensor(np.ones((3, 2, 3, 3))), Tensor(np.zeros(3)), stride=2)
    assert out.shape == (3, 4, 3)


def test_conv_channel_mismatch():
    """Test a weight expecting other input channels is rejected."""
    with pytest.raises(ShapeError):
        conv(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), Tensor([0.0]))


def test_fractional_conv_doubles_extents():
    """Test each input voxel writes a 2x2 tile into the output."""
    x = Tensor(np.ones((2, 3, 3)))
    out = fractional_conv(x, Tensor(np.ones((2, 4, 2, 2))), Tensor(np.full(4, 0.5)))
    assert out.shape == (4, 6, 6)
    np.testing.assert_allclose(out.data, 2.5)


def test_fractional_conv_tile_layout():
    """Test the kernel offset of each tile element follows the spatial axes."""
    weight = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)
    x = np.zeros((1, 2, 2), dtype=np.float32)
    x[0, 1, 0] = 1.0
    out = fractional_conv(Tensor(x), Tensor(weight), Tensor([0.0]))
    np.testing.assert_array_equal(out.data[0, 2:4, 0:2], weight[0, 0])
    assert out.data.sum() == weight.sum()


def test_pool_modes():
    """Test min, avg and max pooling over non-overlapping windows."""
    x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4))
    np.testing.assert_array_equal(pool(x, "max", 2).data[0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(pool(x, "min", 2).data[0], [[0, 2], [8, 10]])
    np.testing.assert_allclose(pool(x, "avg", 2).data[0], [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_allclose(pool(x, "avg", 4).data[0], [[7.5]])


def test_pool_divisibility():
    """Test pooling rejects extents not divisible by the window."""
    with pytest.raises(ShapeError):
        pool(Tensor(np.ones((1, 6, 4))), "max", 4)


def test_concat_spatial_mismatch():
    """Test concatenation requires equal spatial extents."""
    with pytest.raises(ShapeError):
        concat([Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 4, 2)))])


def test_box_sum_counts_in_bounds():
    """Test box sums of ones count the in-bounds voxels of each window."""
    out = box_sum(Tensor(np.ones((1, 5, 5))), 3)
    assert out.data[0, 2, 2] == pytest.approx(9.0)
    assert out.data[0, 0, 0] == pytest.approx(4.0)
    assert out.data[0, 0, 2] == pytest.approx(6.0)


def test_spatial_gradient_of_ramp():
    """Test the derivative of a linear ramp is constant, borders included."""
    ramp = np.broadcast_to(np.arange(6, dtype=np.float32) * 2.0, (6, 6))[None]
    np.testing.assert_allclose(spatial_gradient(Tensor(ramp), 1).data, 2.0)
    np.testing.assert_allclose(spatial_gradient(Tensor(ramp), 0).data, 0.0)


def test_softsign_range():
    """Test softsign stays inside (-1, 1)."""
    out = softsign(Tensor([-100.0, -1.0, 0.0, 1.0, 100.0]))
    np.testing.assert_allclose(out.data, [-100 / 101, -0.5, 0.0, 0.5, 100 / 101], rtol=1e-6)


def test_grid_sample_integer_and_clamped():
    """Test sampling at voxel centres returns the voxels and clamps outside."""
    image = Tensor(np.arange(9, dtype=np.float32).reshape(1, 3, 3))
    coords = np.array([[[0.0, 2.0, -5.0]], [[1.0, 2.0, 10.0]]], dtype=np.float32)
    out = grid_sample(image, Tensor(coords))
    np.testing.assert_allclose(out.data[0, 0], [1.0, 8.0, 2.0])


def test_grid_sample_linear_interpolation():
    """Test a half-voxel offset averages the neighbours."""
    image = Tensor(np.array([[[0.0, 2.0], [4.0, 6.0]]]))
    coords = Tensor(np.array([[[0.5]], [[0.5]]]))
    assert grid_sample(image, coords).item() == pytest.approx(3.0)


def test_getitem_rejects_fancy_index():
    """Test only ints and slices are accepted."""
    with pytest.raises(ShapeError):
        getitem(Tensor(np.ones((2, 2))), np.array([0, 1]))


def test_gradcheck_detects_wrong_adjoint():
    """Test the finite-difference oracle flags an incorrect adjoint."""

    def doubled(x):
        return make_result("doubled", 2 * x.data, (x,), lambda g: (g,))

    result = check_gradients(doubled, [np.ones((1, 3))])
    assert not result.passed(TOLERANCE)
    assert result.max_error == pytest.approx(0.5)


def test_gradcheck_arithmetic(rng):
    """Test gradients of broadcasting arithmetic and reductions."""
    a = rng.random((2, 3, 3)) + 0.5
    b = rng.random((2, 1, 3)) + 0.5
    result = check_gradients(lambda x, y: mean(div(mul(x, y), y + x) - square(x - y)), [a, b])
    assert result.passed(TOLERANCE)


def test_gradcheck_conv(rng):
    """Test convolution gradients for input, weight and bias."""
    inputs = [rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)]
    assert check_gradients(conv, inputs).passed(TOLERANCE)


def test_gradcheck_conv_stride_two(rng):
    """Test stride-2 convolution gradients."""
    inputs = [rng.standard_normal((2, 4, 6)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)]
    assert check_gradients(lambda x, w, b: conv(x, w, b, stride=2), inputs).passed(TOLERANCE)


def test_gradcheck_conv_3d(rng):
    """Test volumetric convolution gradients."""
    inputs = [rng.standard_normal((1, 4, 4, 4)), rng.standard_normal((2, 1, 3, 3, 3)), rng.standard_normal(2)]
    assert check_gradients(conv, inputs).passed(TOLERANCE)


def test_gradcheck_fractional_conv(rng):
    """Test fractional convolution gradients in 2D and 3D."""
    inputs_2d = [rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)]
    inputs_3d = [rng.standard_normal((2, 2, 2, 2)), rng.standard_normal((2, 1, 2, 2, 2)), rng.standard_normal(1)]
    assert check_gradients(fractional_conv, inputs_2d).passed(TOLERANCE)
    assert check_gradients(fractional_conv, inputs_3d).passed(TOLERANCE)


@pytest.mark.parametrize("mode", ["min", "avg", "max"])
def test_gradcheck_pool(rng, mode):
    """Test pooling gradients on inputs without ties."""
    x = rng.permutation(32).reshape(2, 4, 4) * 0.1
    assert check_gradients(lambda t: pool(t, mode, 2), [x]).passed(TOLERANCE)


def test_gradcheck_activations(rng):
    """Test leaky ReLU and softsign gradients away from zero."""
    x = away_from_zero(rng, (2, 4, 4))
    assert check_gradients(lambda t: leaky_relu(t, 0.2), [x]).passed(TOLERANCE)
    assert check_gradients(softsign, [x]).passed(TOLERANCE)


def test_gradcheck_box_sum_and_gradient(rng):
    """Test window sums and finite-difference gradients."""
    x = rng.standard_normal((1, 5, 6))
    assert check_gradients(lambda t: box_sum(t, 3), [x]).passed(TOLERANCE)
    assert check_gradients(lambda t: spatial_gradient(t, 0), [x]).passed(TOLERANCE)
    assert check_gradients(lambda t: spatial_gradient(t, 1), [x]).passed(TOLERANCE)


def test_gradcheck_concat_and_getitem(rng):
    """Test channel concatenation and slicing gradients."""
    a, b = rng.standard_normal((1, 3, 3)), rng.standard_normal((2, 3, 3))
    result = check_gradients(lambda x, y: getitem(concat([x, y]), (slice(1, 3), slice(0, 2))), [a, b])
    assert result.passed(TOLERANCE)


def test_gradcheck_grid_sample(rng):
    """Test interpolation gradients for image and coordinates off the voxel grid."""
    image = rng.standard_normal((2, 5, 5))
    low = rng.integers(0, 4, size=(2, 3, 3))
    coords = low + rng.uniform(0.1, 0.9, size=(2, 3, 3))
    assert check_gradients(grid_sample, [image, coords]).passed(TOLERANCE)


def test_gradcheck_grid_sample_3d(rng):
    """Test trilinear interpolation gradients."""
    image = rng.standard_normal((1, 4, 4, 4))
    coords = rng.integers(0, 3, size=(3, 2, 2, 2)) + rng.uniform(0.1, 0.9, size=(3, 2, 2, 2))
    assert check_gradients(grid_sample, [image, coords]).passed(TOLERANCE)


def test_conv_is_linear_in_its_input(rng):
    """Test convolution without bias maps a weighted sum to the weighted sum."""
    with precision("float64"):
        weight, bias = Tensor(rng.standard_normal((3, 2, 3, 3))), Tensor(np.zeros(3))
        first, second = rng.standard_normal((2, 6, 6)), rng.standard_normal((2, 6, 6))
        mixed = conv(Tensor(1.5 * first + 0.25 * second), weight, bias).data
        separate = 1.5 * conv(Tensor(first), weight, bias).data + 0.25 * conv(Tensor(second), weight, bias).data
    np.testing.assert_allclose(mixed, separate, atol=1e-10)


def test_conv_identity_kernel_volumetric(rng):
    """Test a centred unit kernel reproduces a random 3D input."""
    x = Tensor(rng.standard_normal((2, 4, 4, 4)))
    weight = np.zeros((2, 2, 3, 3, 3), dtype=np.float32)
    weight[0, 0, 1, 1, 1] = weight[1, 1, 1, 1, 1] = 1.0
    out = conv(x, Tensor(weight), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, x.data, atol=1e-6)


@pytest.mark.parametrize("window", [2, 4])
def test_min_pool_is_negated_max_pool(rng, window):
    """Test min pooling equals max pooling of the negated input, negated."""
    x = rng.standard_normal((3, 8, 8))
    low = pool(Tensor(x), "min", window).data
    high = pool(Tensor(-x), "max", window).data
    np.testing.assert_array_equal(low, -high)


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_core_ops_across_seeds(seed):
    """Test the network primitives pass gradient checks on many random draws."""
    rng = np.random.default_rng(seed)
    conv_inputs = [rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2)]
    assert check_gradients(conv, conv_inputs, seed=seed).passed(TOLERANCE)
    strided = [rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2)]
    assert check_gradients(lambda x, w, b: conv(x, w, b, stride=2), strided, seed=seed).passed(TOLERANCE)
    up_inputs = [rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 2, 2)), rng.standard_normal(2)]
    assert check_gradients(fractional_conv, up_inputs, seed=seed).passed(TOLERANCE)
    mode = ("min", "avg", "max")[seed % 3]
    distinct = rng.permutation(32).reshape(2, 4, 4) * 0.1
    assert check_gradients(lambda t: pool(t, mode, 2), [distinct], seed=seed).passed(TOLERANCE)
    kinked = away_from_zero(rng, (2, 3, 3))
    assert check_gradients(lambda t: softsign(leaky_relu(t, 0.2)), [kinked], seed=seed).passed(TOLERANCE)
    image = rng.standard_normal((1, 5, 5))
    coords = rng.integers(0, 4, size=(2, 3, 3)) + rng.uniform(0.1, 0.9, size=(2, 3, 3))
    assert check_gradients(grid_sample, [image, coords], seed=seed).passed(TOLERANCE)
