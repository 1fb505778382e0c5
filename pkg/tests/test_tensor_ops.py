"""Forward-op contracts: worked examples, error cases, and the
conv-vs-direct-summation oracle."""

import numpy as np
import pytest

from renet.autodiff import Graph, GraphError, NumericsError, ShapeError, Tensor
from renet.reference import conv2d_reference, maxpool2_reference


def t(arr, **kw):
    return Tensor(np.asarray(arr, dtype=np.float32), **kw)


# -- conv2d -------------------------------------------------------------------


def test_conv2d_all_ones_kernel_hand_map():
    g = Graph()
    x = t(np.arange(1, 10).reshape(1, 1, 3, 3))
    w = t(np.ones((1, 1, 3, 3)))
    b = t(np.zeros(1))
    y = g.conv2d(x, w, b, stride=1, pad=1)
    expected = [[12, 21, 16], [27, 45, 33], [24, 39, 28]]
    np.testing.assert_allclose(y.data[0, 0], expected)


def test_conv2d_delta_kernel_is_identity():
    g = Graph()
    rng = np.random.default_rng(0)
    x = t(rng.uniform(-1, 1, (2, 1, 5, 7)))
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1.0
    y = g.conv2d(x, t(w), t(np.zeros(1)), pad=1)
    np.testing.assert_array_equal(y.data[:, 0], x.data[:, 0])


def test_conv2d_1x1_channel_identity():
    g = Graph()
    rng = np.random.default_rng(1)
    x = t(rng.uniform(-1, 1, (1, 64, 12, 12)))
    w = np.eye(64, dtype=np.float32).reshape(64, 64, 1, 1)
    y = g.conv2d(x, t(w), t(np.zeros(64)))
    np.testing.assert_array_equal(y.data, x.data)


def test_conv2d_output_extent_formula():
    g = Graph()
    x = t(np.zeros((1, 2, 8, 8)))
    y = g.conv2d(x, t(np.zeros((3, 2, 3, 3))), t(np.zeros(3)), stride=1, pad=0)
    assert y.shape == (1, 3, 6, 6)


def test_conv2d_shape_errors():
    g = Graph()
    x = t(np.zeros((1, 2, 8, 8)))
    with pytest.raises(ShapeError):  # channel mismatch
        g.conv2d(x, t(np.zeros((3, 4, 3, 3))), t(np.zeros(3)))
    with pytest.raises(ShapeError):  # bad kernel extent
        g.conv2d(x, t(np.zeros((3, 2, 5, 5))), t(np.zeros(3)))
    with pytest.raises(ShapeError):  # bias width
        g.conv2d(x, t(np.zeros((3, 2, 3, 3))), t(np.zeros(4)))
    with pytest.raises(ShapeError):  # non-integral output extent
        g.conv2d(x, t(np.zeros((3, 2, 3, 3))), t(np.zeros(3)), stride=2, pad=0)


def test_conv2d_matches_reference_on_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(40):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 9))
        o = int(rng.integers(1, 7))
        h = int(rng.integers(3, 17))
        w = int(rng.integers(3, 17))
        k = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, 2))
        x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
        wt = rng.uniform(-1, 1, (o, c, k, k)).astype(np.float32)
        b = rng.uniform(-1, 1, o).astype(np.float32)
        g = Graph()
        fast = g.conv2d(t(x), t(wt), t(b), stride=1, pad=pad).data
        slow = conv2d_reference(x, wt, b, stride=1, pad=pad)
        np.testing.assert_allclose(fast, slow, atol=1e-5)


# -- maxpool2 -----------------------------------------------------------------


def test_maxpool2_basic_and_constant():
    g = Graph()
    y = g.maxpool2(t([[[[1, 2], [3, 4]]]]))
    assert y.data.reshape(-1).tolist() == [4.0]
    c = g.maxpool2(t(np.full((1, 2, 6, 6), 3.5)))
    np.testing.assert_array_equal(c.data, np.full((1, 2, 3, 3), 3.5))


def test_maxpool2_halves_96_to_12_over_three_applications():
    g = Graph()
    x = t(np.random.default_rng(2).uniform(-1, 1, (1, 1, 96, 96)))
    for expect in (48, 24, 12):
        x = g.maxpool2(x)
        assert x.shape[2:] == (expect, expect)


def test_maxpool2_odd_extent_rejected():
    g = Graph()
    with pytest.raises(ShapeError):
        g.maxpool2(t(np.zeros((1, 1, 5, 6))))


def test_maxpool2_matches_reference():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (2, 3, 8, 10)).astype(np.float32)
    g = Graph()
    np.testing.assert_allclose(g.maxpool2(t(x)).data, maxpool2_reference(x))


def test_maxpool2_backward_routes_to_argmax_only_and_preserves_mass():
    rng = np.random.default_rng(4)
    x = t(rng.uniform(-1, 1, (2, 3, 6, 6)), requires_grad=True)
    g = Graph()
    y = g.maxpool2(x)
    s = g.sum(y)
    g.backward(s)
    grad = x.grad
    assert grad.sum() == pytest.approx(y.data.size)  # mass preserved
    # gradient lands only on window maxima, one cell per window
    win = grad.reshape(2, 3, 3, 2, 3, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 3, 3, 4)
    assert np.all(win.sum(axis=4) == 1.0)
    vals = x.data.reshape(2, 3, 3, 2, 3, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 3, 3, 4)
    picked = np.take_along_axis(vals, win.argmax(axis=4)[..., None], axis=4)[..., 0]
    np.testing.assert_array_equal(picked, y.data)


# -- relu / linear / dropout ----------------------------------------------------


def test_relu_examples():
    g = Graph()
    y = g.relu(t([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    neg = g.relu(t(-np.ones((3, 4))))
    assert not neg.data.any()


def test_relu_gradient_masks_nonpositive():
    g = Graph()
    x = t([-1.0, 2.0], requires_grad=True)
    g.backward(g.sum(g.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_linear_identity_and_hand_dot():
    g = Graph()
    x = t(np.random.default_rng(5).uniform(-1, 1, (3, 4)))
    y = g.linear(x, t(np.eye(4)), t(np.zeros(4)))
    np.testing.assert_array_equal(y.data, x.data)
    z = g.linear(t([[1.0, 2.0]]), t([[1.0], [1.0]]), t([0.5]))
    assert z.data[0, 0] == pytest.approx(3.5)


def test_linear_region_branch_dimensions():
    g = Graph()
    x = t(np.zeros((1, 2304)))
    w = t(np.zeros((2304, 2048)))
    y = g.linear(x, w, t(np.zeros(2048)))
    assert y.shape == (1, 2048)


def test_linear_shape_error():
    g = Graph()
    with pytest.raises(ShapeError):
        g.linear(t(np.zeros((1, 3))), t(np.zeros((4, 2))), t(np.zeros(2)))


def test_dropout_rate_zero_and_inference_are_identity():
    x = t(np.random.default_rng(6).uniform(-1, 1, (4, 5)))
    train_g = Graph(training=True, rng=np.random.default_rng(0))
    assert train_g.dropout(x, 0.0) is x
    infer_g = Graph(training=False)
    assert infer_g.dropout(x, 0.9) is x  # bitwise identity


def test_dropout_mean_preserved_at_large_scale():
    g = Graph(training=True, rng=np.random.default_rng(7))
    x = t(np.ones(10**6))
    y = g.dropout(x, 0.5)
    assert abs(y.data.mean() - 1.0) < 0.01
    survivors = y.data[y.data != 0]
    np.testing.assert_allclose(survivors, 2.0)


def test_dropout_rate_validation():
    g = Graph(training=True, rng=np.random.default_rng(8))
    x = t(np.ones(4))
    with pytest.raises(ShapeError):
        g.dropout(x, 1.0)
    with pytest.raises(ShapeError):
        g.dropout(x, -0.1)


# -- concat / add / scale -------------------------------------------------------


def test_concat_four_2048_wide_inputs():
    g = Graph()
    xs = [t(np.full((1, 2048), i, np.float32)) for i in range(4)]
    y = g.concat(xs)
    assert y.shape == (1, 8192)
    np.testing.assert_array_equal(y.data[0, :2048], 0.0)
    np.testing.assert_array_equal(y.data[0, -2048:], 3.0)


def test_concat_single_input_identity():
    g = Graph()
    x = t(np.random.default_rng(9).uniform(-1, 1, (2, 5)))
    np.testing.assert_array_equal(g.concat([x]).data, x.data)


def test_concat_gradient_splits_by_offsets():
    rng = np.random.default_rng(10)
    a = t(rng.uniform(-1, 1, (2, 3)), requires_grad=True)
    b = t(rng.uniform(-1, 1, (2, 4)), requires_grad=True)
    g = Graph()
    y = g.concat([a, b])
    target = t(rng.uniform(-1, 1, (2, 7)))
    g.backward(g.mse_loss(y, target))

    # separate graphs over slices must see identical gradients
    a2 = t(a.data, requires_grad=True)
    b2 = t(b.data, requires_grad=True)
    ga, gb = Graph(), Graph()
    diff_a = ga.mse_loss(a2, t(target.data[:, :3]))
    ga.backward(diff_a)
    diff_b = gb.mse_loss(b2, t(target.data[:, 3:]))
    gb.backward(diff_b)
    np.testing.assert_allclose(a.grad, a2.grad * (6 / 14), rtol=1e-6)
    np.testing.assert_allclose(b.grad, b2.grad * (8 / 14), rtol=1e-6)


def test_concat_batch_mismatch():
    g = Graph()
    with pytest.raises(ShapeError):
        g.concat([t(np.zeros((1, 2))), t(np.zeros((2, 2)))])


def test_add_examples_and_gradients():
    g = Graph()
    x = t([1.0, 2.0])
    zero = t([0.0, 0.0])
    np.testing.assert_array_equal(g.add(x, zero).data, x.data)
    np.testing.assert_array_equal(g.add(t([1.0, 2.0]), t([3.0, 4.0])).data, [4.0, 6.0])

    a = t([1.0, 2.0], requires_grad=True)
    b = t([3.0, 4.0], requires_grad=True)
    g2 = Graph()
    g2.backward(g2.sum(g2.add(a, b)))
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])
    np.testing.assert_array_equal(b.grad, [1.0, 1.0])
    with pytest.raises(ShapeError):
        g.add(t([1.0]), t([1.0, 2.0]))


# -- mse ------------------------------------------------------------------------


def test_mse_loss_examples():
    g = Graph()
    x = t([[1.0, 2.0]])
    assert float(g.mse_loss(x, t([[1.0, 2.0]])).data) == 0.0
    loss = g.mse_loss(t([[0.0, 0.0]]), t([[3.0, 4.0]]))
    assert float(loss.data) == pytest.approx(12.5)
    with pytest.raises(ShapeError):
        g.mse_loss(t([[1.0]]), t([[1.0, 2.0]]))


def test_mse_gradient_formula():
    rng = np.random.default_rng(11)
    pred = t(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    target = t(rng.uniform(-1, 1, (3, 4)))
    g = Graph()
    g.backward(g.mse_loss(pred, target))
    np.testing.assert_allclose(pred.grad, 2 * (pred.data - target.data) / 12, rtol=1e-6)


# -- invariants -----------------------------------------------------------------


def test_concat_then_split_is_identity_on_values():
    rng = np.random.default_rng(12)
    parts = [rng.uniform(-1, 1, (3, int(k))).astype(np.float32) for k in rng.integers(1, 6, 4)]
    g = Graph()
    y = g.concat([t(p) for p in parts])
    offs = np.cumsum([0] + [p.shape[1] for p in parts])
    for i, p in enumerate(parts):
        np.testing.assert_array_equal(y.data[:, offs[i] : offs[i + 1]], p)


def test_forward_nan_aborts():
    g = Graph()
    x = t([np.inf, 1.0])
    with pytest.raises(NumericsError):
        g.relu(x)


def test_slice_spatial_and_reshape_roundtrip():
    rng = np.random.default_rng(13)
    x = t(rng.uniform(-1, 1, (2, 3, 4, 4)), requires_grad=True)
    g = Graph()
    tiles = [g.slice_spatial(x, r, r + 2, c, c + 2) for r in (0, 2) for c in (0, 2)]
    reassembled = np.block([[tiles[0].data, tiles[1].data], [tiles[2].data, tiles[3].data]])
    np.testing.assert_array_equal(reassembled, x.data)
    g.backward(g.sum(g.concat([g.flatten(tt) for tt in tiles])))
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_tensor_scalar_guard():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2))).item()
    assert Tensor(np.float32(4.0)).item() == 4.0
