import numpy as np
import pytest
from helpers import central_difference, max_rel_err

from dualmar.errors import ConfigurationError
from dualmar.nn.ops import (conv2d_backward, conv2d_forward, l1_loss_weighted,
                            maxpool2x2_backward, maxpool2x2_forward, partial_conv2d_backward,
                            partial_conv2d_forward, relu_backward, relu_forward,
                            upsample_nearest2x, upsample_nearest2x_backward)

SEEDS = range(20)


# ---------------------------------------------------------------- naive-loop oracles

def conv_oracle(x, w, b, stride=1):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    y = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                yy, xx = i * stride + u - ph, j * stride + v - pw
                                if 0 <= yy < H and 0 <= xx < W:
                                    acc += w[o, c, u, v] * x[n, c, yy, xx]
                    y[n, o, i, j] = acc
    return y


def pconv_oracle(x, m, w, b, stride=1):
    """Per-window loop; mask positions beyond the border count as valid, input as zero."""
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    m = np.broadcast_to(m, x.shape)
    ph, pw = kh // 2, kw // 2
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    y = np.zeros((N, O, Ho, Wo))
    mo = np.zeros((N, 1, Ho, Wo))
    for n in range(N):
        for i in range(Ho):
            for j in range(Wo):
                msum, acc = 0.0, np.zeros(O)
                for c in range(C):
                    for u in range(kh):
                        for v in range(kw):
                            yy, xx = i * stride + u - ph, j * stride + v - pw
                            if 0 <= yy < H and 0 <= xx < W:
                                msum += m[n, c, yy, xx]
                                acc += w[:, c, u, v] * x[n, c, yy, xx] * m[n, c, yy, xx]
                            else:
                                msum += 1.0
                if msum > 0:
                    y[n, :, i, j] = acc * (C * kh * kw / msum) + b
                    mo[n, 0, i, j] = 1.0
    return y, mo


def rand_conv(rng, n=2, c=3, o=4, h=5, w=5, k=3):
    return (rng.standard_normal((n, c, h, w)), rng.standard_normal((o, c, k, k)),
            rng.standard_normal(o))


# ---------------------------------------------------------------- conv forward

def test_identity_1x1_kernel(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(conv2d_forward(x, w, np.zeros(3)), x)


def test_zero_weights_give_bias(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    y = conv2d_forward(x, np.zeros((2, 3, 3, 3)), np.array([1.5, -2.0]))
    assert np.all(y[:, 0] == 1.5) and np.all(y[:, 1] == -2.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop_oracle(seed, stride):
    rng = np.random.default_rng(seed)
    x, w, b = rand_conv(rng, n=1, c=1, o=1) if seed == 0 else rand_conv(rng, h=6, w=7)
    np.testing.assert_allclose(conv2d_forward(x, w, b, stride), conv_oracle(x, w, b, stride),
                               rtol=1e-12, atol=1e-12)


def test_conv_5x5_kernel_against_oracle(rng):
    x, w, b = rand_conv(rng, h=7, w=6, k=5)
    np.testing.assert_allclose(conv2d_forward(x, w, b), conv_oracle(x, w, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("bad", ["channels", "even", "stride", "ndim"])
def test_conv_shape_errors(rng, bad):
    x, w, b = rand_conv(rng)
    if bad == "channels":
        w = w[:, :2]
    elif bad == "even":
        w = np.zeros((4, 3, 2, 2))
    elif bad == "ndim":
        x = x[0]
    with pytest.raises(ConfigurationError):
        conv2d_forward(x, w, b, stride=3 if bad == "stride" else 1)


# ---------------------------------------------------------------- conv backward

def test_conv_zero_upstream_zero_grads(rng):
    x, w, b = rand_conv(rng)
    dx, dw, db = conv2d_backward(x, w, np.zeros((2, 4, 5, 5)))
    assert not dx.any() and not dw.any() and not db.any()


def test_conv_bias_grad_is_channel_sum(rng):
    x, w, b = rand_conv(rng)
    dy = rng.standard_normal((2, 4, 5, 5))
    _, _, db = conv2d_backward(x, w, dy)
    np.testing.assert_allclose(db, dy.sum(axis=(0, 2, 3)))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_finite_differences(seed, stride):
    rng = np.random.default_rng(seed)
    x, w, b = rand_conv(rng, n=1, c=2, o=2)
    dy = rng.standard_normal(conv2d_forward(x, w, b, stride).shape)

    def f():
        return float(np.sum(conv2d_forward(x, w, b, stride) * dy))

    dx, dw, db = conv2d_backward(x, w, dy, stride)
    for analytic, arr in ((dx, x), (dw, w), (db, b)):
        assert max_rel_err(analytic, central_difference(f, arr, 1e-4)) < 1e-4


# ---------------------------------------------------------------- partial conv

def test_all_ones_mask_is_bitwise_conv(rng):
    for stride in (1, 2):
        x, w, b = rand_conv(rng, h=8, w=8)
        ones = np.ones((2, 1, 8, 8))
        y, mo = partial_conv2d_forward(x, ones, w, b, stride)
        np.testing.assert_array_equal(y, conv2d_forward(x, w, b, stride))
        assert mo.all()
        dy = rng.standard_normal(y.shape)
        for g, h in zip(partial_conv2d_backward(x, ones, w, b, dy, stride),
                        conv2d_backward(x, w, dy, stride)):
            np.testing.assert_array_equal(g, h)


def test_all_zero_mask_gives_zero_output(rng):
    x, w, b = rand_conv(rng, h=9, w=9)
    # a 3x3 window always reaches real pixels, so the padding-valid rule never fires
    # for interior windows; use a 1x1 kernel to make every window fully masked
    w1 = rng.standard_normal((4, 3, 1, 1))
    y, mo = partial_conv2d_forward(x, np.zeros((2, 1, 9, 9)), w1, b)
    assert not y.any() and not mo.any()
    y, mo = partial_conv2d_forward(x, np.zeros((2, 1, 9, 9)), w, b)
    assert not y[:, :, 1:-1, 1:-1].any() and not mo[:, :, 1:-1, 1:-1].any()


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("stride", [1, 2])
def test_pconv_matches_loop_oracle(seed, stride):
    rng = np.random.default_rng(seed)
    x, w, b = rand_conv(rng, h=7, w=8)
    per_channel = seed % 2 == 1
    m = (rng.random((2, 3 if per_channel else 1, 7, 8)) < 0.5).astype(float)
    if seed == 2:
        m[:, :, 2:6, 2:7] = 0  # a hole wider than the kernel
    y, mo = partial_conv2d_forward(x, m, w, b, stride)
    ey, emo = pconv_oracle(x, m, w, b, stride)
    np.testing.assert_allclose(y, ey, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(mo, emo)


@pytest.mark.parametrize("seed", range(5))
def test_masked_input_changes_are_invisible(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rand_conv(rng, h=8, w=8)
    m = (rng.random((2, 1, 8, 8)) < 0.6).astype(float)
    y, mo = partial_conv2d_forward(x, m, w, b)
    x2 = np.where(np.broadcast_to(m, x.shape) == 0, rng.standard_normal(x.shape) * 1e3, x)
    y2, mo2 = partial_conv2d_forward(x2, m, w, b)
    np.testing.assert_array_equal(y, y2)
    np.testing.assert_array_equal(mo, mo2)


def test_pconv_masked_positions_get_zero_grad(rng):
    x, w, b = rand_conv(rng, h=8, w=8)
    m = (rng.random((2, 1, 8, 8)) < 0.5).astype(float)
    dy = rng.standard_normal((2, 4, 8, 8))
    dx, _, _ = partial_conv2d_backward(x, m, w, b, dy)
    assert np.all(dx[np.broadcast_to(m, x.shape) == 0] == 0.0)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride", [1, 2])
def test_pconv_finite_differences(seed, stride):
    rng = np.random.default_rng(seed)
    x, w, b = rand_conv(rng, n=1, c=2, o=2)
    m = (rng.random((1, 1, 5, 5)) < 0.6).astype(float)
    dy = rng.standard_normal(partial_conv2d_forward(x, m, w, b, stride)[0].shape)

    def f():
        return float(np.sum(partial_conv2d_forward(x, m, w, b, stride)[0] * dy))

    dx, dw, db = partial_conv2d_backward(x, m, w, b, dy, stride)
    num_dx = central_difference(f, x, 1e-4)
    valid = np.broadcast_to(m, x.shape) == 1
    assert max_rel_err(dx[valid], num_dx[valid]) < 1e-4
    assert max_rel_err(dw, central_difference(f, w, 1e-4)) < 1e-4
    assert max_rel_err(db, central_difference(f, b, 1e-4)) < 1e-4


def test_non_binary_mask_rejected(rng):
    x, w, b = rand_conv(rng)
    with pytest.raises(ConfigurationError):
        partial_conv2d_forward(x, np.full((2, 1, 5, 5), 0.5), w, b)
    with pytest.raises(ConfigurationError):
        partial_conv2d_backward(x, np.full((2, 1, 5, 5), 0.5), w, b, np.zeros((2, 4, 5, 5)))


def test_pconv_mask_shape_rejected(rng):
    x, w, b = rand_conv(rng)
    with pytest.raises(ConfigurationError):
        partial_conv2d_forward(x, np.ones((2, 2, 5, 5)), w, b)


# ---------------------------------------------------------------- pointwise and resampling

def test_relu_values_and_grad():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_forward(x), [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(x, np.ones(3)), [0, 0, 1])


def test_maxpool_constant_routes_to_first_element():
    x = np.full((1, 1, 4, 4), 3.0)
    y, idx = maxpool2x2_forward(x)
    assert np.all(y == 3.0)
    dx = maxpool2x2_backward(idx, np.ones_like(y))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(dx[0, 0], expected)


def test_maxpool_matches_loop(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    y, _ = maxpool2x2_forward(x)
    for i in range(3):
        for j in range(4):
            np.testing.assert_array_equal(y[..., i, j], x[..., 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(-2, -1)))


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ConfigurationError):
        maxpool2x2_forward(np.zeros((1, 1, 5, 4)))


def test_upsample_replicates_and_backward_sums(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    y = upsample_nearest2x(x)
    assert y.shape == (1, 2, 6, 8)
    for i in range(6):
        for j in range(8):
            np.testing.assert_array_equal(y[..., i, j], x[..., i // 2, j // 2])
    dy = rng.standard_normal(y.shape)
    # adjointness: <up(x), dy> == <x, up^T(dy)>
    assert np.sum(y * dy) == pytest.approx(np.sum(x * upsample_nearest2x_backward(dy)))


@pytest.mark.parametrize("seed", SEEDS)
def test_composite_conv_relu_pool_up_stack(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    target = rng.standard_normal((1, 3, 4, 4))

    def forward():
        h = conv2d_forward(x, w, b)
        r = relu_forward(h)
        p, idx = maxpool2x2_forward(r)
        u = upsample_nearest2x(p)
        return h, idx, u

    def f():
        return float(np.sum((forward()[2] - target) ** 2))

    h, idx, u = forward()
    du = 2 * (u - target)
    dp = upsample_nearest2x_backward(du)
    dr = maxpool2x2_backward(idx, dp)
    dh = relu_backward(h, dr)
    dx, dw, db = conv2d_backward(x, w, dh)
    for analytic, arr in ((dx, x), (dw, w), (db, b)):
        assert max_rel_err(analytic, central_difference(f, arr, 1e-6)) < 1e-4


# ---------------------------------------------------------------- loss

def test_l1_zero_at_target_and_plain_mae(rng):
    p = rng.standard_normal((2, 1, 4, 4))
    t = rng.standard_normal(p.shape)
    hole = rng.random(p.shape) < 0.3
    assert l1_loss_weighted(p, p, hole, 6.0)[0] == 0.0
    assert l1_loss_weighted(p, t, hole, 1.0)[0] == pytest.approx(np.mean(np.abs(p - t)))
    w = np.where(hole, 6.0, 1.0)
    assert l1_loss_weighted(p, t, hole, 6.0)[0] == pytest.approx(np.mean(w * np.abs(p - t)))


def test_l1_tie_subgradient_is_zero():
    _, g = l1_loss_weighted(np.ones(4), np.ones(4))
    assert not g.any()


@pytest.mark.parametrize("seed", SEEDS)
def test_l1_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((1, 1, 4, 5))
    t = p + np.where(rng.random(p.shape) < 0.5, 1, -1) * rng.uniform(0.01, 1, p.shape)
    hole = rng.random(p.shape) < 0.4
    _, g = l1_loss_weighted(p, t, hole, 6.0)
    num = central_difference(lambda: l1_loss_weighted(p, t, hole, 6.0)[0], p, 1e-6)
    assert max_rel_err(g, num) < 1e-4
