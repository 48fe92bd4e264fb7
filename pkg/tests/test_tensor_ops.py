import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmnet import ops
from dmnet.tensor import Tape, Tensor, backward

from conftest import numeric_grad, rel_err


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def grad_of(build, *leaves):
    with Tape() as tape:
        out = build(*leaves)
    backward(tape, out)
    return [t.grad for t in leaves]


def check(build, *arrays, tol=1e-6):
    leaves = [leaf(a) for a in arrays]
    analytic = grad_of(build, *leaves)
    for t, ga in zip(leaves, analytic):
        gn = numeric_grad(lambda: build(*leaves).item(), t.data)
        assert rel_err(ga, gn) < tol


def proj(shape, seed=99):
    r = Tensor(np.random.default_rng(seed).standard_normal(shape))
    return lambda y: ops.sum(ops.mul(y, r))


def conv_reference(x, w, b, stride, pad, groups):
    n, ci, h, wd = x.shape
    co, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    per = co // groups
    for o in range(co):
        g = o // per
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, g * cig:(g + 1) * cig, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[:, o, i, j] = np.sum(patch * w[o], axis=(1, 2, 3))
        if b is not None:
            out[:, o] += b[o]
    return out


# ----------------------------------------------------------------------------
# elementwise and reductions


def test_broadcast_add_mul_gradients(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 1))
    check(lambda x, y: ops.sum(ops.mul(ops.add(x, y), ops.sub(x, y))), a, b)


def test_gelu_matches_erf_definition(rng):
    x = rng.standard_normal(50) * 3
    ref = np.array([0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x])
    np.testing.assert_allclose(ops.gelu(Tensor(x)).data, ref, rtol=1e-12, atol=1e-14)
    check(lambda t: ops.sum(ops.gelu(t)), x)


@pytest.mark.parametrize("name", ["exp", "abs", "neg"])
def test_unary_gradients(rng, name):
    x = rng.standard_normal((3, 5)) + 0.1
    check(lambda t: proj((3, 5))(getattr(ops, name)(t)), x)


def test_mean_scale_reshape_permute(rng):
    x = rng.standard_normal((2, 3, 4))
    check(lambda t: ops.mean(ops.scale(ops.permute(ops.reshape(t, (6, 4)), (1, 0)), 2.5)), x)


def test_concat_split_take_gradients(rng):
    a, b = rng.standard_normal((1, 2, 3)), rng.standard_normal((1, 3, 3))

    def f(x, y):
        z = ops.concat([x, y], axis=1)
        p, q = ops.split(z, [1, 4], axis=1)
        return ops.add(ops.sum(ops.mul(p, p)), proj((1, 2, 3))(ops.take(q, 1, 1, 3)))
    check(f, a, b)


def test_matmul_softmax_l2norm_gradients(rng):
    a, b = rng.standard_normal((2, 3, 5)), rng.standard_normal((2, 5, 3))

    def f(x, y):
        s = ops.softmax(ops.matmul(ops.l2_normalize(x, -1), y), axis=-1)
        return proj((2, 3, 3))(s)
    check(f, a, b)


def test_softmax_rows_sum_to_one(rng):
    s = ops.softmax(Tensor(rng.standard_normal((4, 7)) * 50), axis=-1).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


def test_layer_norm_statistics_and_gradients(rng):
    x = rng.standard_normal((2, 6, 3, 3)) * 4 + 1
    y = ops.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-5)
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    check(lambda t, gg, bb: proj(x.shape)(ops.layer_norm(t, gg, bb)), x, g, b)


# ----------------------------------------------------------------------------
# convolution


@pytest.mark.parametrize("k,stride,pad,groups,ci,co", [
    (1, 1, 0, 1, 4, 6),   # 1x1 path
    (3, 1, 1, 4, 4, 4),   # depthwise path
    (3, 1, 1, 1, 3, 5),   # dense im2col
    (3, 2, 1, 2, 4, 6),   # grouped + strided
    (7, 1, 3, 2, 4, 4),   # large grouped kernel
])
def test_conv2d_matches_direct_loops(rng, k, stride, pad, groups, ci, co):
    x = rng.standard_normal((2, ci, 9, 8))
    w = rng.standard_normal((co, ci // groups, k, k))
    b = rng.standard_normal(co)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, groups).data
    np.testing.assert_allclose(got, conv_reference(x, w, b, stride, pad, groups), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("k,stride,pad,groups", [(1, 1, 0, 1), (3, 1, 1, 4), (3, 2, 1, 2), (3, 1, 1, 1)])
def test_conv2d_gradients(rng, k, stride, pad, groups):
    x = rng.standard_normal((1, 4, 5, 5))
    w = rng.standard_normal((4, 4 // groups, k, k))
    b = rng.standard_normal(4)
    out_shape = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, groups).shape
    r = proj(out_shape)
    check(lambda a, ww, bb: r(ops.conv2d(a, ww, bb, stride, pad, groups)), x, w, b)


def test_grouped_conv_equals_per_group_convs(rng):
    x = rng.standard_normal((1, 6, 5, 5))
    w = rng.standard_normal((9, 2, 3, 3))
    full = ops.conv2d(Tensor(x), Tensor(w), None, 1, 1, 3).data
    parts = [ops.conv2d(Tensor(x[:, 2 * g:2 * g + 2]), Tensor(w[3 * g:3 * g + 3]), None, 1, 1).data
             for g in range(3)]
    np.testing.assert_allclose(full, np.concatenate(parts, axis=1), atol=1e-12)


def test_conv2d_rejects_bad_shapes():
    x = Tensor(np.zeros((1, 4, 5, 5)))
    with pytest.raises(ValueError, match="divisible by groups"):
        ops.conv2d(x, Tensor(np.zeros((4, 1, 3, 3))), groups=3)
    with pytest.raises(ValueError, match="in_channels/group"):
        ops.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))))
    with pytest.raises(ValueError, match="larger than padded input"):
        ops.conv2d(x, Tensor(np.zeros((4, 4, 7, 7))))


# ----------------------------------------------------------------------------
# pixel shuffle


def test_pixel_shuffle_layout():
    s = 2
    x = np.arange(1 * 3 * s * s * 2 * 2, dtype=np.float64).reshape(1, 3 * s * s, 2, 2)
    y = ops.pixel_shuffle(Tensor(x), s).data
    for c in range(3):
        for i in range(s):
            for j in range(s):
                np.testing.assert_array_equal(y[0, c, i::s, j::s], x[0, c * s * s + i * s + j])


@settings(max_examples=30, deadline=None)
@given(s=st.sampled_from([2, 3, 4]), c=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4),
       seed=st.integers(0, 2 ** 16))
def test_pixel_unshuffle_inverts_shuffle(s, c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, c * s * s, h, w))
    back = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), s), s).data
    np.testing.assert_array_equal(back, x)


def test_pixel_shuffle_gradient(rng):
    x = rng.standard_normal((1, 8, 2, 3))
    check(lambda t: proj((1, 2, 4, 6))(ops.pixel_shuffle(t, 2)), x)


# ----------------------------------------------------------------------------
# tape semantics


def test_backward_requires_scalar():
    x = leaf(np.ones(3))
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)


def test_backward_overwrites_grad_and_accumulates_fanout():
    x = leaf(np.array([2.0]))
    x.grad = np.array([100.0])
    with Tape() as tape:
        y = ops.sum(ops.add(ops.mul(x, x), x))
    backward(tape, y)
    np.testing.assert_allclose(x.grad, [5.0])


def test_detached_loss_warns_and_zeroes():
    x = leaf(np.ones(2))
    with Tape() as tape:
        ops.sum(x)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        backward(tape, Tensor(np.array(1.0)))
    assert any("detached" in str(w.message) for w in caught)
    np.testing.assert_array_equal(x.grad, 0)


def test_no_recording_without_tape():
    x = leaf(np.ones(2))
    with Tape() as tape:
        pass
    ops.sum(x)
    assert len(tape) == 0


def test_float32_preserved(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    w = Tensor(rng.standard_normal((2, 2, 3, 3)).astype(np.float32))
    assert ops.conv2d(x, w, None, 1, 1).dtype == np.float32
    assert ops.gelu(x).dtype == np.float32


def test_identity_1x1_conv(rng):
    x = rng.standard_normal((2, 5, 3, 4))
    eye = np.eye(5).reshape(5, 5, 1, 1)
    np.testing.assert_array_equal(ops.conv2d(Tensor(x), Tensor(eye), Tensor(np.zeros(5))).data, x)
