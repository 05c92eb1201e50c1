"""Tape, primitive ops, and gradient checks against central differences.

Every differentiable primitive gets a finite-difference oracle; structural
rules (broadcasting, tape ownership, finiteness) get direct assertions.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchmesh import autodiff as ad
from sketchmesh.autodiff import (NonFiniteError, ShapeError, Tape, Tensor,
                                 UnknownOpError, backward, forward_primitive,
                                 grad_check)


def rand(shape, seed, scale=1.0, offset=0.0):
    rng = np.random.default_rng(seed)
    return Tensor(offset + scale * rng.standard_normal(shape).astype(np.float32))


# ------------------------------------------------------------------- tensors

def test_tensor_coerces_to_float32_contiguous():
    t = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3)[:, ::-1])
    assert t.data.dtype == np.float32
    assert t.data.flags["C_CONTIGUOUS"]


def test_detach_drops_grad_flag():
    t = Tensor(np.ones(3), requires_grad=True)
    assert t.requires_grad and not t.detach().requires_grad


def test_operator_sugar_matches_numpy():
    a = rand((2, 3), 0)
    b = rand((2, 3), 1)
    np.testing.assert_allclose((a + b).data, a.data + b.data, rtol=1e-6)
    np.testing.assert_allclose((a - b).data, a.data - b.data, rtol=1e-6)
    np.testing.assert_allclose((a * b).data, a.data * b.data, rtol=1e-6)
    np.testing.assert_allclose((-a).data, -a.data, rtol=1e-6)
    np.testing.assert_allclose(a[0, 1:].data, a.data[0, 1:], rtol=0)


# ----------------------------------------------------------------- tape rules

def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_tape_reusable_after_exit():
    x = Tensor([1.0, 2.0], requires_grad=True)
    tape = Tape()
    with tape:
        y = ad.tsum(x * x)
    with tape:
        z = ad.tsum(y * 3.0)
    g = backward(tape, z).get(x)
    np.testing.assert_allclose(g.data, 6.0 * x.data, rtol=1e-6)


def test_backward_rejects_offtape_and_nonscalar_roots():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as t:
        y = x * x
    with pytest.raises(ValueError):
        backward(t, y)  # not scalar
    loose = Tensor(3.0)
    with pytest.raises(ValueError):
        backward(t, loose)  # never touched the tape
    with Tape() as t2:
        _ = ad.tsum(x)
    leaf_scalar = Tensor(1.0, requires_grad=True)
    with pytest.raises(ValueError):
        backward(t2, leaf_scalar)  # on no tape, produced by nothing


def test_ops_off_tape_do_not_require_grad():
    x = Tensor([1.0], requires_grad=True)
    y = x * x
    assert not y.requires_grad


def test_backward_bit_identical_across_runs():
    """Fixed accumulation order: identical graphs give identical bits."""
    def run():
        x = Tensor(np.linspace(-1, 1, 12, dtype=np.float32).reshape(3, 4),
                   requires_grad=True)
        w = Tensor(np.linspace(0.1, 0.9, 8, dtype=np.float32).reshape(4, 2),
                   requires_grad=True)
        with Tape() as t:
            h = ad.relu(ad.matmul(x, w))
            y = ad.tmean(ad.mul(h, ad.sigmoid(h)))
            g = backward(t, y)
        return g.get(x).data.copy(), g.get(w).data.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_gradient_map_returns_none_for_unused_inputs():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([5.0], requires_grad=True)
    with Tape() as t:
        y = ad.tsum(x)
    g = backward(t, y)
    assert g.get(unused) is None
    assert unused not in g


# ------------------------------------------------------------ shape contracts

def test_broadcast_trailing_axes():
    a = rand((2, 3), 2)
    b = rand((3,), 3)
    out = ad.add(a, b)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out.data, a.data + b.data, rtol=1e-6)


def test_broadcast_rejects_two_sided_expansion():
    a = Tensor(np.ones((3, 1)))
    b = Tensor(np.ones((1, 3)))
    with pytest.raises(ShapeError):
        ad.add(a, b)


def test_broadcast_rejects_mismatched():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


@given(st.integers(1, 4), st.integers(1, 4))
def test_scalar_broadcasts_against_anything(r, c):
    a = Tensor(np.ones((r, c)))
    out = ad.add(a, Tensor(2.0))
    assert out.shape == (r, c)
    assert np.all(out.data == 3.0)


def test_broadcast_gradient_sums_over_stretched_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    with Tape() as t:
        y = ad.tsum(ad.mul(a, b))
    g = backward(t, y)
    assert g.get(b).shape == (1, 3)
    np.testing.assert_allclose(g.get(b).data, np.full((1, 3), 2.0), rtol=1e-6)


# --------------------------------------------------------------- finiteness

def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError):
        ad.exp(Tensor([100.0]))  # overflows float32


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        ad.log(Tensor([1.0, 0.0]))


def test_power_rejects_fractional_of_negative():
    with pytest.raises(ValueError):
        ad.power(Tensor([-1.0]), 0.5)


# ------------------------------------------------- finite-difference oracles

def test_grad_add_sub_mul():
    a = rand((3, 4), 10)
    for f in (lambda x: ad.tsum(ad.add(x, rand((3, 4), 11))),
              lambda x: ad.tsum(ad.sub(rand((3, 4), 12), x)),
              lambda x: ad.tsum(ad.mul(x, rand((3, 4), 13)))):
        assert grad_check(f, a).passed


def test_grad_broadcast_paths():
    b = rand((4,), 14)
    f = lambda x: ad.tsum(ad.mul(ad.add(rand((3, 4), 15), x), b))
    assert grad_check(f, rand((1, 4), 16)).passed


def test_grad_relu_off_kink():
    x = Tensor(np.array([-0.8, -0.3, 0.4, 1.2], dtype=np.float32))
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.relu(t), t)), x).passed


def test_grad_sigmoid_tanh_moderate():
    x = rand((2, 5), 17, scale=0.8)
    assert grad_check(lambda t: ad.tsum(ad.sigmoid(t)), x).passed
    assert grad_check(lambda t: ad.tsum(ad.tanh(t)), x).passed


def test_grad_sigmoid_saturated():
    """Flat tails: float32 FD noise dominates, so the tolerance is looser."""
    x = Tensor(np.array([-4.0, -3.5, 3.5, 4.0], dtype=np.float32))
    rep = grad_check(lambda t: ad.tsum(ad.sigmoid(t)), x, tol=5e-3)
    assert rep.passed, rep


def test_grad_exp_log_power():
    x = rand((6,), 18, scale=0.3)
    assert grad_check(lambda t: ad.tsum(ad.exp(t)), x).passed
    pos = rand((6,), 19, scale=0.2, offset=1.0)
    assert grad_check(lambda t: ad.tsum(ad.log(t)), pos).passed
    assert grad_check(lambda t: ad.tsum(ad.power(t, 0.5)), pos).passed
    assert grad_check(lambda t: ad.tsum(ad.power(t, 3.0)), x).passed


def test_grad_clamp_min_away_from_threshold():
    x = Tensor(np.array([-1.0, -0.4, 0.3, 0.9], dtype=np.float32))
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.clamp_min(t, 0.0), t)), x).passed


def test_softplus_matches_log1p_exp():
    x = np.linspace(-20, 20, 41, dtype=np.float32)
    y = ad.softplus(Tensor(x)).data
    expected = np.log1p(np.exp(x.astype(np.float64)))
    np.testing.assert_allclose(y, expected, rtol=2e-5, atol=2e-6)


def test_softplus_value_at_zero_is_log_two():
    assert abs(ad.softplus(Tensor(0.0)).item() - np.log(2.0)) < 1e-6


def test_grad_softplus_matches_sigmoid():
    x = Tensor(np.array([-3.0, -1.0, 0.5, 2.0], dtype=np.float32))
    rep = grad_check(lambda t: ad.tsum(ad.softplus(t)), x)
    assert rep.passed
    np.testing.assert_allclose(rep.ad, 1.0 / (1.0 + np.exp(-x.data)), atol=2e-6)


def test_grad_reshape_transpose_slice_concat():
    x = rand((2, 6), 20)
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.reshape(t, (3, 4)),
                                               rand((3, 4), 21))), x).passed
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.transpose(t, (1, 0)),
                                               rand((6, 2), 22))), x).passed
    assert grad_check(lambda t: ad.tsum(ad.mul(t[:, 1:4], rand((2, 3), 23))),
                      x).passed
    other = rand((1, 6), 24)
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.concat([t, other], axis=0),
                                               rand((3, 6), 25))), x).passed


def test_grad_broadcast_to():
    x = rand((1, 4), 26)
    f = lambda t: ad.tsum(ad.mul(ad.broadcast_to(t, (3, 4)), rand((3, 4), 27)))
    assert grad_check(f, x).passed


def test_grad_sum_mean_axes():
    x = rand((3, 4, 2), 28)
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.tsum(t, axis=1),
                                               rand((3, 2), 29))), x).passed
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.tmean(t, axis=(0, 2)),
                                               rand((4,), 30))), x).passed
    assert grad_check(
        lambda t: ad.tsum(ad.mul(ad.tmean(t, axis=1, keepdims=True),
                                 rand((3, 1, 2), 31))), x).passed


def test_softmax_rows_sum_to_one():
    x = rand((4, 7), 32)
    s = ad.softmax(x, axis=1).data
    np.testing.assert_allclose(s.sum(axis=1), np.ones(4), atol=1e-6)
    assert np.all(s > 0)


def test_grad_softmax():
    x = rand((3, 5), 33)
    f = lambda t: ad.tsum(ad.mul(ad.softmax(t, axis=1), rand((3, 5), 34)))
    assert grad_check(f, x).passed


def test_grad_matmul_2d_and_batched():
    a = rand((3, 4), 35, scale=0.5)
    b = rand((4, 2), 36, scale=0.5)
    assert grad_check(lambda t: ad.tsum(ad.matmul(t, b)), a).passed
    assert grad_check(lambda t: ad.tsum(ad.matmul(a, t)), b).passed
    ab = rand((2, 3, 4), 37, scale=0.5)
    bb = rand((2, 4, 2), 38, scale=0.5)
    assert grad_check(lambda t: ad.tsum(ad.matmul(t, bb)), ab).passed
    assert grad_check(lambda t: ad.tsum(ad.matmul(ab, t)), bb).passed


def test_matmul_rejects_vector_operands():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_conv2d_matches_direct_convolution():
    """Oracle: dense loop over output positions in float64."""
    rng = np.random.default_rng(40)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    out = ad.conv2d(Tensor(x), Tensor(w), stride=1, pad=1).data

    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 3, 5, 5))
    for co in range(3):
        for i in range(5):
            for j in range(5):
                patch = xp[0, :, i:i + 3, j:j + 3]
                expected[0, co, i, j] = np.sum(patch * w[co].astype(np.float64))
    np.testing.assert_allclose(out, expected, rtol=1e-4, atol=1e-5)


def test_grad_conv2d():
    # conv is linear in each argument, so central differences are exact for
    # any step; the large h only suppresses float32 rounding noise
    x = rand((1, 2, 6, 6), 41, scale=0.5)
    w = rand((3, 2, 3, 3), 42, scale=0.5)
    assert grad_check(lambda t: ad.tsum(ad.conv2d(t, w, stride=2, pad=1)),
                      x, h=3e-2).passed
    assert grad_check(lambda t: ad.tsum(ad.conv2d(x, t, stride=2, pad=1)),
                      w, h=3e-2).passed


def test_max_pool_routes_gradient_to_argmax():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32),
               requires_grad=True)
    with Tape() as t:
        y = ad.tsum(ad.max_pool2d(x, kernel=2))
    g = backward(t, y).get(x).data
    np.testing.assert_array_equal(g[0, 0], [[0.0, 0.0], [0.0, 1.0]])


def test_grad_max_pool_distinct_entries():
    # entries are 0.1 apart, so h=0.02 never flips an argmax and the
    # piecewise-linear FD quotient is exact up to rounding
    rng = np.random.default_rng(43)
    vals = rng.permutation(32).astype(np.float32).reshape(1, 2, 4, 4) * 0.1
    f = lambda t: ad.tsum(ad.mul(ad.max_pool2d(t, kernel=2),
                                 rand((1, 2, 2, 2), 44)))
    assert grad_check(f, Tensor(vals), h=2e-2).passed


def test_avg_pool_matches_block_means():
    rng = np.random.default_rng(45)
    img = rng.standard_normal((8, 8)).astype(np.float32)
    pooled = ad.avg_pool2d(Tensor(img), kernel=4).data
    expected = img.reshape(2, 4, 2, 4).mean(axis=(1, 3))
    np.testing.assert_allclose(pooled, expected, rtol=1e-5, atol=1e-6)
    assert grad_check(lambda t: ad.tsum(ad.mul(ad.avg_pool2d(t, 4),
                                               rand((2, 2), 46))),
                      Tensor(img)).passed


def test_grad_gather_rows_accumulates_duplicates():
    x = Tensor(np.arange(6, dtype=np.float32).reshape(3, 2),
               requires_grad=True)
    with Tape() as t:
        y = ad.tsum(ad.gather_rows(x, np.array([0, 0, 2])))
    g = backward(t, y).get(x).data
    np.testing.assert_array_equal(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_grad_five_op_composite():
    """Random graph mixing matmul, relu, sigmoid, mul, and mean."""
    w = rand((4, 3), 47, scale=0.6)

    def f(t):
        h = ad.relu(ad.matmul(t, w))
        return ad.tmean(ad.mul(h, ad.sigmoid(ad.sub(h, 0.5))))

    x = rand((5, 4), 48, scale=0.7)
    rep = grad_check(f, x)
    assert rep.passed, rep


# --------------------------------------------------------------- dispatcher

def test_forward_primitive_dispatch():
    out = forward_primitive("add", Tensor([1.0]), Tensor([2.0]))
    assert out.item() == 3.0
    out = forward_primitive("sum", Tensor(np.ones((2, 2))), axis=0)
    np.testing.assert_array_equal(out.data, [2.0, 2.0])


def test_forward_primitive_unknown_kind():
    with pytest.raises(UnknownOpError):
        forward_primitive("convolve3d", Tensor([1.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_grad_check_api_is_deterministic(seed):
    x = rand((3,), seed, scale=0.5)
    r1 = grad_check(lambda t: ad.tsum(ad.tanh(t)), x)
    r2 = grad_check(lambda t: ad.tsum(ad.tanh(t)), x)
    assert np.array_equal(r1.ad, r2.ad) and np.array_equal(r1.fd, r2.fd)
