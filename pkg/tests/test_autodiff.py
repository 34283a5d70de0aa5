"""Per-operation gradient checks for the reverse-mode tape."""

import numpy as np
import pytest

from diffnas import autodiff as ad


def _num_grad(fn, arrays, idx, h=1e-6):
    """Central finite difference of scalar fn w.r.t. arrays[idx], elementwise."""
    a = arrays[idx]
    g = np.zeros_like(a)
    it = np.nditer(a, flags=["multi_index"])
    for _ in it:
        m = it.multi_index
        orig = a[m]
        a[m] = orig + h
        fp = fn(*arrays)
        a[m] = orig - h
        fm = fn(*arrays)
        a[m] = orig
        g[m] = (fp - fm) / (2 * h)
    return g


def _check_op(op, shapes, seed=0, **kwargs):
    """Compare tape gradients of sum(op(...)) to finite differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]

    def scalar(*arrs):
        out = op(*[ad.Tensor(a) for a in arrs], **kwargs)
        return float(np.sum(out.data))

    tensors = [ad.Tensor(a) for a in arrays]
    out = op(*tensors, **kwargs)
    out.backward(np.ones_like(out.data))
    for i, t in enumerate(tensors):
        expected = _num_grad(scalar, arrays, i)
        np.testing.assert_allclose(t.grad, expected, rtol=1e-6, atol=1e-8)


def test_add_grad():
    _check_op(ad.add, [(3, 4), (3, 4)])


def test_add_broadcast_grad():
    _check_op(ad.add, [(2, 3, 4), (3, 1)])


def test_silu_grad():
    _check_op(ad.silu, [(5, 7)])


def test_linear_grad():
    _check_op(ad.linear, [(4, 6), (3, 6), (3,)])


def test_conv1d_grad():
    _check_op(ad.conv1d, [(2, 3, 8), (4, 3, 3), (4,)])


def test_bmatmul_grad():
    _check_op(ad.bmatmul, [(2, 4, 5), (2, 5, 3)])


def test_transpose_grad():
    _check_op(ad.transpose_last2, [(2, 3, 5)])


def test_softmax_grad():
    _check_op(ad.softmax_last, [(2, 4, 4)])


def test_softmax_rows_sum_to_one():
    x = ad.Tensor(np.random.default_rng(1).normal(size=(3, 5, 5)))
    out = ad.softmax_last(x)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_avgpool_grad():
    _check_op(ad.avgpool1d, [(2, 3, 8)])


def test_upsample_grad():
    _check_op(ad.upsample_nearest, [(2, 3, 4)])


def test_expand_last_grad():
    _check_op(ad.expand_last, [(3, 4)])


def test_concat_grad():
    _check_op(ad.concat_channels, [(2, 3, 8), (2, 5, 8)])


def test_mul_const_grad():
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.normal(size=(3, 4)))
    out = ad.mul_const(x, 2.5)
    out.backward(np.ones((3, 4)))
    np.testing.assert_allclose(x.grad, 2.5 * np.ones((3, 4)), atol=0)


def test_conv1d_same_padding_shape():
    x = ad.Tensor(np.zeros((2, 3, 16)))
    w = ad.Tensor(np.zeros((5, 3, 3)))
    b = ad.Tensor(np.zeros(5))
    assert ad.conv1d(x, w, b).data.shape == (2, 5, 16)


def test_diamond_graph_accumulates_grads():
    # y = x + x must give dy/dx = 2, exercising multi-parent accumulation.
    x = ad.Tensor(np.ones((2, 2)))
    y = ad.add(x, x)
    y.backward(np.ones((2, 2)))
    np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))


def test_mac_counter_counts_conv():
    ad.mac_counter.reset()
    ad.mac_counter.enabled = True
    try:
        x = ad.Tensor(np.zeros((2, 3, 16)))
        w = ad.Tensor(np.zeros((5, 3, 3)))
        ad.conv1d(x, w, ad.Tensor(np.zeros(5)))
        assert ad.mac_counter.total == 2 * 5 * 3 * 3 * 16
    finally:
        ad.mac_counter.enabled = False


def test_mac_counter_disabled_by_default():
    ad.mac_counter.reset()
    x = ad.Tensor(np.zeros((1, 2, 8)))
    w = ad.Tensor(np.zeros((2, 2, 3)))
    ad.conv1d(x, w, ad.Tensor(np.zeros(2)))
    assert ad.mac_counter.total == 0
