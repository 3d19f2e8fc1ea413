"""Gradient correctness of every primitive op against central finite
differences, plus the tape-level contracts (scalar seed, accumulation,
exact-zero masked gradients)."""

import numpy as np
import pytest

from nestgen import autodiff as ad
from nestgen.autodiff import MASK_FILL, Tape, Tensor

from conftest import check_op_gradients, fd_gradient


def t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def test_identity_gradient_is_one():
    p = Tensor(3.0)
    with Tape() as tape:
        out = ad.scale(p, 1.0)
    tape.backward(out)
    assert p.grad == 1.0


def test_backward_requires_scalar(rng):
    x = t(rng, 3)
    with Tape() as tape:
        y = ad.neg(x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_ops_outside_tape_do_not_record(rng):
    x = t(rng, 4)
    y = ad.neg(x)  # no active tape
    with Tape() as tape:
        z = ad.sum_all(ad.scale(x, 2.0))
    tape.backward(z)
    assert y.grad is None
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_gradient_accumulates_across_reuse(rng):
    x = t(rng, 3)
    with Tape() as tape:
        loss = ad.sum_all(ad.add(x, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_add_neg_scale_grads(rng):
    a, b = t(rng, 2, 3), t(rng, 2, 3)
    check_op_gradients(lambda: ad.add(a, b), [a, b], rng)
    check_op_gradients(lambda: ad.neg(a), [a], rng)
    check_op_gradients(lambda: ad.scale(a, -1.7), [a], rng)


def test_add_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        ad.add(t(rng, 2, 3), t(rng, 3, 2))


def test_mul_and_mul_const(rng):
    a, b = t(rng, 3, 4), t(rng, 3, 4)
    check_op_gradients(lambda: ad.mul(a, b), [a, b], rng)
    c = rng.standard_normal((3, 1))  # broadcasting constant
    check_op_gradients(lambda: ad.mul_const(a, c), [a], rng)
    m = rng.random((3, 4)) < 0.5
    check_op_gradients(lambda: ad.mul_const(a, m.astype(float)), [a], rng)


def test_matmul_matches_numpy(rng):
    a, b = t(rng, 4, 3), t(rng, 3, 5)
    np.testing.assert_allclose(ad.matmul(a, b).data, a.data @ b.data)
    check_op_gradients(lambda: ad.matmul(a, b), [a, b], rng)


def test_matmul_batched_and_shared_rhs(rng):
    # (B, L, k) @ (k, n): the 2-D right operand is shared across the batch
    a, w = t(rng, 2, 3, 4), t(rng, 4, 5)
    out = ad.matmul(a, w)
    np.testing.assert_allclose(out.data, a.data @ w.data)
    check_op_gradients(lambda: ad.matmul(a, w), [a, w], rng)
    # (B, L, k) @ (B, k, n): fully batched
    u, v = t(rng, 2, 3, 4), t(rng, 2, 4, 3)
    check_op_gradients(lambda: ad.matmul(u, v), [u, v], rng)


def test_transpose_reshape_concat_narrow(rng):
    a = t(rng, 2, 3, 4)
    check_op_gradients(lambda: ad.transpose(a, (1, 2, 0)), [a], rng)
    check_op_gradients(lambda: ad.reshape(a, (6, 4)), [a], rng)
    b = t(rng, 2, 2, 4)
    check_op_gradients(lambda: ad.concat([a, b], axis=1), [a, b], rng)
    check_op_gradients(lambda: ad.narrow(a, 1, 1, 2), [a], rng)


def test_softmax_rows_sum_to_one(rng):
    z = t(rng, 5, 7)
    s = ad.softmax(z)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(5), rtol=0, atol=1e-15)


def test_softmax_sum_gradient_is_zero(rng):
    z = t(rng, 4, 6)
    with Tape() as tape:
        loss = ad.sum_all(ad.softmax(z))
    tape.backward(loss)
    np.testing.assert_allclose(z.grad, np.zeros_like(z.data), atol=1e-12)


def test_softmax_log_softmax_grads(rng):
    z = t(rng, 3, 5)
    check_op_gradients(lambda: ad.softmax(z), [z], rng)
    check_op_gradients(lambda: ad.log_softmax(z), [z], rng)
    # 3-D variants as used inside attention
    y = t(rng, 2, 3, 4)
    check_op_gradients(lambda: ad.softmax(y), [y], rng)


def test_gather_rows_with_repeats(rng):
    w = t(rng, 6, 3)
    idx = np.array([0, 2, 2, 5, 0])
    out = ad.gather_rows(w, idx)
    np.testing.assert_array_equal(out.data, w.data[idx])
    check_op_gradients(lambda: ad.gather_rows(w, idx), [w], rng)


def test_take_rows_and_gather_positions(rng):
    a = t(rng, 5, 3)
    idx = np.array([4, 0, 0, 2])
    check_op_gradients(lambda: ad.take_rows(a, idx), [a], rng)
    b = t(rng, 3, 4, 2)
    pos = np.array([[1, 3, 0], [2, 2, 1], [0, 0, 3]])
    out = ad.gather_positions(b, pos)
    for r in range(3):
        for i in range(3):
            np.testing.assert_array_equal(out.data[r, i], b.data[r, pos[r, i]])
    check_op_gradients(lambda: ad.gather_positions(b, pos), [b], rng)


def test_take_along_last(rng):
    a = t(rng, 4, 6)
    idx = np.array([0, 5, 3, 3])
    out = ad.take_along_last(a, idx)
    np.testing.assert_array_equal(out.data, a.data[np.arange(4), idx])
    check_op_gradients(lambda: ad.take_along_last(a, idx), [a], rng)


def test_masked_fill_value_and_exact_zero_grads(rng):
    a = t(rng, 3, 4)
    mask = np.array([[True, False, False, True]] * 3)
    out = ad.masked_fill(a, mask, MASK_FILL)
    assert (out.data[mask] == MASK_FILL).all()
    np.testing.assert_array_equal(out.data[~mask], a.data[~mask])
    with Tape() as tape:
        loss = ad.sum_all(ad.masked_fill(a, mask, 0.5))
    tape.backward(loss)
    assert (a.grad[mask] == 0.0).all()
    assert (a.grad[~mask] == 1.0).all()


def test_reductions_and_broadcast(rng):
    a = t(rng, 3, 4, 2)
    check_op_gradients(lambda: ad.sum_axis(a, 1), [a], rng)
    check_op_gradients(lambda: ad.sum_all(a), [a], rng)
    check_op_gradients(lambda: ad.mean_all(a), [a], rng)
    v = t(rng, 5)
    check_op_gradients(lambda: ad.broadcast_rows(v, 4), [v], rng)


def test_add_seq_add_bias_layer_norm(rng):
    a = t(rng, 2, 3, 4)
    p = t(rng, 3, 4)
    check_op_gradients(lambda: ad.add_seq(a, p), [a, p], rng)
    b = t(rng, 4)
    check_op_gradients(lambda: ad.add_bias(a, b), [a, b], rng)
    g, beta = t(rng, 4), t(rng, 4)
    check_op_gradients(lambda: ad.layer_norm(a, g, beta), [a, g, beta], rng,
                       rtol=2e-4)


def test_stack_columns(rng):
    cols = [t(rng, 3, 2), t(rng, 3, 2), t(rng, 3, 2)]
    out = ad.stack_columns(cols)
    assert out.data.shape == (3, 3, 2)
    for i, c in enumerate(cols):
        np.testing.assert_array_equal(out.data[:, i], c.data)
    check_op_gradients(lambda: ad.stack_columns(cols), cols, rng)


def test_cross_entropy_composite_fd(rng):
    """Cross-entropy of logits produced by an embedding + projection chain,
    checked against finite differences end to end."""
    w = t(rng, 4, 6)
    proj = t(rng, 6, 4)
    idx = np.array([1, 3, 0])
    target = np.array([2, 0, 3])

    def build():
        e = ad.gather_rows(w, idx)
        logits = ad.matmul(e, proj)
        return ad.neg(ad.take_along_last(ad.log_softmax(logits), target))

    check_op_gradients(build, [w, proj], rng)


def test_fd_helper_sanity(rng):
    # the checker itself must flag a wrong gradient
    a = t(rng, 2, 2)
    analytic = 2.0 * a.data  # d/da sum(a^2)
    numeric = fd_gradient(lambda: float((a.data ** 2).sum()), a)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6)
