import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glnloc import numerics as nm
from util import finite_difference, rel_error


def check_op_gradient(make_out, params, tol=1e-6):
    """Check every param's gradient of <R, op output> against central differences.

    Projecting on a fixed random R validates the op's Jacobian-transpose for an
    arbitrary upstream gradient while keeping magnitudes well conditioned.
    `make_out()` rebuilds the op output; params share the arrays FD perturbs.
    """
    probe = make_out()
    r = np.random.default_rng(probe.value.size * 31 + 17).normal(size=probe.value.shape)

    def build():
        return nm.sum_all(nm.mul(make_out(), nm.constant(r)))

    loss = build()
    nm.zero_grad(params)
    nm.backward(loss)
    for p in params:
        fd = finite_difference(lambda: build().value[0, 0], p.value)
        assert rel_error(p.grad, fd) < tol


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    a = nm.constant([[1.0, 2.0], [3.0, 4.0]])
    out = nm.matmul(a, nm.constant(np.eye(2)))
    assert np.array_equal(out.value, [[1, 2], [3, 4]])


def test_matmul_forced_arithmetic():
    out = nm.matmul(nm.constant([[1.0, 2.0]]), nm.constant([[3.0], [4.0]]))
    assert np.array_equal(out.value, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nm.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nm.matmul(nm.constant(np.ones((2, 3))), nm.constant(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = nm.parameter(rng.normal(size=(3, 4)))
    b = nm.parameter(rng.normal(size=(4, 2)))
    check_op_gradient(lambda: nm.matmul(a, b), [a, b])


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def test_softmax_symmetry():
    out = nm.softmax_rows(nm.constant([[0.0, 0.0, 0.0]]))
    assert np.allclose(out.value, 1 / 3)


def test_softmax_stability_no_overflow():
    out = nm.softmax_rows(nm.constant([[1000.0, 0.0]]))
    assert np.isfinite(out.value).all()
    assert out.value[0, 0] == pytest.approx(1.0)
    assert out.value[0, 1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_closed_form():
    out = nm.softmax_rows(nm.constant([[np.log(1.0), np.log(3.0)]]))
    assert np.allclose(out.value, [[0.25, 0.75]], atol=1e-12)


@settings(deadline=None, max_examples=50)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = nm.softmax_rows(nm.constant(x)).value
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_gradient():
    rng = np.random.default_rng(9)
    x = nm.parameter(rng.normal(size=(4, 6)))
    check_op_gradient(lambda: nm.softmax_rows(x), [x])


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_perfect_prediction():
    out = nm.cross_entropy(nm.constant([[0.0, 1.0, 0.0]]), [1])
    assert out.value[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_uniform():
    out = nm.cross_entropy(nm.constant([[0.25] * 4]), [2])
    assert out.value[0, 0] == pytest.approx(np.log(4.0), rel=1e-12)


def test_cross_entropy_two_rows_hand_value():
    probs = nm.constant([[0.5, 0.5, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]])
    out = nm.cross_entropy(probs, [0, 3])
    expected = (np.log(2.0) + np.log(4.0)) / 2  # -ln 0.5, -ln 0.25 averaged
    assert out.value[0, 0] == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        nm.cross_entropy(nm.constant([[0.5, 0.5]]), [2])


def test_cross_entropy_gradient_through_softmax():
    rng = np.random.default_rng(11)
    logits = nm.parameter(rng.normal(size=(5, 4)))
    labels = [0, 3, 1, 1, 2]
    check_op_gradient(lambda: nm.cross_entropy(nm.softmax_rows(logits), labels), [logits])


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def test_relu():
    out = nm.relu(nm.constant([[-1.0, 2.0]]))
    assert np.array_equal(out.value, [[0.0, 2.0]])


def test_leaky_relu_slope():
    out = nm.leaky_relu(nm.constant([[-5.0, 5.0]]), slope=0.2)
    assert np.allclose(out.value, [[-1.0, 5.0]])


def test_dropout_p_zero_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    out = nm.dropout(nm.constant(x), p=0.0, training=True, seed=123)
    assert np.array_equal(out.value, x)


def test_dropout_inference_is_exact_identity():
    x = np.arange(6.0).reshape(2, 3) + 0.5
    out = nm.dropout(nm.constant(x), p=0.7, training=False, seed=1)
    assert np.array_equal(out.value, x)


def test_dropout_bad_p():
    with pytest.raises(ValueError):
        nm.dropout(nm.constant([[1.0]]), p=1.0, training=True, seed=0)


def test_dropout_expectation_matches_input():
    # E[output] == input in training mode, checked over 10^4 seeds to +-2%
    x = np.full((2, 3), 2.0)
    total = np.zeros_like(x)
    n = 10_000
    for seed in range(n):
        total += nm.dropout(nm.constant(x), p=0.4, training=True, seed=seed).value
    assert np.allclose(total / n, x, rtol=0.02)


def test_dropout_deterministic_given_seed():
    x = np.random.default_rng(3).normal(size=(5, 7))
    a = nm.dropout(nm.constant(x), p=0.5, training=True, seed=42).value
    b = nm.dropout(nm.constant(x), p=0.5, training=True, seed=42).value
    assert np.array_equal(a, b)


def test_dropout_gradient():
    rng = np.random.default_rng(13)
    x = nm.parameter(rng.normal(size=(4, 3)))
    check_op_gradient(
        lambda: nm.dropout(x, p=0.5, training=True, seed=5), [x])


def test_batch_norm_training_normalizes_columns():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=(64, 5))
    state = nm.BatchNormState(5)
    out = nm.batch_norm(nm.constant(x), state, training=True)
    assert np.allclose(out.value.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(out.value.var(axis=0), 1.0, atol=1e-4)


def test_batch_norm_inference_uses_running_stats():
    state = nm.BatchNormState(2)
    rng = np.random.default_rng(2)
    for _ in range(200):
        nm.batch_norm(nm.constant(rng.normal(5.0, 3.0, size=(32, 2))), state, training=True)
    x = rng.normal(5.0, 3.0, size=(1000, 2))
    out = nm.batch_norm(nm.constant(x), state, training=False)
    # running stats should have converged near the true moments
    assert np.allclose(out.value.mean(axis=0), 0.0, atol=0.2)
    assert np.allclose(out.value.std(axis=0), 1.0, atol=0.2)


def test_batch_norm_gradient_training_mode():
    rng = np.random.default_rng(17)
    x = nm.parameter(rng.normal(size=(6, 4)))

    def build():
        return nm.batch_norm(x, nm.BatchNormState(4), training=True)

    check_op_gradient(build, [x])


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def test_structural_op_gradients():
    rng = np.random.default_rng(23)
    a = nm.parameter(rng.normal(size=(3, 4)))
    b = nm.parameter(rng.normal(size=(3, 4)))
    bias = nm.parameter(rng.normal(size=(1, 4)))
    col = nm.parameter(rng.normal(size=(3, 1)))
    check_op_gradient(lambda: nm.add(a, b), [a, b])
    check_op_gradient(lambda: nm.mul(a, b), [a, b])
    check_op_gradient(lambda: nm.scale(a, -1.7), [a])
    check_op_gradient(lambda: nm.add_rowvec(a, bias), [a, bias])
    check_op_gradient(lambda: nm.mul_colvec(a, col), [a, col])
    check_op_gradient(lambda: nm.concat_cols([a, b]), [a, b])
    check_op_gradient(lambda: nm.concat_rows([a, b]), [a, b])
    check_op_gradient(lambda: nm.slice_rows(a, 1, 3), [a])
    check_op_gradient(lambda: nm.slice_cols(a, 0, 2), [a])
    check_op_gradient(lambda: nm.relu(a), [a])
    check_op_gradient(lambda: nm.leaky_relu(a, 0.2), [a])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_of_sum_is_all_ones():
    w = nm.parameter(np.random.default_rng(0).normal(size=(3, 5)))
    nm.backward(nm.sum_all(w))
    assert np.array_equal(w.grad, np.ones((3, 5)))


def test_backward_quadratic():
    w = nm.parameter([[1.0, -2.0, 3.0]])
    nm.backward(nm.sum_all(nm.mul(w, w)))
    assert np.allclose(w.grad, 2 * w.value)


def test_backward_non_scalar_loss_rejected():
    w = nm.parameter(np.ones((2, 2)))
    with pytest.raises(nm.ShapeError):
        nm.backward(nm.mul(w, w))


def test_backward_accumulates_across_calls():
    w = nm.parameter(np.ones((2, 2)))
    loss = nm.sum_all(nm.mul(w, w))
    nm.backward(loss)
    nm.backward(loss)
    assert np.allclose(w.grad, 2 * (2 * w.value))


def test_backward_seeds_loss_gradient_with_one():
    w = nm.parameter(np.ones((1, 3)))
    loss = nm.sum_all(w)
    nm.backward(loss)
    assert np.array_equal(loss.grad, [[1.0]])


def test_diamond_graph_accumulates_both_paths():
    w = nm.parameter([[2.0]])
    y = nm.add(w, w)  # dy/dw = 2
    nm.backward(nm.sum_all(y))
    assert np.allclose(w.grad, [[2.0]])


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_first_step_magnitude():
    p = nm.parameter([[1.0]])
    state = nm.adam_init([p], lr=3e-4)
    p.grad[...] = 0.5
    nm.adam_step([p], state)
    # bias-corrected first step: -lr * g / (|g| + eps)
    expected = 1.0 - 3e-4 * (0.5 / (0.5 + 1e-8))
    assert p.value[0, 0] == pytest.approx(expected, abs=1e-15)
    assert p.value[0, 0] - 1.0 == pytest.approx(-3e-4, abs=1e-9)


def test_adam_zero_gradient_keeps_parameters():
    p = nm.parameter([[1.0, -2.0]])
    state = nm.adam_init([p])
    before = p.value.copy()
    for _ in range(5):
        p.grad[...] = 0.0
        nm.adam_step([p], state)
    assert np.array_equal(p.value, before)


def test_adam_constant_gradient_moves_monotonically():
    p = nm.parameter([[0.0]])
    state = nm.adam_init([p], lr=1e-2)
    values = [p.value[0, 0]]
    for _ in range(3):
        nm.adam_step([p], state, grads=[np.array([[1.0]])])
        values.append(p.value[0, 0])
    assert values[0] > values[1] > values[2] > values[3]


def test_adam_shape_mismatch():
    p = nm.parameter(np.ones((2, 2)))
    state = nm.adam_init([p])
    with pytest.raises(nm.ShapeError):
        nm.adam_step([p], state, grads=[np.ones((3, 1))])
    assert state.step == 0  # rejected before any state moved


def test_adam_step_counter_increments():
    p = nm.parameter([[0.0]])
    state = nm.adam_init([p])
    for expected in (1, 2, 3):
        nm.adam_step([p], state, grads=[np.array([[0.1]])])
        assert state.step == expected
