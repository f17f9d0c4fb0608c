import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simpledyg import tensor as tc
from simpledyg.tensor import Tape, Var, numeric_grad, rel_error


def _check(build, arrays, probe_shape, tol=1e-6, seed=0):
    """Compare tape gradients of sum(build(*vars) * W) against central differences."""
    W = np.random.default_rng(seed).normal(size=probe_shape)

    def f(arrs):
        out = build(*[Var(a) for a in arrs])
        return float((out.value * W).sum())

    tape = Tape()
    vs = [tape.var(a.copy()) for a in arrays]
    tape.backward(tc.weighted_sum(build(*vs), W))
    numeric = numeric_grad(f, [a.copy() for a in arrays])
    for v, n in zip(vs, numeric):
        assert rel_error(v.grad, n) <= tol


def test_affine_identity():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = tc.affine(Var(np.eye(2)), Var(W))
    np.testing.assert_array_equal(out.value, W)


def test_affine_scalar():
    assert tc.affine(Var([[2.0]]), Var([[3.0]])).value.tolist() == [[6.0]]


def test_affine_shape_error_names_both_shapes():
    with pytest.raises(tc.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        tc.affine(Var(np.zeros((2, 3))), Var(np.zeros((4, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_affine_gradients(seed):
    rng = np.random.default_rng(seed)
    H, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    _check(lambda h, w, bb: tc.affine(h, w, bb), [H, W, b], (3, 2), seed=seed)


def test_affine_is_linear():
    rng = np.random.default_rng(1)
    H1, H2, W = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    a, b = 0.7, -1.3
    lhs = tc.affine(Var(a * H1 + b * H2), Var(W)).value
    rhs = a * tc.affine(Var(H1), Var(W)).value + b * tc.affine(Var(H2), Var(W)).value
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_softmax_uniform_row():
    np.testing.assert_allclose(tc.softmax_rows(Var([[0.0, 0.0, 0.0]])).value, [[1 / 3] * 3])


def test_softmax_masked_entry_is_exactly_zero():
    p = tc.softmax_rows(Var([[5.0, 7.0]]), mask=np.array([[True, False]])).value
    assert p.tolist() == [[1.0, 0.0]]


def test_softmax_reference_values():
    p = tc.softmax_rows(Var([[1.0, 2.0, 3.0]])).value[0]
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(p, e / e.sum(), atol=1e-12)
    np.testing.assert_allclose(p, [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError, match="fully masked"):
        tc.softmax_rows(Var([[1.0, 2.0]]), mask=np.array([[False, False]]))


@pytest.mark.parametrize("seed", range(5))
def test_softmax_gradients_with_causal_mask(seed):
    S = np.random.default_rng(seed).normal(size=(4, 4))
    mask = np.tril(np.ones((4, 4), dtype=bool))
    _check(lambda s: tc.softmax_rows(s, mask), [S], (4, 4), seed=seed)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(row, seed):
    mask = np.random.default_rng(seed).random(len(row)) < 0.6
    mask[0] = True
    p = tc.softmax_rows(Var([row]), mask[None]).value[0]
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p[~mask] == 0.0)


def test_layer_norm_constant_row_is_zero():
    out = tc.layer_norm_rows(Var([[3.0, 3.0, 3.0]]), Var(np.ones(3)), Var(np.zeros(3)), 1e-5)
    np.testing.assert_allclose(out.value, 0.0, atol=1e-12)


def test_layer_norm_unit_variance_row():
    out = tc.layer_norm_rows(Var([[1.0, -1.0]]), Var(np.ones(2)), Var(np.zeros(2)), 1e-12)
    np.testing.assert_allclose(out.value, [[1.0, -1.0]], atol=1e-10)


def test_layer_norm_uses_population_variance():
    x = np.array([[1.0, 2.0, 6.0]])
    out = tc.layer_norm_rows(Var(x), Var(np.ones(3)), Var(np.zeros(3)), 1e-12).value
    np.testing.assert_allclose(out, (x - x.mean()) / x.std(ddof=0), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_gradients(seed):
    rng = np.random.default_rng(seed)
    H, g, b = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    _check(lambda h, gg, bb: tc.layer_norm_rows(h, gg, bb, 1e-5), [H, g, b], (3, 5), tol=1e-5, seed=seed)


def test_gather_duplicate_ids_accumulate():
    tape = Tape()
    E = tape.var(np.arange(6.0).reshape(3, 2))
    out = tc.gather_embed([0, 0], E)
    np.testing.assert_array_equal(out.value, [[0.0, 1.0], [0.0, 1.0]])
    tape.backward(tc.weighted_sum(out, np.array([[1.0, 2.0], [10.0, 20.0]])))
    np.testing.assert_array_equal(E.grad, [[11.0, 22.0], [0.0, 0.0], [0.0, 0.0]])


def test_gather_empty_ids():
    assert tc.gather_embed([], Var(np.zeros((3, 4)))).shape == (0, 4)


def test_gather_out_of_range():
    with pytest.raises(IndexError):
        tc.gather_embed([3], Var(np.zeros((3, 4))))


@pytest.mark.parametrize("seed", range(3))
def test_gather_gradients(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 4, size=6)
    E = rng.normal(size=(4, 3))
    _check(lambda e: tc.gather_embed(ids, e), [E], (6, 3), seed=seed)


def test_cross_entropy_uniform_logits():
    V = 7
    loss = tc.cross_entropy_next_token(Var(np.zeros((3, V))), [0, 3, 6])
    assert loss.value == pytest.approx(math.log(V), abs=1e-12)


def test_cross_entropy_saturates():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1e3
    assert tc.cross_entropy_next_token(Var(logits), [2]).value == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        tc.cross_entropy_next_token(Var(np.zeros((1, 4))), [4])


def test_cross_entropy_ignored_positions_contribute_nothing():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 5))
    full = tc.cross_entropy_next_token(Var(logits[:2]), [1, 2]).value
    padded = tc.cross_entropy_next_token(Var(logits), [1, 2, 4, 4], ignore=4).value
    assert padded == pytest.approx(full, abs=1e-14)
    tape = Tape()
    lv = tape.var(logits)
    tape.backward(tc.cross_entropy_next_token(lv, [1, 2, 4, 4], ignore=4))
    assert np.all(lv.grad[2:] == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_loss_and_gradients(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, size=5)
    manual = -np.mean([logits[i, t] - np.log(np.exp(logits[i]).sum()) for i, t in enumerate(targets)])
    assert tc.cross_entropy_next_token(Var(logits), targets).value == pytest.approx(manual, abs=1e-12)

    tape = Tape()
    lv = tape.var(logits.copy())
    tape.backward(tc.cross_entropy_next_token(lv, targets))
    (num,) = numeric_grad(lambda a: float(tc.cross_entropy_next_token(Var(a[0]), targets).value), [logits.copy()])
    assert rel_error(lv.grad, num) <= 1e-6


def test_cross_entropy_batched_is_mean_of_instance_means():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(2, 4, 6))
    targets = np.array([[1, 2, 5, 5], [0, 3, 4, 2]])
    batched = tc.cross_entropy_next_token(Var(logits), targets, ignore=5).value
    a = tc.cross_entropy_next_token(Var(logits[0, :2]), targets[0, :2]).value
    b = tc.cross_entropy_next_token(Var(logits[1]), targets[1]).value
    assert batched == pytest.approx((a + b) / 2, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gelu_and_head_reshapes_gradients(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2, 3, 4))
    _check(lambda x: tc.gelu(x), [X], X.shape, seed=seed)
    _check(lambda x: tc.split_heads(x, 2), [X], (2, 2, 3, 2), seed=seed)
    _check(lambda x: tc.merge_heads(tc.split_heads(x, 2)), [X], X.shape, seed=seed)


@pytest.mark.parametrize("transpose_b", [False, True])
def test_matmul_gradients(transpose_b):
    rng = np.random.default_rng(4)
    A = rng.normal(size=(2, 3, 4))
    B = rng.normal(size=(2, 5, 4) if transpose_b else (2, 4, 5))
    _check(lambda a, b: tc.matmul(a, b, transpose_b), [A, B], (2, 3, 5))


def test_merge_inverts_split():
    X = np.random.default_rng(0).normal(size=(3, 5, 6))
    np.testing.assert_array_equal(tc.merge_heads(tc.split_heads(Var(X), 3)).value, X)


def test_tape_replays_once():
    tape = Tape()
    x = tape.var([1.0, 2.0])
    loss = tc.sum_all(tc.scale(x, 3.0))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])
    with pytest.raises(tc.TapeError):
        tape.backward(loss)


def test_no_tape_means_no_recording():
    x = Var(np.ones((2, 2)))
    out = tc.affine(x, Var(np.eye(2)))
    assert out.tape is None and not out.requires_grad
