import numpy as np
import pytest
from hypothesis import given, strategies as st

from ray_mixtures import tape as tp
from ray_mixtures.errors import DomainError, NumericFault
from ray_mixtures.tape import Tape, backward


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def _check(fn, x, *, tol=1e-6):
    tape = Tape()
    p = tape.param("x", x)
    grads = backward(tape, tp.reduce_sum(fn(p)))
    expected = _numeric_grad(lambda v: float(np.sum(fn(v))), x)
    np.testing.assert_allclose(grads["x"], expected, rtol=tol, atol=tol)


def test_identity_gradient():
    tape = Tape()
    p = tape.param("p", np.array(2.0))
    q = tape.param("q", np.array(5.0))
    grads = backward(tape, p * 1.0)
    assert grads["p"] == 1.0
    assert grads["q"] == 0.0


def test_square_gradient():
    tape = Tape()
    p = tape.param("p", np.array(3.0))
    assert backward(tape, p * p)["p"] == 6.0


def test_shared_subexpression_accumulates():
    tape = Tape()
    p = tape.param("p", np.array([1.0, 2.0]))
    y = tp.exp(p)
    loss = tp.reduce_sum(y * y + y)
    g = backward(tape, loss)["p"]
    np.testing.assert_allclose(g, 2 * np.exp(2 * np.array([1.0, 2.0])) + np.exp([1.0, 2.0]))


@pytest.mark.parametrize(
    "fn",
    [
        tp.exp,
        tp.expm1,
        tp.softplus,
        tp.sigmoid,
        lambda v: tp.log(tp.square(v) + 1.0),
        lambda v: tp.sqrt(tp.square(v) + 0.5),
        lambda v: tp.exclusive_cumsum(v),
        lambda v: tp.reduce_max(v, axis=-1),
        lambda v: tp.l2_norm(v, axis=-1),
        lambda v: v / (tp.absolute(v) + 1.0),
        lambda v: tp.concatenate([v, 2.0 * v], axis=-1),
        lambda v: tp.reshape(v, (-1,))[::2],
    ],
)
def test_elementwise_ops_match_finite_differences(fn, rng):
    _check(fn, rng.normal(size=(3, 4)))


def test_matmul_gradients(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    tape = Tape()
    pa, pb = tape.param("a", a), tape.param("b", b)
    grads = backward(tape, tp.reduce_sum(tp.square(tp.matmul(pa, pb))))
    np.testing.assert_allclose(grads["a"], _numeric_grad(lambda v: np.sum((v @ b) ** 2), a), rtol=1e-6)
    np.testing.assert_allclose(grads["b"], _numeric_grad(lambda v: np.sum((a @ v) ** 2), b), rtol=1e-6)


def test_broadcast_gradient_is_reduced(rng):
    bias = rng.normal(size=(3,))
    x = rng.normal(size=(5, 3))
    tape = Tape()
    pb = tape.param("b", bias)
    g = backward(tape, tp.reduce_sum(tp.square(x + pb)))["b"]
    np.testing.assert_allclose(g, np.sum(2 * (x + bias), axis=0))


def test_where_routes_gradient():
    tape = Tape()
    p = tape.param("p", np.array([1.0, 2.0, 3.0]))
    out = tp.where(np.array([True, False, True]), p * 2.0, 0.0)
    np.testing.assert_array_equal(backward(tape, tp.reduce_sum(out))["p"], [2.0, 0.0, 2.0])


def test_stop_gradient_blocks():
    tape = Tape()
    p = tape.param("p", np.array(2.0))
    loss = p * tp.stop_gradient(p)
    assert backward(tape, loss)["p"] == 2.0


def test_log_mix_matches_brute_force(rng):
    logs = rng.normal(size=(4, 5))
    w = rng.dirichlet(np.ones(5), size=4)
    got = tp.log_mix(logs, w)
    np.testing.assert_allclose(got, np.log(np.sum(w * np.exp(logs), axis=-1)), rtol=1e-12)


def test_log_mix_skips_zero_weights():
    logs = np.array([[0.0, -np.inf, 1.0]])
    w = np.array([[0.5, 0.0, 0.5]])
    assert np.isfinite(tp.log_mix(logs, w)).all()


def test_log_mix_gradients(rng):
    logs = rng.normal(size=(3, 4))
    w = rng.dirichlet(np.ones(4), size=3)
    tape = Tape()
    pl, pw = tape.param("l", logs), tape.param("w", w)
    grads = backward(tape, tp.reduce_sum(tp.log_mix(pl, pw)))
    f_l = lambda v: np.sum(np.log(np.sum(w * np.exp(v), axis=-1)))
    f_w = lambda v: np.sum(np.log(np.sum(v * np.exp(logs), axis=-1)))
    np.testing.assert_allclose(grads["l"], _numeric_grad(f_l, logs), rtol=1e-6)
    np.testing.assert_allclose(grads["w"], _numeric_grad(f_w, w), rtol=1e-6)


@given(st.floats(-700, 700))
def test_softplus_is_finite_and_positive(x):
    v = float(tp.softplus(np.array(x)))
    assert np.isfinite(v) and v >= 0.0


def test_non_scalar_loss_rejected():
    tape = Tape()
    p = tape.param("p", np.ones(3))
    with pytest.raises(DomainError):
        backward(tape, p * 2.0)


def test_non_finite_param_is_a_numeric_fault():
    with pytest.raises(NumericFault) as info:
        Tape().param("w", np.array([1.0, np.nan]))
    assert info.value.index == "w"


def test_plain_arrays_bypass_the_tape(rng):
    x = rng.normal(size=(3,))
    out = tp.softplus(x) + tp.sigmoid(x)
    assert isinstance(out, np.ndarray)
    np.testing.assert_allclose(out, np.logaddexp(0, x) + 1 / (1 + np.exp(-x)))
