import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from zslforge import ndcore as nd
from zslforge.ndcore import AdamState, Tape, adam_step


def test_sample_gaussian_is_deterministic():
    a = nd.sample_gaussian(3, 4, nd.make_rng(7))
    b = nd.sample_gaussian(3, 4, nd.make_rng(7))
    assert a.shape == (3, 4)
    assert np.array_equal(a, b)


def test_sample_gaussian_moments():
    # standard error of the mean at n=10000 is 0.01, of the variance ~0.014
    x = nd.sample_gaussian(10000, 1, nd.make_rng(3))
    assert -0.1 < x.mean() < 0.1
    assert 0.9 < x.var() < 1.1


@pytest.mark.parametrize("n,dim", [(0, 4), (3, 0)])
def test_sample_gaussian_rejects_empty(n, dim):
    with pytest.raises(ValueError):
        nd.sample_gaussian(n, dim, nd.make_rng(0))


def test_sample_uniform01():
    assert np.array_equal(nd.sample_uniform01(5, nd.make_rng(1)), nd.sample_uniform01(5, nd.make_rng(1)))
    u = nd.sample_uniform01(10000, nd.make_rng(2))
    assert u.min() >= 0 and u.max() < 1
    assert 0.45 < u.mean() < 0.55
    with pytest.raises(ValueError):
        nd.sample_uniform01(0, nd.make_rng(0))


def test_derive_rng_streams_differ_and_repeat():
    a = nd.derive_rng(5, "x").random(4)
    assert np.array_equal(a, nd.derive_rng(5, "x").random(4))
    assert not np.array_equal(a, nd.derive_rng(5, "y").random(4))


# --------------------------------------------------------------------------
# grad


def test_grad_of_sum_of_squares(rng):
    v = rng.standard_normal((3, 2))
    tape = Tape()
    leaf = tape.watch(v)
    (g,) = nd.grad(tape, nd.sum_(nd.square(leaf)), [leaf])
    assert np.allclose(g.value, 2 * v, rtol=0, atol=1e-15)


def test_grad_of_independent_leaf_is_zero(rng):
    tape = Tape()
    v = tape.watch(rng.standard_normal((2, 2)))
    u = tape.watch(rng.standard_normal((4, 3)))
    (gu,) = nd.grad(tape, nd.sum_(v * v), [u])
    assert np.array_equal(gu.value, np.zeros((4, 3)))


def test_unrecorded_leaf_raises(rng):
    tape, other = Tape(), Tape()
    v = tape.watch(rng.standard_normal(3))
    stray = other.watch(rng.standard_normal(3))
    with pytest.raises(nd.UnrecordedLeafError):
        nd.grad(tape, nd.sum_(v), [stray])
    with pytest.raises(nd.UnrecordedLeafError):
        nd.grad(tape, nd.sum_(v), [nd.constant(np.ones(3))])


def _critic_params(rng, d=5, h=7):
    return {
        "W1": rng.standard_normal((d, h)) * 0.6,
        "b1": rng.standard_normal((1, h)) * 0.1,
        "W2": rng.standard_normal((h, 1)) * 0.6,
        "b2": rng.standard_normal((1, 1)) * 0.1,
    }


def _critic(p, x):
    return nd.leaky_relu(x @ p["W1"] + p["b1"], 0.2) @ p["W2"] + p["b2"]


def _penalty_value(params, x):
    tape = Tape()
    p = tape.watch_all(params)
    xl = tape.watch(x)
    g = nd.input_gradient(tape, _critic(p, xl), xl)
    return nd.mean(nd.square(nd.row_norm(g) - 1.0)), tape, p


def test_penalty_parameter_gradients_match_finite_differences(rng):
    params = _critic_params(rng)
    x = rng.standard_normal((4, 5))
    loss, tape, p = _penalty_value(params, x)
    grads = nd.grad(tape, loss, list(p.values()))
    for (name, arr), g in zip(params.items(), grads):
        num = central_diff(lambda: _penalty_value(params, x)[0].item(), arr)
        assert rel_err(g.value, num) < 1e-4, name


def test_input_gradient_matches_finite_differences(rng):
    params = _critic_params(rng)
    x = rng.standard_normal((4, 5))
    tape = Tape()
    xl = tape.watch(x)
    g = nd.input_gradient(tape, _critic({k: nd.constant(v) for k, v in params.items()}, xl), xl)
    num = central_diff(lambda: float(_critic({k: nd.constant(v) for k, v in params.items()}, nd.constant(x)).value.sum()), x)
    assert rel_err(g.value, num) < 1e-4


def test_input_gradient_of_constant_net_is_zero(rng):
    tape = Tape()
    x = tape.watch(rng.standard_normal((3, 4)))
    w = tape.watch(np.zeros((4, 1)))
    out = x @ w + 2.5
    g = nd.input_gradient(tape, out, x)
    assert np.array_equal(g.value, np.zeros((3, 4)))
    pen = nd.mean(nd.square(nd.row_norm(g) - 1.0))
    assert pen.item() == 1.0
    # differentiable even at the zero-gradient point
    (gw,) = nd.grad(tape, pen, [w])
    assert np.all(np.isfinite(gw.value))


def test_input_gradient_of_unit_linear_net(rng):
    w = rng.standard_normal((6, 1))
    w /= np.linalg.norm(w)
    tape = Tape()
    x = tape.watch(rng.standard_normal((5, 6)))
    g = nd.input_gradient(tape, x @ nd.constant(w), x)
    norms = nd.row_norm(g).value
    assert np.allclose(norms, 1.0, atol=1e-15)
    assert nd.mean(nd.square(nd.row_norm(g) - 1.0)).item() == pytest.approx(0.0, abs=1e-28)


def test_tape_replay_is_bit_identical(rng):
    params = _critic_params(rng)
    loss, tape, _ = _penalty_value(params, rng.standard_normal((4, 5)))
    replayed = tape.replay()
    assert len(replayed) == len(tape)
    for node, value in zip(tape.nodes, replayed):
        assert node.value.tobytes() == np.asarray(value).tobytes()


# Composite expressions built from every primitive, checked against finite
# differences at random shapes.


def _composite(a, b, c):
    h = nd.leaky_relu(a @ b, 0.2)
    y = nd.concat_cols(h, nd.take_cols(a, 0, 1))
    s = nd.log_softmax(y) * 0.3 + nd.sqrt(nd.square(y) + 1.0) - nd.abs_(y - 0.1)
    s = s / (nd.exp(nd.mul(y, 0.1)) + 1.0)
    return nd.mean(nd.row_norm(s * c)) + nd.sum_(nd.relu(y), axis=0).sum() * 0.01 + nd.log(nd.square(y) + 2.0).mean()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 4), m=st.integers(1, 4), h=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_composite_gradients_match_finite_differences(n, m, h, seed):
    rng = np.random.default_rng(seed)
    arrs = [rng.standard_normal((n, m)), rng.standard_normal((m, h)), rng.standard_normal((1, h + 1))]

    def value():
        return _composite(*[nd.constant(a) for a in arrs]).item()

    tape = Tape()
    leaves = [tape.watch(a) for a in arrs]
    grads = nd.grad(tape, _composite(*leaves), leaves)
    for arr, g in zip(arrs, grads):
        assert rel_err(g.value, central_diff(value, arr)) < 1e-4


def test_second_order_matches_finite_differences_of_first_order(rng):
    # d/dw of sum((d/dx f(x, w))^2), checked against differencing the first gradient
    x0 = rng.standard_normal((3, 2))
    w0 = rng.standard_normal((2, 2))

    def first(w):
        tape = Tape()
        x = tape.watch(x0)
        wl = tape.watch(w)
        f = nd.sum_(nd.exp(x @ wl) * 0.5)
        (gx,) = nd.grad(tape, f, [x], create_graph=True)
        return nd.sum_(nd.square(gx)), tape, wl

    s, tape, wl = first(w0)
    (gw,) = nd.grad(tape, s, [wl])
    num = central_diff(lambda: first(w0)[0].item(), w0)
    assert rel_err(gw.value, num) < 1e-4


# --------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_params():
    p = {"p": np.array([1.5, -2.0])}
    adam_step(p, {"p": np.zeros(2)}, AdamState(), 1e-3)
    assert np.array_equal(p["p"], [1.5, -2.0])


def test_adam_first_step_by_hand():
    # m_hat = 1, v_hat = 1 -> p = 1 - 1e-4 * 1 / (1 + 1e-8)
    p = {"p": np.array(1.0)}
    state = AdamState()
    adam_step(p, {"p": np.array(1.0)}, state, 1e-4)
    assert p["p"] == pytest.approx(1.0 - 1e-4 / (1.0 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_converges_on_quadratic():
    p = {"p": np.array(0.0)}
    state = AdamState()
    for _ in range(100):
        adam_step(p, {"p": 2 * (p["p"] - 3.0)}, state, 0.1)
    assert abs(p["p"] - 3.0) < 0.1


def test_adam_shape_mismatch():
    with pytest.raises(nd.ShapeError):
        adam_step({"p": np.zeros(3)}, {"p": np.zeros(2)}, AdamState(), 0.1)
    state = AdamState()
    adam_step({"p": np.zeros(3)}, {"p": np.ones(3)}, state, 0.1)
    with pytest.raises(nd.ShapeError):
        adam_step({"p": np.zeros(4)}, {"p": np.ones(4)}, state, 0.1)
