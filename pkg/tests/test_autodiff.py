import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daeplan import autodiff as ad
from daeplan.errors import NonFiniteError, ShapeError
from daeplan.verify import rel_err

RNG = np.random.default_rng(1234)

# unary primitives and the domain their inputs are drawn from
UNARY = {
    "neg": (ad.neg, (-3, 3)),
    "square": (ad.square, (-3, 3)),
    "exp": (ad.exp, (-3, 3)),
    "log": (ad.log, (0.2, 5)),
    "sin": (ad.sin, (-4, 4)),
    "cos": (ad.cos, (-4, 4)),
    "tanh": (ad.tanh, (-3, 3)),
    "sigmoid": (ad.sigmoid, (-6, 6)),
    "swish": (ad.swish, (-6, 6)),
    "softplus": (ad.softplus, (-6, 6)),
    "relu": (ad.relu, (0.05, 3)),  # away from the kink
}

BINARY = {
    "add": (ad.add, (-3, 3), (-3, 3)),
    "sub": (ad.sub, (-3, 3), (-3, 3)),
    "mul": (ad.mul, (-3, 3), (-3, 3)),
    "div": (ad.div, (-3, 3), (0.5, 3)),
}


def _check(f_taped, f_plain, xs):
    tape = ad.Tape()
    nodes = [tape.var(x) for x in xs]
    grads = ad.grad(tape, f_taped(*nodes), nodes)
    worst = 0.0
    for i, x in enumerate(xs):

        def f(v, i=i):
            args = list(xs)
            args[i] = v
            return f_plain(*args)

        worst = max(worst, rel_err(grads[i], ad.finite_diff_grad(f, x)))
    return worst


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradcheck_100_points(name):
    fn, (lo, hi) = UNARY[name]
    x = RNG.uniform(lo, hi, 100)
    c = RNG.normal(size=100)
    err = _check(lambda n: ad.sum(fn(n) * c), lambda v: np.sum(fn(v) * c), [x])
    assert err <= 1e-6


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradcheck_100_points(name):
    fn, da, db = BINARY[name]
    a, b = RNG.uniform(*da, 100), RNG.uniform(*db, 100)
    c = RNG.normal(size=100)
    err = _check(lambda x, y: ad.sum(fn(x, y) * c), lambda x, y: np.sum(fn(x, y) * c), [a, b])
    assert err <= 1e-6


def test_broadcasting_binary_ops():
    a, b = RNG.normal(size=(4, 3)), RNG.normal(size=(3,))
    for fn in (ad.add, ad.sub, ad.mul):
        err = _check(lambda x, y: ad.sum(ad.square(fn(x, y))), lambda x, y: np.sum(fn(x, y) ** 2), [a, b])
        assert err <= 1e-6


def test_matmul_batched_gradcheck():
    a, b = RNG.normal(size=(2, 4, 3)), RNG.normal(size=(3, 5))
    err = _check(lambda x, y: ad.sum(ad.tanh(x @ y)), lambda x, y: np.sum(np.tanh(x @ y)), [a, b])
    assert err <= 1e-6


def test_structural_ops_gradcheck():
    x = RNG.normal(size=(3, 4, 2))
    w = RNG.normal(size=(3, 10))

    def f(v):
        parts = ad.concat([v[:, 1:3, 0], v[:, :, 1]], axis=-1)  # (3, 6)
        s = ad.sum(parts, axis=0)
        m = ad.mean(ad.reshape(v, (3, 8)), axis=-1)
        return ad.sum(ad.concat([ad.reshape(s, (6,)), m], axis=0) * w[0, :9])

    err = _check(f, f, [x])
    assert err <= 1e-6


def test_square_at_three():
    tape = ad.Tape()
    x = tape.var(3.0)
    assert ad.grad(tape, ad.square(x), x) == pytest.approx(6.0)


def test_disconnected_leaf_gets_zero():
    tape = ad.Tape()
    x, y = tape.var([1.0, 2.0]), tape.var([[5.0]])
    g = ad.backward(tape, ad.sum(x * x))
    assert np.array_equal(g[y.id], np.zeros((1, 1)))


def test_non_scalar_root_rejected():
    tape = ad.Tape()
    x = tape.var([1.0, 2.0])
    with pytest.raises(ShapeError):
        ad.backward(tape, x * 2.0)


def test_stop_gradient_blocks_flow():
    tape = ad.Tape()
    x = tape.var(2.0)
    y = ad.stop_gradient(x) * x
    assert ad.grad(tape, y, x) == pytest.approx(2.0)


def test_gradient_linearity():
    x = RNG.normal(size=5)
    tape = ad.Tape()
    n = tape.var(x)
    f1, f2 = ad.sum(ad.sin(n)), ad.sum(ad.square(n) * 0.5)
    g_sum = ad.grad(tape, f1 + f2, n)
    assert np.allclose(g_sum, ad.grad(tape, f1, n) + ad.grad(tape, f2, n), rtol=0, atol=1e-15)


def test_finite_diff_examples():
    assert np.array_equal(ad.finite_diff_grad(lambda v: 3.0, np.ones(3)), np.zeros(3))
    assert np.allclose(ad.finite_diff_grad(lambda v: v @ v, np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-8)
    with pytest.raises(ValueError):
        ad.finite_diff_grad(lambda v: 0.0, np.ones(1), h=0.0)


def test_tape_is_topological():
    tape = ad.Tape()
    x = tape.var(RNG.normal(size=3))
    ad.sum(ad.exp(x) * ad.sin(x))
    for node in tape.nodes:
        assert all(p < node.id for p in node.parents)


# ---------------------------------------------------------------------- MLP


def _oracle_forward(params, x):
    h = x
    for W, b, act in zip(params.weights, params.biases, params.activations):
        z = h @ W + b
        if act == "swish":
            h = z / (1.0 + np.exp(-z))
        elif act == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return h


def test_swish_zero_fixed_point():
    p = ad.MlpParams([np.zeros((1, 1))], [np.zeros(1)], ["swish"])
    assert ad.mlp_forward(p, np.array([[3.0]]))[0, 0] == 0.0


def test_zero_weights_output_bias():
    b = np.array([0.5, -2.0])
    p = ad.MlpParams([np.zeros((3, 2))], [b], ["identity"])
    assert np.array_equal(ad.mlp_forward(p, RNG.normal(size=(7, 3))), np.broadcast_to(b, (7, 2)))


def test_mlp_matches_straight_line_oracle():
    p = ad.init_mlp([4, 16, 16, 3], ["swish", "tanh", "identity"], np.random.default_rng(0))
    x = RNG.normal(size=(10, 4))
    assert np.max(np.abs(ad.mlp_forward(p, x) - _oracle_forward(p, x))) <= 1e-12
    tape = ad.Tape()
    taped = ad.mlp_forward(p.on_tape(tape), tape.const(x))
    assert np.max(np.abs(taped.value - _oracle_forward(p, x))) <= 1e-12


def test_mlp_input_dim_mismatch():
    p = ad.init_mlp([4, 3], ["identity"], np.random.default_rng(0))
    with pytest.raises(ShapeError, match="input"):
        ad.mlp_forward(p, np.ones((2, 5)))


def test_mlp_layers_must_chain():
    with pytest.raises(ShapeError):
        ad.MlpParams([np.ones((3, 4)), np.ones((5, 2))], [np.ones(4), np.ones(2)], ["tanh", "identity"])


def test_mlp_param_gradcheck():
    from daeplan.verify import mlp_gradcheck

    p = ad.init_mlp([3, 5, 4, 2], ["swish", "tanh", "identity"], np.random.default_rng(3))
    assert mlp_gradcheck(p, RNG.normal(size=(4, 3)), RNG.normal(size=(4, 2))) <= 1e-5


def test_taped_forward_deterministic():
    p = ad.init_mlp([3, 8, 2], ["swish", "identity"], np.random.default_rng(5))
    x = RNG.normal(size=(6, 3))
    outs = []
    for _ in range(2):
        tape = ad.Tape()
        nodes = [tape.var(a) for a in p.arrays()]
        y = ad.sum(ad.mlp_forward(ad.MlpParams.from_arrays(nodes, p.activations), x))
        outs.append((y.value.tobytes(), ad.grad(tape, y, nodes[0]).tobytes()))
    assert outs[0] == outs[1]


# --------------------------------------------------------------------- Adam


def test_adam_zero_gradient_first_step_is_noop():
    x = np.array([1.0, -2.0])
    state = ad.adam_state([x], 0.1)
    assert all(np.all(m == 0) for m in state.m + state.v) and state.step == 0
    (x2,), state = ad.adam_step([x], [np.zeros(2)], state)
    assert np.array_equal(x2, x) and state.step == 1


def test_adam_first_step_is_lr_sign():
    g = np.array([3.0, -0.01, 250.0])
    (x2,), _ = ad.adam_step([np.zeros(3)], [g], ad.adam_state([np.zeros(3)], 0.1))
    # bias-corrected first step: -lr * g / (|g| + eps)
    assert np.allclose(x2, -0.1 * np.sign(g), rtol=0, atol=1e-6)


def test_adam_minimizes_quadratic():
    x = np.array([0.0])
    state = ad.adam_state([x], 0.1)
    for _ in range(1000):
        (x,), state = ad.adam_step([x], [2.0 * (x - 5.0)], state)
    assert abs(x[0] - 5.0) <= 1e-4


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        ad.adam_step([np.zeros(2)], [np.array([1.0, np.nan])], ad.adam_state([np.zeros(2)], 0.1))


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.adam_step([np.zeros(2)], [np.zeros(3)], ad.adam_state([np.zeros(2)], 0.1))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(-3, 3))
def test_untaped_equals_taped_values(xs, c):
    x = np.array(xs)
    plain = ad.sum(ad.swish(x) * c + ad.tanh(x))
    tape = ad.Tape()
    taped = ad.sum(ad.swish(tape.var(x)) * c + ad.tanh(tape.var(x)))
    assert plain == taped.value


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_random_mlp_gradcheck_property(d_in, d_out, seed):
    from daeplan.verify import mlp_gradcheck

    rng = np.random.default_rng(seed)
    p = ad.init_mlp([d_in, 4, d_out], ["swish", "tanh"], rng)
    assert mlp_gradcheck(p, rng.normal(size=(2, d_in)), rng.normal(size=(2, d_out))) <= 1e-5
