import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netcert.diffcore import (AdamState, ConfigurationError, MlpParams, NonFiniteGradient, Tape,
                              TapeError, adam_step, backprop, finite_diff_grad, mlp_apply,
                              mlp_forward, mlp_init, power_iterate, relative_error,
                              spectral_normalize)
from netcert.diffcore import tape as ad


def affine_net(W, b):
    W, b = np.atleast_2d(np.asarray(W, float)), np.atleast_1d(np.asarray(b, float))
    return MlpParams([W.shape[1], W.shape[0]], [W], [b], spectral_norm=[])


def test_init_deterministic_and_shapes():
    a = mlp_init([2, 64, 64, 1], seed=0)
    b = mlp_init([2, 64, 64, 1], seed=0)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    p = mlp_init([2, 4, 1])
    assert [w.shape for w in p.weights] == [(4, 2), (1, 4)]
    assert [len(v) for v in p.biases] == [4, 1]
    assert all(np.all(v == 0) for v in p.biases)
    bound = 1 / np.sqrt(2)
    assert np.all(np.abs(p.weights[0]) <= bound)


@pytest.mark.parametrize("widths", [[3], [], [2, 0, 1]])
def test_init_rejects_bad_widths(widths):
    with pytest.raises(ConfigurationError):
        mlp_init(widths)


def test_power_vectors_unit_norm():
    p = mlp_init([3, 8, 8, 2], spectral_norm=True, seed=4)
    for u, v in zip(p.power_u, p.power_v):
        assert abs(np.linalg.norm(u) - 1) < 1e-9 and abs(np.linalg.norm(v) - 1) < 1e-9


def test_forward_examples():
    p = mlp_init([3, 5, 2])
    p.set_arrays([np.zeros_like(a) for a in p.arrays()])
    y, _ = mlp_forward(p, np.array([1.0, -2.0, 3.0]))
    assert np.all(y == 0)
    p.output_activation = "relu"
    y, _ = mlp_forward(p, np.array([1.0, -2.0, 3.0]))
    assert np.all(y == 0)
    y, _ = mlp_forward(affine_net([[2.0]], [1.0]), np.array([3.0]))
    assert y.tolist() == [7.0]


def test_forward_errors():
    p = mlp_init([2, 3, 1])
    with pytest.raises(ValueError):
        mlp_forward(p, np.zeros(3))
    with pytest.raises(ValueError):
        mlp_forward(p, np.array([np.nan, 0.0]))


def test_backprop_affine_example():
    y, tape = mlp_forward(affine_net([[2.0]], [1.0]), np.array([3.0]))
    grads, gx = backprop(tape, np.array([1.0]))
    assert gx.tolist() == [2.0]
    assert grads.weights[0].tolist() == [[3.0]]
    assert grads.biases[0].tolist() == [1.0]


def test_backprop_zero_upstream_and_consumed_tape():
    p = mlp_init([2, 6, 6, 3], seed=1)
    _, tape = mlp_forward(p, np.array([0.3, -0.7]))
    grads, gx = backprop(tape, np.zeros(3))
    assert all(np.all(g == 0) for g in grads.arrays()) and np.all(gx == 0)
    with pytest.raises(TapeError):
        backprop(tape, np.ones(3))
    _, tape = mlp_forward(p, np.array([0.3, -0.7]))
    with pytest.raises(ValueError):
        backprop(tape, np.ones(2))


def _random_net_check(seed, spectral, relu):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 7)),
              int(rng.integers(1, 3))]
    p = mlp_init(widths, seed=seed, spectral_norm=spectral,
                 output_activation="relu" if relu else None)
    for a in p.arrays():
        a += rng.uniform(-0.3, 0.3, size=a.shape)
    x = rng.uniform(-2, 2, size=widths[0])
    w = rng.standard_normal(widths[-1])
    _, tape = mlp_forward(p, x)
    grads, gx = backprop(tape, w)
    errs = [relative_error(gx, finite_diff_grad(lambda z: w @ mlp_forward(p, z)[0], x))]
    arrays = p.arrays()
    for k, g in enumerate(grads.arrays()):
        def f(a, k=k):
            arr = list(arrays)
            arr[k] = a
            return w @ mlp_apply(p, x[None], arr)[0]
        errs.append(relative_error(g, finite_diff_grad(f, arrays[k])))
    return max(errs)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("spectral", [False, True])
def test_backprop_matches_finite_differences(seed, spectral):
    assert _random_net_check(seed, spectral, relu=False) <= 1e-4


def test_jvp_matches_finite_differences():
    rng = np.random.default_rng(3)
    p = mlp_init([3, 16, 16, 2], seed=2, spectral_norm=True)
    x = rng.uniform(-2, 2, size=(5, 3))
    t = rng.standard_normal((5, 3))
    y, dy = mlp_apply(p, x, tangent=t)
    h = 1e-6
    fd = (mlp_apply(p, x + h * t) - mlp_apply(p, x - h * t)) / (2 * h)
    assert np.allclose(dy, fd, atol=1e-8)
    assert np.allclose(y, mlp_apply(p, x))


def test_tape_primitives_against_finite_differences():
    rng = np.random.default_rng(0)
    a0 = rng.standard_normal((4, 3))
    idx = np.array([0, 2, 2, 1])

    def build(tape, a):
        s = ad.sigmoid(a) * ad.tanh(a) + ad.square(a) / (2.0 + ad.absolute(a))
        m = ad.max(ad.concat([s, ad.relu(a)], axis=1), axis=1)
        t = ad.take(ad.sum(s, axis=1), idx)
        return ad.sum(m * t) + ad.mean(ad.stack([s, a], axis=0))

    tape = Tape()
    a = tape.leaf(a0)
    out = build(tape, a)
    tape.backward(out)

    def f(x):
        return float(build(Tape(), Tape().leaf(x)).value)

    assert relative_error(a.grad, finite_diff_grad(f, a0)) <= 1e-6


def test_spectral_normalize_examples():
    p = affine_net(np.eye(2), np.zeros(2))
    p = MlpParams([2, 2, 1], [np.diag([3.0, 1.0]), np.ones((1, 2))], [np.zeros(2), np.zeros(1)],
                  spectral_norm=[True], power_u=[np.array([0.6, 0.8])],
                  power_v=[np.array([0.8, 0.6])])
    q = spectral_normalize(p, 20)
    assert np.allclose(q.weights[0], np.diag([1.0, 1 / 3]), atol=1e-3)
    assert abs(np.linalg.svd(q.weights[0], compute_uv=False)[0] - 1) < 1e-3
    small = p.copy()
    small.weights[0] = np.diag([0.5, 0.2])
    assert abs(np.linalg.norm(spectral_normalize(small, 20).weights[0], 2) - 1) < 1e-9
    zero = p.copy()
    zero.weights[0] = np.zeros((2, 2))
    assert np.array_equal(spectral_normalize(zero, 20).weights[0], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        spectral_normalize(p, 0)


def test_spectral_normalize_idempotent():
    # the second hidden layer has sigma_2/sigma_1 = 0.956, so 20 iterations are not
    # yet converged; idempotence holds once the estimate has converged
    p = mlp_init([4, 16, 16, 1], seed=5, spectral_norm=True)
    q = spectral_normalize(p, 100)
    r = spectral_normalize(q, 100)
    for a, b in zip(q.weights, r.weights):
        assert np.linalg.norm(a - b) <= 1e-3


def test_power_iterate_converges_to_top_singular_vectors():
    p = mlp_init([5, 7, 1], seed=9, spectral_norm=True)
    power_iterate(p, 200)
    W = p.weights[0]
    sig = p.power_u[0] @ W @ p.power_v[0]
    assert abs(sig - np.linalg.norm(W, 2)) < 1e-9


def test_adam_examples():
    st0 = AdamState.for_params([np.array(0.0)], learning_rate=1e-3)
    _, (p,) = adam_step(st0, [np.array(0.0)], [np.array(1.0)])
    assert abs(abs(p) - 1e-3) < 1e-6
    st1 = AdamState.for_params([np.ones(3)], learning_rate=1e-3)
    _, (p,) = adam_step(st1, [np.ones(3)], [np.zeros(3)])
    assert np.array_equal(p, np.ones(3)) and st1.step_count == 1
    st2 = AdamState.for_params([np.array(1.0)], learning_rate=3e-4, weight_decay=1e-3)
    _, (p,) = adam_step(st2, [np.array(1.0)], [np.array(0.0)])
    assert abs(p - (1 - 3e-7)) < 1e-15


def test_adam_errors():
    st0 = AdamState.for_params([np.zeros(2)], learning_rate=1e-3)
    with pytest.raises(NonFiniteGradient, match="w0"):
        adam_step(st0, [np.zeros(2)], [np.array([0.0, np.inf])], names=["w0"])
    with pytest.raises(ValueError):
        adam_step(st0, [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ValueError):
        AdamState(learning_rate=0.0)
    assert all(np.all(m == 0) for m in st0.first_moment + st0.second_moment)


def test_finite_diff_examples():
    assert abs(finite_diff_grad(lambda x: x ** 2, 3.0) - 6.0) < 1e-8
    assert np.all(finite_diff_grad(lambda x: 4.0, np.ones(3)) == 0)
    assert np.allclose(finite_diff_grad(lambda x: x @ x, np.array([1.0, 2.0])), [2, 4], atol=1e-7)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: x, 1.0, h=0)
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda x: np.nan, 1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 50.0))
def test_relu_output_nonnegative(seed, scale):
    p = mlp_init([3, 8, 4], output_activation="relu", seed=seed)
    x = np.random.default_rng(seed).uniform(-scale, scale, size=(256, 3))
    assert np.all(mlp_apply(p, x) >= 0)
