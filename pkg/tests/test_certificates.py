import numpy as np
import pytest

from netcert.certificates import (DecentralizedPolicy, IssCertificate, PortError,
                                  bundle_controls, bundle_v, certificate_values, gain_eval,
                                  network_values, new_bundle, policy_eval, port_certificate,
                                  v_eval, v_grad, validate_bundle_for_env)
from netcert.diffcore import finite_diff_grad, mlp_init, relative_error
from netcert.environments import EnvConfigError, make_env, resized_config


def zero_like(cert):
    c = IssCertificate(cert.S * 0, cert.p_net.copy(), cert.q_net.copy(), 0.0, 1.0,
                       np.eye(cert.dim))
    c.p_net.set_arrays([a * 0 for a in c.p_net.arrays()])
    c.q_net.set_arrays([a * 0 for a in c.q_net.arrays()])
    return c


@pytest.fixture(scope="module")
def platoon():
    return make_env({"kind": "platoon"})


@pytest.fixture(scope="module")
def bundle(platoon):
    return new_bundle(platoon, hidden=(16, 16), seed=3)


def test_v_eval_examples(bundle):
    cert = zero_like(bundle.certificates[0])
    assert v_eval(cert, np.array([0.3, -2.0, 1.0])) == 0
    cert2 = zero_like(make_env({"kind": "microgrid"}) and new_bundle(
        make_env({"kind": "microgrid"}), hidden=(4,)).certificates[0])
    cert2.S = np.eye(2)
    assert v_eval(cert2, np.array([3.0, 4.0])) == 25.0
    assert np.allclose(v_grad(cert2, np.array([3.0, 4.0])), [6.0, 8.0])
    assert np.all(v_grad(cert, np.array([0.3, -2.0, 1.0])) == 0)
    with pytest.raises(ValueError):
        v_eval(cert2, np.zeros(3))


@pytest.mark.parametrize("seed", range(5))
def test_v_grad_matches_finite_differences(platoon, seed):
    b = new_bundle(platoon, hidden=(16, 16), seed=seed)
    rng = np.random.default_rng(seed)
    for g in b.groups:
        cert = b.certificates[g]
        for a in cert.arrays():
            a += rng.uniform(-0.2, 0.2, size=a.shape)
        x = rng.uniform([0, 0, 0], [2, 2, 4])
        assert relative_error(v_grad(cert, x), finite_diff_grad(lambda z: v_eval(cert, z), x)) <= 1e-4


def test_analytic_lie_derivative_matches_gradient(platoon, bundle):
    rng = np.random.default_rng(0)
    X, beta = platoon.sample_states(8, rng)
    out = network_values(bundle, platoon, X, beta, lie="analytic")
    U = bundle_controls(bundle, X)
    F = platoon.derivative(X, U, beta)
    for b in range(8):
        for i in range(platoon.n):
            cert = bundle.certificates[bundle.group_of(i)]
            assert abs(out["lie"][b, i] - v_grad(cert, X[b, i]) @ F[b, i]) < 1e-10
    assert np.allclose(out["V"], bundle_v(bundle, X))


def test_gain_examples():
    assert gain_eval(0.0, 2.0) == 1.0
    assert gain_eval(3.7, 0.0) == 0.0
    rng = np.random.default_rng(0)
    k = rng.uniform(-20, 20, 100000)
    a = rng.uniform(1e-3, 100, 100000)
    chi = gain_eval(k, a)
    assert np.all(chi > 0) and np.all(chi < a)


def test_policy_examples():
    net = mlp_init([3, 4, 1])
    net.set_arrays([a * 0 for a in net.arrays()])
    pol = DecentralizedPolicy(net, np.array([-1.0]), np.array([3.0]))
    assert policy_eval(pol, np.array([0.2, 5.0, -1.0])).tolist() == [1.0]
    big = mlp_init([3, 4, 1], seed=1)
    big.set_arrays([a * 1000 for a in big.arrays()])
    pol = DecentralizedPolicy(big, np.array([-5.0]), np.array([5.0]))
    u = policy_eval(pol, np.random.default_rng(0).uniform(-3, 3, size=(1000, 3)))
    assert np.all(np.abs(u) <= 5)
    x = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(policy_eval(pol, x), policy_eval(pol, x))


@pytest.mark.parametrize("kind", ["platoon", "drone", "microgrid"])
def test_v_nonnegative_over_box(kind):
    env = make_env({"kind": kind})
    b = new_bundle(env, hidden=(16, 16), seed=1)
    X, _ = env.sample_states(20000, np.random.default_rng(0))
    assert np.min(bundle_v(b, X)) >= 0


def test_shared_groups_evaluate_identically(platoon, bundle):
    X = np.tile(np.array([0.4, 1.3, 2.2]), (1, platoon.n, 1))
    V = bundle_v(bundle, X)[0]
    assert V[1] == V[2] == V[3] and V[0] == V[4]
    b2 = bundle.copy()
    b2.certificates[1].S = b2.certificates[1].S * 2
    V2 = bundle_v(b2, X)[0]
    assert V2[1] == V2[2] == V2[3] and V2[0] == V[0]


def test_port_platoon_5_to_100(platoon, bundle):
    big = make_env(resized_config(platoon, n=100))
    ported = port_certificate(bundle, platoon, big)
    assert ported.topology.share_group == [0] + [1] * 98 + [0]
    for g in (0, 1):
        for a, b in zip(ported.certificates[g].arrays(), bundle.certificates[g].arrays()):
            assert np.array_equal(a, b)
    rng = np.random.default_rng(0)
    x = rng.uniform([0, 0, 0], [2, 2, 4], size=(100, 3))
    Vb = bundle_v(ported, x)
    Ub = bundle_controls(ported, x)
    for j in (0, 1, 50, 99):
        g = 0 if j in (0, 99) else 1
        # parameters are bitwise identical; batched BLAS may reorder sums by an ulp
        assert abs(Vb[j] - v_eval(bundle.certificates[g], x[j])) <= 1e-12
        assert np.allclose(Ub[j], policy_eval(bundle.policies[g], x[j]), atol=1e-12)
    maps = ported.meta["port_maps"]
    # tau maps respect neighbour roles: 0->0, 1->1, interior->2, 98->3, 99->4
    assert [m["source"] for m in maps] == [0, 1] + [2] * 96 + [3, 4]


def test_port_identity_is_bitwise(platoon, bundle):
    same = port_certificate(bundle, platoon, make_env({"kind": "platoon"}))
    assert same.meta == bundle.meta and same.topology.share_group == bundle.topology.share_group
    for g in bundle.groups:
        for a, b in zip(same.certificates[g].arrays(), bundle.certificates[g].arrays()):
            assert np.array_equal(a, b)


def test_port_drone_2x2_to_10x10():
    env = make_env({"kind": "drone"})
    b = new_bundle(env, hidden=(8,), seed=0)
    big = make_env(resized_config(env, n=100))
    ported = port_certificate(b, env, big)
    assert set(ported.topology.share_group) == {0} and ported.topology.n == 100


def test_port_errors(platoon):
    per_node = make_env({"kind": "platoon", "share_groups": "per_node"})
    b = new_bundle(per_node, hidden=(4,), seed=0)
    with pytest.raises(PortError, match="sharing pattern"):
        port_certificate(b, per_node, make_env({"kind": "platoon", "n": 20}))
    drone = make_env({"kind": "drone"})
    with pytest.raises(PortError, match="kind"):
        port_certificate(new_bundle(platoon, hidden=(4,)), platoon, drone)
    with pytest.raises(EnvConfigError):
        validate_bundle_for_env(new_bundle(platoon, hidden=(4,)), make_env({"kind": "platoon", "n": 7}))


def test_certificate_values_tangent_consistent(bundle):
    cert = bundle.certificates[1]
    rng = np.random.default_rng(5)
    Z = rng.uniform(-1, 2, size=(6, 3))
    T = rng.standard_normal((6, 3))
    V, dV = certificate_values(cert, Z, tangent=T)
    h = 1e-6
    fd = (certificate_values(cert, Z + h * T) - certificate_values(cert, Z - h * T)) / (2 * h)
    assert np.allclose(dV, fd, atol=1e-7)
    assert np.allclose(V, certificate_values(cert, Z))


def test_v_grad_batch_matches_single_points(bundle):
    cert = bundle.certificates[1]
    X = np.random.default_rng(6).uniform([0, 0, 0], [2, 2, 4], size=(7, 3))
    G = v_grad(cert, X, bundle.goal_offset[1])
    for x, g in zip(X, G):
        assert np.allclose(g, v_grad(cert, x, bundle.goal_offset[1]), atol=1e-13)
