import numpy as np
import pytest

from netcert.certificates import new_bundle
from netcert.environments import make_env
from netcert.evaluation import PolicyController, RolloutTrace, rollout
from netcert.verification import (GridTooLarge, affineness_residual, check_at_weights,
                                  check_certificate, check_robust_vertices, classify_states,
                                  grid_points, implication_oracle, monitor_composed_v,
                                  sampled_violations_on_grid)


@pytest.fixture(scope="module")
def env():
    return make_env({"kind": "platoon", "n": 2})


def zero_bundle(env):
    b = new_bundle(env, hidden=(4,), seed=0)
    for c in b.certificates.values():
        c.set_arrays([a * 0 for a in c.arrays()])
    return b


def perturbed_bundle(env, seed, scale=0.3):
    b = new_bundle(env, hidden=(6,), seed=seed)
    rng = np.random.default_rng(seed)
    for g in b.groups:
        c = b.certificates[g]
        c.set_arrays([a + rng.uniform(-scale, scale, size=a.shape) for a in c.arrays()])
        c.gain_k = float(rng.uniform(-2, 2))
    return b


def test_zero_certificate_never_violates(env):
    rep = check_certificate(zero_bundle(env), env, n_samples=2000)
    assert rep.premise_rate == [1.0] * env.n
    assert rep.implication_violation_rate == [0.0] * env.n and rep.counterexamples == []
    assert rep.goal_zero_mean == 0.0
    assert implication_oracle(zero_bundle(env), env, 2) == set()


def test_report_fields_and_json(env):
    rep = check_certificate(perturbed_bundle(env, 0), env, n_samples=3000, seed=1)
    assert all(0 <= r <= 1 for r in rep.implication_violation_rate + rep.premise_rate)
    d = rep.to_dict()
    assert {"implication_violation_rate", "goal_zero_mean", "positivity_min",
            "unchecked_assumptions"} <= set(d)
    assert '"implication_violation_rate"' in rep.to_json()
    assert "node 0" in rep.summary()
    with pytest.raises(ValueError):
        check_certificate(zero_bundle(env), env, n_samples=0)
    with pytest.raises(ValueError):
        check_certificate(zero_bundle(env), env, m_B=-1.0)


def test_counterexamples_reproduce_bitwise(env):
    b = perturbed_bundle(env, 1, scale=1.0)
    rep = check_certificate(b, env, n_samples=5000, seed=2)
    assert rep.counterexamples
    for c in rep.counterexamples:
        X = np.array(c["state"])[None]
        _, viol, res, _ = classify_states(b, env, X, np.array(c["beta"])[None])
        assert viol[0, c["node"]] and res[0, c["node"]] == c["residual"]


def test_unconditional_rate_consistent(env):
    rep = check_certificate(perturbed_bundle(env, 2, scale=1.0), env, n_samples=4000)
    for cond, unc, prem in zip(rep.implication_violation_rate, rep.unconditional_violation_rate,
                               rep.premise_rate):
        assert abs(unc - cond * prem) < 1e-12


def test_margins_are_monotone(env):
    b = perturbed_bundle(env, 3, scale=1.0)
    X, beta = env.sample_states(4000, np.random.default_rng(0))
    prev = None
    for m in (0.0, 0.1, 1.0, 10.0):
        rep = check_certificate(b, env, states=(X, beta), m_B=m)
        total = sum(rep.unconditional_violation_rate)
        if prev is not None:
            assert total <= prev
        prev = total
    prev = None
    for m in (0.0, 0.5, 5.0):
        # a larger m_A widens the premise; violations can only grow
        _, viol, _, _ = classify_states(b, env, X, beta, m_A=m)
        if prev is not None:
            assert np.all(viol >= prev)
        prev = viol


def test_grid_examples(env):
    X = grid_points(env, 1)
    assert X.shape == (1, env.n, 3)
    assert np.allclose(X[0], env.train_box.center)
    assert grid_points(env, 2).shape == (2 ** 6, env.n, 3)
    with pytest.raises(GridTooLarge):
        grid_points(make_env({"kind": "platoon"}), 3)
    with pytest.raises(ValueError):
        grid_points(env, 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_oracle_equivalence(env, seed):
    b = perturbed_bundle(env, 10 + seed, scale=1.0)
    spec = {"points_per_axis": [[3, 3, 4], [3, 3, 4]], "beta": [1.5]}
    oracle = implication_oracle(b, env, spec)
    assert 0 < len(oracle) < 2 * 36 * 36
    assert oracle == sampled_violations_on_grid(b, env, spec)


def test_affineness_platoon(env):
    assert affineness_residual(make_env({"kind": "platoon"})) <= 1e-12
    assert affineness_residual(make_env({"kind": "microgrid"})) == 0.0


def test_robust_vertices(env):
    b = perturbed_bundle(env, 4, scale=1.0)
    rep = check_robust_vertices(b, env, n_samples=2000, n_interior=3)
    assert len(rep["vertex_reports"]) == env.uncertainty_vertices.shape[0]
    assert len(rep["interior_reports"]) == 3
    assert rep["affineness_residual"] <= 1e-12
    # weight one on the first vertex reproduces the first vertex report
    first = check_at_weights(b, env, [1.0, 0.0], n_samples=2000, seed=0)
    assert first.to_dict() == rep["vertex_reports"][0]


def test_robust_single_vertex_notice():
    env = make_env({"kind": "microgrid"})
    b = new_bundle(env, hidden=(4,), seed=0)
    rep = check_robust_vertices(b, env, n_samples=100)
    assert "notice" in rep and len(rep["vertex_reports"]) == 1


def _trace(values, dist=None):
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    dist = np.ones((T, n)) if dist is None else np.asarray(dist, dtype=float)
    return RolloutTrace(np.zeros((T, n, 3)), np.zeros((T, 1)), np.zeros((T - 1, n, 1)), dist,
                        values, np.zeros(T - 1), 0.01)


def test_monitor_examples():
    out = monitor_composed_v(_trace([[3, 1], [2, 2], [1, 0]]))
    assert out["composed_v"] == [3, 2, 1] and out["decrease_fraction"] == 1.0
    assert out["max_increase"] == 0.0
    const = monitor_composed_v(_trace([[0.5, 0.2]] * 4, dist=np.zeros((4, 2))))
    assert const["composed_v"] == [0.5] * 4 and const["decrease_fraction"] == 1.0
    up = monitor_composed_v(_trace([[1, 0], [2, 0], [1.5, 0]]))
    assert up["decrease_fraction"] == 0.5 and up["max_increase"] == 1.0
    with pytest.raises(ValueError):
        monitor_composed_v(_trace([[1, 0]]))


def test_monitor_cross_checks_recorded_values(env):
    b = new_bundle(env, hidden=(8,), seed=0)
    tr = rollout(env, PolicyController(b), seed=0, bundle=b, horizon=50)
    out = monitor_composed_v(tr, b)
    assert out["trace_consistency"] == 0.0
