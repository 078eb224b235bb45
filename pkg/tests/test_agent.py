import numpy as np
import pytest
from scipy import stats

from graphpoison import agent
from graphpoison.agent import AgentConfig, Trajectory
from graphpoison.nn import finite_diff_check
from graphpoison.rng import stream


def _uniform_draws(policy, state, n, seed=0):
    rng = stream(seed)
    return np.array([agent.select_action(policy, state, rng)[0] for _ in range(n)])


def test_zero_weights_uniform():
    policy = agent.init_policy(10, 6, hidden=8, seed=0)
    assert np.allclose(agent.action_probs(policy, np.ones(10)), 1 / 6)
    a, logp = agent.select_action(policy, np.ones(10), stream(0))
    assert 0 <= a < 6 and logp == pytest.approx(-np.log(6))


def test_dominant_logit():
    policy = agent.init_policy(4, 5, hidden=3)
    policy.params["layer2_bias"].value[0, 0] = 100.0
    draws = _uniform_draws(policy, np.zeros(4), 200)
    assert np.all(draws == 0)


def test_sampling_frequencies():
    policy = agent.init_policy(4, 5, hidden=3)
    policy.params["layer2_bias"].value[0] = [1.0, 0.5, 0.0, -0.5, -1.0]
    probs = agent.action_probs(policy, np.zeros(4))
    n = 100_000
    rng = stream(5)
    counts = np.zeros(5)
    for _ in range(n):
        counts[agent.select_action(policy, np.zeros(4), rng)[0]] += 1
    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) <= 3 * sigma)


def test_random_select():
    rng = stream(0)
    assert all(agent.random_select(1, rng) == 0 for _ in range(10))
    draws = np.array([agent.random_select(7, rng) for _ in range(100_000)])
    _, p = stats.chisquare(np.bincount(draws, minlength=7))
    assert p > 0.01
    a = [agent.random_select(9, stream(3)) for _ in range(3)]
    assert a == [agent.random_select(9, stream(3)) for _ in range(3)]
    with pytest.raises(ValueError):
        agent.random_select(0, rng)


def test_returns():
    assert np.allclose(agent.compute_returns([1, 0, 1], 0.99, standardize=False), [1.9801, 0.99, 1.0])
    assert np.allclose(agent.compute_returns([0.3, -0.2], 0.0, standardize=False), [0.3, -0.2])
    # equal returns standardise to zero; with gamma > 0 constant rewards give unequal returns
    assert np.array_equal(agent.compute_returns([0.5] * 4, 0.0), np.zeros(4))
    assert np.array_equal(agent.compute_returns([0.0] * 4, 0.99), np.zeros(4))
    g = agent.compute_returns([1, 0, 1, 2], 0.99)
    assert abs(g.mean()) < 1e-12 and g.std() == pytest.approx(1.0)


def test_running_normalisation():
    st = agent.RunningReturnStats()
    first = agent.normalized_returns([1.0, 0.0], 0.5, "running", st)
    assert np.array_equal(first, np.zeros(2))
    second = agent.normalized_returns([2.0, 0.0], 0.5, "running", st)
    assert np.allclose(second, [1.0, 0.0])
    assert np.array_equal(agent.normalized_returns([1.0, 1.0], 0.5, "none"), [1.5, 1.0])


def test_zero_returns_leave_policy():
    policy = agent.init_policy(6, 3, hidden=4, zero_head=False)
    before = {k: p.value.copy() for k, p in policy.params.items()}
    traj = Trajectory()
    for t in range(3):
        traj.add(np.ones(6) * t, t, -1.0, 0.0)
    agent.policy_update(policy, traj, 0.99)
    assert all(np.array_equal(before[k], policy.params[k].value) for k in before)


@pytest.mark.parametrize("arch, state_dim, n_actions", [("mlp", 20, 7), ("shared", 20, 8)])
def test_policy_gradient_matches_finite_differences(arch, state_dim, n_actions):
    policy = agent.init_policy(state_dim, n_actions, hidden=6, zero_head=False, arch=arch, seed=2)
    rng = np.random.default_rng(0)
    for p in policy.params.values():
        p.value[:] = rng.normal(scale=0.5, size=p.shape)
    states = rng.normal(size=(4, state_dim))
    actions = rng.integers(n_actions, size=4)
    weights = rng.normal(size=4)

    def f():
        policy.zero_grad()
        loss = agent.policy_objective(policy, states, actions, weights)
        return loss, {k: p.grad.copy() for k, p in policy.params.items()}

    assert finite_diff_check(f, {k: p.value for k, p in policy.params.items()}) < 1e-4


def test_positive_returns_raise_probability():
    policy = agent.init_policy(3, 2, hidden=4)
    s = np.array([0.5, -1.0, 2.0])
    prev = agent.action_probs(policy, s)[1]
    for _ in range(20):
        traj = Trajectory()
        traj.add(s, 1, 0.0, 1.0)
        agent.policy_update(policy, traj, returns=np.array([1.0]))
        cur = agent.action_probs(policy, s)[1]
        assert cur > prev
        prev = cur


@pytest.mark.parametrize("norm", ["episode", "running", "none"])
def test_bandit_learns(norm):
    """Two arms paying +1 and -1; five pulls per episode."""
    ag = agent.Agent(AgentConfig(hidden=16, return_norm=norm, arch="mlp"), 2, 2, seed=0)
    state = np.array([1.0, 0.0])
    for _ in range(200):
        traj = Trajectory()
        for _ in range(5):
            a, logp = ag.act(state)
            traj.add(state, a, logp, 1.0 if a == 1 else -1.0)
        ag.learn(traj)
    assert agent.action_probs(ag.policy, state)[1] > 0.9


def test_shared_policy_is_equivariant():
    policy = agent.init_policy(15, 6, hidden=5, arch="shared", zero_head=False, seed=1)
    s = np.random.default_rng(2).normal(size=(3, 5))
    perm = [2, 0, 1]
    p1 = agent.action_probs(policy, s.reshape(-1)).reshape(2, 3)
    p2 = agent.action_probs(policy, s[perm].reshape(-1)).reshape(2, 3)
    assert np.allclose(p1[:, perm], p2)


def test_policy_save_load(tmp_path):
    policy = agent.init_policy(10, 2, hidden=4, arch="shared", zero_head=False)
    agent.save_policy(policy, tmp_path / "p")
    back = agent.load_policy(tmp_path / "p")
    s = np.arange(10.0)
    assert np.array_equal(agent.action_probs(back, s), agent.action_probs(policy, s))


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(kind="greedy")
    with pytest.raises(ValueError):
        AgentConfig(return_norm="batch")
    with pytest.raises(ValueError):
        agent.init_policy(4, 2, arch="conv")
