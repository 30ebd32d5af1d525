import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from knockselect.agent import (
    ActionSource, Agent, AgentConfig, PolicyConfig, QNetwork, ReplayBuffer, decay_policy, learn_step,
    pretrain, select_action, softmax, synthetic_states, agreement, td_targets,
)


def test_policy_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(eps_random=0.6, eps_label=0.5)
    with pytest.raises(ValueError):
        PolicyConfig(eps_random=-0.1)
    with pytest.raises(ValueError):
        PolicyConfig(decay=0.0)


def test_greedy_when_no_exploration():
    q = QNetwork(5, hidden=8, seed=0)
    rng = np.random.default_rng(0)
    pol = PolicyConfig(0.0, 0.0)
    for _ in range(50):
        s = rng.normal(size=5)
        dec = select_action(q, s, 1, pol, rng)
        assert dec.source is ActionSource.GREEDY
        assert dec.action == int(np.argmax(q.q_values(s)))
        assert 0 < dec.p_choose < 1
        assert dec.p_choose == pytest.approx(softmax(q.q_values(s))[dec.action])


def test_uniform_branch_is_fair():
    q = QNetwork(3, hidden=4, seed=0)
    rng = np.random.default_rng(1)
    s = np.ones(3)
    acts = [select_action(q, s, 0, PolicyConfig(1.0, 0.0), rng).action for _ in range(10_000)]
    assert abs(np.mean(acts) - 0.5) < 0.02


def test_five_five_ninety_mixture():
    q = QNetwork(3, hidden=4, seed=0)
    rng = np.random.default_rng(2)
    s = np.zeros(3)
    pol = PolicyConfig(0.05, 0.05)
    n = 100_000
    counts = {src: 0 for src in ActionSource}
    for _ in range(n):
        counts[select_action(q, s, 1, pol, rng).source] += 1
    obs = np.array([counts[ActionSource.RANDOM], counts[ActionSource.LABEL], counts[ActionSource.GREEDY]])
    assert np.all(np.abs(obs / n - [0.05, 0.05, 0.90]) <= 0.01)
    assert chisquare(obs, n * np.array([0.05, 0.05, 0.90])).pvalue > 0.01


def test_label_branch_follows_label():
    q = QNetwork(3, hidden=4, seed=0)
    rng = np.random.default_rng(3)
    for label in (0, 1):
        for _ in range(20):
            dec = select_action(q, np.zeros(3), label, PolicyConfig(0.0, 1.0), rng)
            assert dec.source is ActionSource.LABEL and dec.action == label


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 1000))
def test_argmax_invariant_to_constant_shift(shift, seed):
    q = QNetwork(4, hidden=6, seed=seed % 7)
    s = np.random.default_rng(seed).normal(size=4)
    base = select_action(q, s, 0, PolicyConfig(0, 0), np.random.default_rng(0)).action
    q.net.layers[-1].bias += shift
    shifted = select_action(q, s, 0, PolicyConfig(0, 0), np.random.default_rng(0)).action
    assert base == shifted


def test_decay_examples():
    pol = PolicyConfig(0.05, 0.05, decay=1.0)
    assert decay_policy(pol, 7) == pol
    half = decay_policy(PolicyConfig(0.05, 0.05, decay=0.5), 1)
    assert half.eps_random == pytest.approx(0.025) and half.eps_label == pytest.approx(0.025)
    late = decay_policy(PolicyConfig(0.05, 0.05, decay=0.7), 10)
    assert late.eps_random == pytest.approx(0.05 * 0.7 ** 10, rel=1e-12)
    assert abs(late.eps_random - 0.00141) < 5e-6
    floored = decay_policy(PolicyConfig(0.05, 0.05, decay=0.5, floor=0.01), 10)
    assert floored.eps_random == 0.01
    with pytest.raises(ValueError):
        decay_policy(pol, 0)


def test_replay_ring_and_sampling():
    buf = ReplayBuffer(4, 2)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))
    for i in range(7):
        buf.push([i, i], i % 2, float(i), [i + 1, i + 1], False)
    assert len(buf) == 4
    assert sorted(buf.rewards) == [3.0, 4.0, 5.0, 6.0]
    s, a, r, s2, t = buf.sample(4, np.random.default_rng(1))
    assert sorted(r) == [3.0, 4.0, 5.0, 6.0]  # without replacement
    assert np.array_equal(s[:, 0], r)


def test_gamma_zero_target_is_reward():
    q = QNetwork(3, hidden=4, seed=0)
    r = np.array([0.3, -1.0])
    s2 = np.random.default_rng(0).normal(size=(2, 3))
    assert np.array_equal(td_targets(q, r, s2, np.array([False, False]), 0.0), r)
    expect = r + 0.9 * q.target_net.predict(s2).max(axis=1)
    assert np.allclose(td_targets(q, r, s2, np.array([False, False]), 0.9), expect)
    assert np.array_equal(td_targets(q, r, s2, np.array([True, True]), 0.9), r)


def test_terminal_fixed_point():
    cfg = AgentConfig(batch=8)
    q = QNetwork(4, hidden=16, seed=1, lr=1e-2)
    buf = ReplayBuffer(32, 4)
    s = np.array([0.5, -0.2, 1.0, 0.0])
    for _ in range(16):
        buf.push(s, 1, 0.7, np.zeros(4), True)
    rng = np.random.default_rng(0)
    for _ in range(500):
        learn_step(q, buf, cfg, rng)
    assert abs(q.q_values(s)[1] - 0.7) < 0.01


def test_target_net_frozen_between_syncs():
    cfg = AgentConfig(batch=4)
    q = QNetwork(3, hidden=4, sync_interval=5, seed=0)
    buf = ReplayBuffer(16, 3)
    rng = np.random.default_rng(0)
    for _ in range(8):
        buf.push(rng.normal(size=3), int(rng.integers(2)), rng.normal(), rng.normal(size=3), False)
    frozen = [p.copy() for p in q.target_net.params()]
    for step in range(1, 5):
        learn_step(q, buf, cfg, rng)
        assert all(np.array_equal(a, b) for a, b in zip(frozen, q.target_net.params()))
    learn_step(q, buf, cfg, rng)
    assert all(np.array_equal(a, b) for a, b in zip(q.net.params(), q.target_net.params()))


def test_checkpoint_round_trip(tmp_path):
    q = QNetwork(5, hidden=6, seed=2)
    q.save(tmp_path / "q.json")
    back = QNetwork.load(tmp_path / "q.json")
    x = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(q.q_values(x), back.q_values(x))


def test_pretrain_all_ones(state_encoder):
    q = QNetwork(state_encoder.state_dim, seed=0)
    rep = pretrain(q, state_encoder, np.ones(6, int), AgentConfig(), seed=0)
    fresh, idx = synthetic_states(state_encoder, 6, 400, np.random.default_rng(99))
    assert agreement(q, fresh, idx, np.ones(6, int)) >= 0.95
    assert rep.n_states == 300


def test_pretrain_zero_epochs_is_noop(state_encoder):
    q = QNetwork(state_encoder.state_dim, seed=0)
    before = [p.copy() for p in q.net.params()]
    rep = pretrain(q, state_encoder, np.array([0, 1, 0, 1, 1, 0]), AgentConfig(pretrain_epochs=0), seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(before, q.net.params()))
    assert rep.agreement_before == rep.agreement_after
    assert 0.2 <= rep.agreement_after <= 0.8


@pytest.mark.parametrize("seed", range(5))
def test_pretrain_mixed_labels(state_encoder, seed):
    labels = np.array([0, 1, 1, 0, 1, 0])
    q = QNetwork(state_encoder.state_dim, seed=seed)
    rep = pretrain(q, state_encoder, labels, AgentConfig(), seed=seed)
    assert rep.agreement_after >= 0.8
    assert rep.agreement_after > rep.agreement_before


def test_agent_learns_only_after_batch_fills():
    agent = Agent.create(3, AgentConfig(batch=4), seed=0)
    for i in range(3):
        assert agent.observe(np.zeros(3), 0, 0.0, np.zeros(3), False) is None
    assert agent.observe(np.zeros(3), 0, 0.0, np.zeros(3), False) is not None
    assert agent.observe(np.zeros(3), 0, 0.0, np.zeros(3), False, learn=False) is None
    assert len(agent.td_losses) == 1
