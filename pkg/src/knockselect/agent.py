"""Single deep-Q agent: keep/drop decisions over one feature at a time.

Actions are ``0`` (drop) and ``1`` (select). The exploration policy mixes
three branches: a uniform coin flip with probability ``eps_random``, the
feature's knockoff pseudo label with probability ``eps_label``, and the
greedy Q action otherwise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional

import numpy as np

from .nn import Adam, DenseNet, NumericalError, flat_grads
from .seeding import stream

N_ACTIONS = 2


class ActionSource(str, enum.Enum):
    RANDOM = "random"
    LABEL = "label"
    GREEDY = "greedy"


@dataclass(frozen=True)
class PolicyConfig:
    eps_random: float = 0.05
    eps_label: float = 0.05
    decay: float = 0.9
    floor: float = 0.0

    def __post_init__(self):
        if self.eps_random < 0 or self.eps_label < 0 or self.eps_random + self.eps_label > 1:
            raise ValueError("need eps_random, eps_label >= 0 with eps_random + eps_label <= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    lr: float = 1e-3
    batch: int = 32
    buffer_capacity: int = 4096
    sync_interval: int = 50
    hidden: int = 64
    pretrain_epochs: int = 20
    pretrain_margin: float = 1.0
    pretrain_per_feature: int = 50
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 32

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")


class Decision(NamedTuple):
    action: int
    source: ActionSource
    p_choose: float
    q_values: np.ndarray


class QNetwork:
    """Online network, its periodically synced target copy, and the optimizer."""

    def __init__(self, state_dim: int, hidden: int = 64, sync_interval: int = 50, lr: float = 1e-3,
                 seed: int = 0):
        self.net = DenseNet.build([state_dim, hidden, hidden, N_ACTIONS], ["relu", "relu", "identity"], seed=seed)
        self.target_net = self.net.copy()
        self.sync_interval = sync_interval
        self.optimizer = Adam(lr)
        self.learn_steps = 0

    @property
    def state_dim(self) -> int:
        return self.net.n_in

    def q_values(self, state) -> np.ndarray:
        return self.net.predict(state)

    def sync(self) -> None:
        self.target_net.load_params_from(self.net)

    def save(self, path) -> None:
        self.net.save(path)

    @classmethod
    def load(cls, path, sync_interval: int = 50, lr: float = 1e-3) -> "QNetwork":
        net = DenseNet.load(path)
        if net.n_out != N_ACTIONS:
            raise ValueError(f"checkpoint has {net.n_out} outputs, expected {N_ACTIONS}")
        q = cls.__new__(cls)
        q.net, q.target_net = net, net.copy()
        q.sync_interval, q.optimizer, q.learn_steps = sync_interval, Adam(lr), 0
        return q


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, state, action, reward, next_state, terminal) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminal[i] = terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminal[idx]


def softmax(q: np.ndarray) -> np.ndarray:
    z = np.exp(q - q.max())
    return z / z.sum()


def select_action(q: QNetwork, state, label: int, pol: PolicyConfig, rng: np.random.Generator) -> Decision:
    """Three-branch epsilon-greedy; ``p_choose`` is softmax(Q)[action], kept inside (0, 1)."""
    qv = q.q_values(state)
    u = rng.random()
    if u < pol.eps_random:
        action, source = int(rng.integers(N_ACTIONS)), ActionSource.RANDOM
    elif u < pol.eps_random + pol.eps_label:
        action, source = int(label), ActionSource.LABEL
    else:
        action, source = int(np.argmax(qv)), ActionSource.GREEDY
    p = float(np.clip(softmax(qv)[action], 1e-12, 1.0 - 1e-12))
    return Decision(action, source, p, qv)


def decay_policy(pol: PolicyConfig, episode: int) -> PolicyConfig:
    """Both epsilons scaled by ``decay ** episode`` and clamped at ``floor``."""
    if episode < 1:
        raise ValueError("episode counts from 1")
    f = pol.decay ** episode
    return replace(pol, eps_random=max(pol.eps_random * f, pol.floor), eps_label=max(pol.eps_label * f, pol.floor))


def td_targets(q: QNetwork, rewards, next_states, terminal, gamma: float) -> np.ndarray:
    nxt = q.target_net.predict(next_states).max(axis=1)
    return rewards + gamma * np.where(terminal, 0.0, nxt)


def learn_step(q: QNetwork, buf: ReplayBuffer, cfg: AgentConfig, rng: np.random.Generator) -> float:
    """One Adam step on the mean squared TD error of a uniformly sampled batch."""
    s, a, r, s2, done = buf.sample(cfg.batch, rng)
    y = td_targets(q, r, s2, done, cfg.gamma)
    pred = q.net.forward(s)
    rows = np.arange(len(a))
    err = pred[rows, a] - y
    grad = np.zeros_like(pred)
    grad[rows, a] = 2.0 * err / len(a)
    q.optimizer.step(q.net.params(), flat_grads(q.net.backward(grad)))
    loss = float(np.mean(err * err))
    if not np.isfinite(loss) or not q.net.all_finite():
        raise NumericalError(f"TD loss diverged at learn step {q.learn_steps}")
    q.learn_steps += 1
    if q.learn_steps % q.sync_interval == 0:
        q.sync()
    return loss


@dataclass
class PretrainReport:
    n_states: int
    agreement_before: float
    agreement_after: float
    loss_trace: List[float] = field(default_factory=list)


def synthetic_states(encoder, d: int, n_states: int, rng: np.random.Generator):
    """Random masks of uniform random density, cycling the feature index."""
    states = np.empty((n_states, encoder.state_dim))
    index = np.empty(n_states, dtype=int)
    for k in range(n_states):
        i = k % d
        mask = rng.random(d) < rng.random()
        states[k] = encoder.encode(mask, i)
        index[k] = i
    return states, index


def agreement(q: QNetwork, states, index, labels) -> float:
    greedy = np.argmax(q.net.predict(states), axis=1)
    return float(np.mean(greedy == np.asarray(labels)[index]))


def pretrain(q: QNetwork, encoder, labels, cfg: AgentConfig, seed: int = 0) -> PretrainReport:
    """Supervised warm start: push Q(s, label_i) to +margin and the other action to -margin.

    ``encoder`` supplies ``encode(mask, index)``, ``state_dim`` and ``d``.
    Agreement is the argmax hit rate on a held-out synthetic state set.
    """
    labels = np.asarray(labels, dtype=int)
    d = len(labels)
    n_states = cfg.pretrain_per_feature * d
    train_s, train_i = synthetic_states(encoder, d, n_states, stream(seed, "pretrain-train"))
    test_s, test_i = synthetic_states(encoder, d, n_states, stream(seed, "pretrain-heldout"))
    before = agreement(q, test_s, test_i, labels)

    m = cfg.pretrain_margin
    targets = np.where(np.eye(N_ACTIONS)[labels[train_i]] == 1, m, -m)
    opt = Adam(cfg.pretrain_lr)
    rng = stream(seed, "pretrain-batches")
    trace = []
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(n_states)
        losses = []
        for start in range(0, n_states, cfg.pretrain_batch):
            idx = order[start:start + cfg.pretrain_batch]
            pred = q.net.forward(train_s[idx])
            diff = pred - targets[idx]
            losses.append(float(np.mean(diff * diff)))
            opt.step(q.net.params(), flat_grads(q.net.backward(2.0 * diff / diff.size)))
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise NumericalError(f"pretraining diverged at epoch {epoch}")
        trace.append(loss)
    q.sync()
    return PretrainReport(n_states, before, agreement(q, test_s, test_i, labels), trace)


@dataclass
class Agent:
    q: QNetwork
    buffer: ReplayBuffer
    cfg: AgentConfig
    rng: np.random.Generator
    td_losses: List[float] = field(default_factory=list)

    @classmethod
    def create(cls, state_dim: int, cfg: AgentConfig, seed: int = 0) -> "Agent":
        q = QNetwork(state_dim, cfg.hidden, cfg.sync_interval, cfg.lr, seed=int(stream(seed, "qnet-init").integers(1 << 31)))
        return cls(q, ReplayBuffer(cfg.buffer_capacity, state_dim), cfg, stream(seed, "agent"))

    def act(self, state, label: int, pol: PolicyConfig) -> Decision:
        return select_action(self.q, state, label, pol, self.rng)

    def observe(self, state, action, reward, next_state, terminal, learn: bool = True) -> Optional[float]:
        self.buffer.push(state, action, reward, next_state, terminal)
        if learn and len(self.buffer) >= self.cfg.batch:
            loss = learn_step(self.q, self.buffer, self.cfg, self.rng)
            self.td_losses.append(loss)
            return loss
        return None
