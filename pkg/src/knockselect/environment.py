"""The sequential keep/drop MDP and its unsupervised reward.

One episode walks the features once. After each decision the reward is

    total = r_mr + r_pi + r_rd

with r_mr the negated squared gap between autoencoder codes of the
current subset and of the full set, r_pi a decaying penalty for selecting
a knockoff-like (label 0) feature, and r_rd the summed |rho| between a
newly selected feature and its already-selected peers over d.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .agent import Agent, Decision, PolicyConfig
from .autoencoder import DescriptorBank, SubsetAutoencoder, encode, fine_tune, train_autoencoder
from .data import Dataset
from .knockoff import KnockoffResult, abs_corr_cross
from .nn import TrainConfig
from .seeding import stream


class RewardVariant(str, enum.Enum):
    COMPARE = "compare"
    RECONSTRUCT_ORIGINAL = "reconstruct-original"


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.9
    variant: RewardVariant = RewardVariant.COMPARE
    no_knockoff_reward: bool = False
    no_matrix_reward: bool = False
    random_reward: bool = False
    rmr_every_episode: bool = False
    finetune_steps: int = 20
    finetune_lr: float = 1e-3
    full_retrain: bool = False
    rmr_reduction: str = "sum"

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.rmr_reduction not in ("sum", "mean"):
            raise ValueError("rmr_reduction must be sum or mean")


@dataclass
class SelectionState:
    mask: np.ndarray
    index: int
    encoding: np.ndarray


@dataclass(frozen=True)
class RewardBreakdown:
    step: int
    feature: int
    action: int
    r_mr: float
    r_pi: float
    r_rd: float
    total: float
    tau: float
    time: int
    select_count: tuple
    p_choose: float
    r_random: float = 0.0


@dataclass
class EpisodeResult:
    mask: np.ndarray
    steps: List[RewardBreakdown]
    decisions: List[Decision]
    episode_return: float
    duration: float


def reward_knockoff(label: int, action: int, time: int, tau: float, p_choose: float) -> float:
    """-tau**time * a * (1 - label) * p_choose: only selecting a label-0 feature costs anything."""
    return -(tau ** time) * action * (1 - label) * p_choose


def reward_redundancy(abs_corr: np.ndarray, mask, index: int) -> float:
    """-(sum of |rho| to the other selected features) / d, applied when ``index`` is selected."""
    mask = np.asarray(mask, dtype=bool)
    if not mask[index]:
        return 0.0
    peers = mask.copy()
    peers[index] = False
    return -float(abs_corr[index, peers].sum()) / len(mask)


def redundancy_for_dataset(ds: Dataset, mask, index: int) -> float:
    return reward_redundancy(abs_corr_cross(ds.features, ds.features), mask, index)


def code_gap(code_sub: np.ndarray, code_full: np.ndarray) -> float:
    diff = np.asarray(code_sub) - np.asarray(code_full)
    return -float(diff @ diff)


def reward_matrix_reconstruction(bank: DescriptorBank, mask, full_ae: SubsetAutoencoder,
                                 subset_ae: SubsetAutoencoder) -> float:
    full = np.ones(bank.d, dtype=bool)
    return code_gap(encode(subset_ae, bank.descriptor(mask)), encode(full_ae, bank.descriptor(full)))


class MatrixReward:
    """r_mr for a mask, memoised: the subset AE is fine-tuned full-batch, so the value is a pure function of the mask."""

    def __init__(self, bank: DescriptorBank, full_ae: SubsetAutoencoder, cfg: RewardConfig,
                 retrain_cfg: Optional[TrainConfig] = None, reconstructor: Optional[SubsetAutoencoder] = None):
        self.bank = bank
        self.full_ae = full_ae
        self.cfg = cfg
        self.retrain_cfg = retrain_cfg
        self.reconstructor = reconstructor
        full = np.ones(bank.d, dtype=bool)
        self.full_descriptor = bank.descriptor(full)
        self.full_code = encode(full_ae, self.full_descriptor)
        self._cache = {}
        self.evaluations = 0

    def subset_autoencoder(self, mask) -> SubsetAutoencoder:
        samples = self.bank.bootstrap_descriptors(mask)
        if self.cfg.full_retrain:
            return train_autoencoder(samples, self.retrain_cfg, code=self.full_ae.code_size,
                                     hidden=self.full_ae.encoder.layers[0].n_out, trained_on="subset")
        return fine_tune(self.full_ae, samples, self.cfg.finetune_steps, self.cfg.finetune_lr)

    def __call__(self, mask) -> float:
        mask = np.asarray(mask, dtype=bool)
        key = mask.tobytes()
        if key not in self._cache:
            self.evaluations += 1
            if self.cfg.variant is RewardVariant.RECONSTRUCT_ORIGINAL:
                rec = self.reconstructor.decoder.predict(encode(self.reconstructor, self.bank.descriptor(mask)))
                value = code_gap(rec, self.full_descriptor)
                if self.cfg.rmr_reduction == "mean":
                    value /= self.bank.dim
            else:
                value = reward_matrix_reconstruction(self.bank, mask, self.full_ae, self.subset_autoencoder(mask))
                if self.cfg.rmr_reduction == "mean":
                    value /= self.full_ae.code_size
            self._cache[key] = value
        return self._cache[key]


class StateEncoder:
    """State vector = full-set AE code of the subset descriptor, then a one-hot feature index."""

    def __init__(self, bank: DescriptorBank, ae: SubsetAutoencoder):
        self.bank = bank
        self.ae = ae
        self.d = bank.d
        self._codes = {}

    @property
    def state_dim(self) -> int:
        return self.ae.code_size + self.d

    def code(self, mask) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        key = mask.tobytes()
        if key not in self._codes:
            self._codes[key] = encode(self.ae, self.bank.descriptor(mask))
        return self._codes[key]

    def encode(self, mask, index: Optional[int]) -> np.ndarray:
        onehot = np.zeros(self.d)
        if index is not None:
            onehot[index] = 1.0
        return np.concatenate([self.code(mask), onehot])


class SelectionEnv:
    """Feature-selection MDP over a target-free view of the data.

    ``select_count`` persists across episodes of one environment; it
    feeds the decaying knockoff penalty.
    """

    def __init__(self, ds: Dataset, kr: KnockoffResult, encoder: StateEncoder, matrix_reward: MatrixReward,
                 cfg: RewardConfig, seed: int = 0, shuffle_order: bool = False):
        self.ds = ds.without_target()
        self.d = ds.d
        self.labels = np.asarray(kr.labels, dtype=int)
        self.encoder = encoder
        self.matrix_reward = matrix_reward
        self.cfg = cfg
        self.abs_corr = abs_corr_cross(self.ds.features, self.ds.features)
        self.select_count = np.zeros(self.d, dtype=int)
        self.shuffle_order = shuffle_order
        self._order_rng = stream(seed, "visit-order")
        self._random_rng = stream(seed, "random-reward")
        self.order = np.arange(self.d)
        self.state: Optional[SelectionState] = None
        self.steps_taken = 0

    @property
    def current_feature(self) -> int:
        return int(self.order[self.state.index])

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.index >= self.d

    def _encoding(self, mask, index) -> np.ndarray:
        feature = int(self.order[index]) if index < self.d else None
        return self.encoder.encode(mask, feature)

    def reset(self) -> SelectionState:
        if self.shuffle_order:
            self.order = self._order_rng.permutation(self.d)
        mask = np.zeros(self.d, dtype=bool)
        self.state = SelectionState(mask, 0, self._encoding(mask, 0))
        return self.state

    def step(self, action: int, p_choose: float = 0.5):
        if self.state is None:
            raise RuntimeError("reset the environment before stepping")
        if self.done:
            raise RuntimeError("episode already terminal; call reset()")
        action = int(action)
        if action not in (0, 1):
            raise ValueError("action must be 0 or 1")
        feature = self.current_feature
        mask = self.state.mask.copy()
        mask[feature] = bool(action)
        index = self.state.index + 1
        terminal = index >= self.d
        prior = int(self.select_count[feature])
        if action == 1:
            self.select_count[feature] += 1

        r_mr = r_pi = r_rd = r_random = 0.0
        if self.cfg.random_reward:
            r_random = float(self._random_rng.uniform(-1.0, 1.0))
        else:
            if not self.cfg.no_matrix_reward and (terminal or not self.cfg.rmr_every_episode):
                r_mr = self.matrix_reward(mask)
            if not self.cfg.no_knockoff_reward:
                r_pi = reward_knockoff(int(self.labels[feature]), action, prior, self.cfg.tau, p_choose)
            r_rd = reward_redundancy(self.abs_corr, mask, feature)
        total = r_mr + r_pi + r_rd + r_random

        breakdown = RewardBreakdown(
            step=self.steps_taken, feature=feature, action=action, r_mr=r_mr, r_pi=r_pi, r_rd=r_rd,
            total=total, tau=self.cfg.tau, time=prior, select_count=tuple(int(c) for c in self.select_count),
            p_choose=float(p_choose), r_random=r_random,
        )
        self.steps_taken += 1
        self.state = SelectionState(mask, index, self._encoding(mask, index))
        return self.state, breakdown, terminal


def run_episode(agent: Agent, env: SelectionEnv, pol: PolicyConfig, learn: bool = True) -> EpisodeResult:
    t0 = time.perf_counter()
    state = env.reset()
    steps, decisions = [], []
    terminal = False
    while not terminal:
        feature = env.current_feature
        dec = agent.act(state.encoding, int(env.labels[feature]), pol)
        nxt, br, terminal = env.step(dec.action, dec.p_choose)
        agent.observe(state.encoding, dec.action, br.total, nxt.encoding, terminal, learn=learn)
        steps.append(br)
        decisions.append(dec)
        state = nxt
    return EpisodeResult(
        mask=state.mask.copy(),
        steps=steps,
        decisions=decisions,
        episode_return=float(sum(b.total for b in steps)),
        duration=time.perf_counter() - t0,
    )


def greedy_mask(agent: Agent, encoder: StateEncoder, order=None) -> np.ndarray:
    """Exploration-free pass with the learned Q; no rewards, no learning."""
    d = encoder.d
    order = np.arange(d) if order is None else order
    mask = np.zeros(d, dtype=bool)
    for feature in order:
        q = agent.q.q_values(encoder.encode(mask, int(feature)))
        mask[feature] = bool(np.argmax(q))
    return mask
