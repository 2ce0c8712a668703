"""Layered finite-horizon MDPs with exact enumeration and DP oracles.

Every state belongs to exactly one time step (``layer_of``), transitions go
from layer t to layer t+1, and states of the last layer ``horizon`` move to
an implicit absorbing terminal on which every value function is 0. Rewards
are finite-support distributions so that the full trajectory law, reward
noise included, can be enumerated.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator

import numpy as np

from .policy import SoftmaxPolicy

PROB_ATOL = 1e-12
DEFAULT_ENUM_CAP = 10**7
ENUM_CAP_ENV = "PGOPE_ENUM_CAP"


class MdpValidationError(ValueError):
    pass


class EnumerationLimitError(RuntimeError):
    pass


def enumeration_cap() -> int:
    value = os.environ.get(ENUM_CAP_ENV)
    return int(value) if value else DEFAULT_ENUM_CAP


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Layered tabular MDP.

    ``transitions`` is an (S, A, S) array; rows of last-layer states are all
    zero (they lead to the implicit terminal). Rewards are stored as padded
    (S, A, K) value/probability arrays.
    """

    num_states: int
    num_actions: int
    horizon: int
    gamma: float
    start_state: int
    layer_of: np.ndarray
    transitions: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray

    def __post_init__(self):
        for name in ("layer_of", "transitions", "reward_values", "reward_probs"):
            arr = np.array(getattr(self, name), dtype=int if name == "layer_of" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self) -> None:
        S, A, T = self.num_states, self.num_actions, self.horizon
        if S < 1 or A < 1 or T < 0:
            raise MdpValidationError(f"bad sizes: num_states={S}, num_actions={A}, horizon={T}")
        if not 0.0 < self.gamma <= 1.0:
            raise MdpValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.start_state < S:
            raise MdpValidationError(f"start_state {self.start_state} out of range")
        if self.layer_of.shape != (S,):
            raise MdpValidationError(f"layer_of must have length {S}")
        if np.any(self.layer_of < 0) or np.any(self.layer_of > T):
            raise MdpValidationError("layer_of entries must lie in 0..horizon")
        if self.layer_of[self.start_state] != 0:
            raise MdpValidationError("start_state must be in layer 0")
        if self.transitions.shape != (S, A, S):
            raise MdpValidationError(f"transitions must have shape {(S, A, S)}")
        if self.reward_values.ndim != 3 or self.reward_values.shape[:2] != (S, A):
            raise MdpValidationError("reward arrays must have shape (S, A, K)")
        if self.reward_probs.shape != self.reward_values.shape:
            raise MdpValidationError("reward_values and reward_probs shapes differ")
        if not np.all(np.isfinite(self.reward_values)):
            raise MdpValidationError("reward values must be finite")
        for s in range(S):
            layer = self.layer_of[s]
            for a in range(A):
                p_next = self.transitions[s, a]
                if np.any(p_next < 0):
                    raise MdpValidationError(f"negative transition probability at (s={s}, a={a})")
                if layer == T:
                    if np.any(p_next != 0):
                        raise MdpValidationError(
                            f"last-layer state at (s={s}, a={a}) must lead only to the terminal")
                else:
                    if abs(p_next.sum() - 1.0) > PROB_ATOL:
                        raise MdpValidationError(
                            f"transition probabilities at (s={s}, a={a}) sum to {p_next.sum()!r}")
                    bad = np.flatnonzero((p_next > 0) & (self.layer_of != layer + 1))
                    if bad.size:
                        raise MdpValidationError(
                            f"(s={s}, a={a}) reaches state {bad[0]} outside layer {layer + 1}")
                p_r = self.reward_probs[s, a]
                if np.any(p_r < 0) or abs(p_r.sum() - 1.0) > PROB_ATOL:
                    raise MdpValidationError(
                        f"reward probabilities at (s={s}, a={a}) are not a distribution")

    # derived tables

    @cached_property
    def expected_reward(self) -> np.ndarray:
        return (self.reward_values * self.reward_probs).sum(axis=-1)

    @cached_property
    def reward_variance(self) -> np.ndarray:
        centered = self.reward_values - self.expected_reward[..., None]
        return (self.reward_probs * centered**2).sum(axis=-1)

    def states_in_layer(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.layer_of == t)

    @property
    def is_deterministic(self) -> bool:
        """True when every transition and reward distribution is a point mass."""
        nonfinal = self.layer_of < self.horizon
        point_next = np.all(np.isclose(self.transitions[nonfinal].max(axis=-1), 1.0, atol=PROB_ATOL, rtol=0))
        return bool(point_next and np.all(self.reward_variance == 0))

    def check_policy(self, policy: SoftmaxPolicy) -> None:
        if (policy.num_states, policy.num_actions) != (self.num_states, self.num_actions):
            raise ValueError(
                f"policy has shape ({policy.num_states}, {policy.num_actions}), "
                f"MDP has ({self.num_states}, {self.num_actions})")

    # serialization

    def to_dict(self) -> dict:
        transitions, rewards = [], []
        for s in range(self.num_states):
            for a in range(self.num_actions):
                if self.layer_of[s] < self.horizon:
                    nxt = np.flatnonzero(self.transitions[s, a] > 0)
                    transitions.append({"s": s, "a": a, "next": [
                        {"state": int(j), "p": float(self.transitions[s, a, j])} for j in nxt]})
                keep = np.flatnonzero(self.reward_probs[s, a] > 0)
                rewards.append({"s": s, "a": a, "support": [
                    {"value": float(self.reward_values[s, a, k]), "p": float(self.reward_probs[s, a, k])}
                    for k in keep]})
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "start_state": self.start_state,
            "layer_of": [int(x) for x in self.layer_of],
            "transitions": transitions,
            "rewards": rewards,
        }

    @classmethod
    def from_dict(cls, data: dict) -> TabularMdp:
        try:
            S, A = int(data["num_states"]), int(data["num_actions"])
            T = int(data["horizon"])
            layer_of = np.asarray(data["layer_of"], dtype=int)
            P = np.zeros((S, A, S))
            for entry in data["transitions"]:
                s, a = int(entry["s"]), int(entry["a"])
                for nxt in entry["next"]:
                    P[s, a, int(nxt["state"])] += float(nxt["p"])
            supports = {}
            for entry in data["rewards"]:
                key = (int(entry["s"]), int(entry["a"]))
                if key in supports:
                    raise MdpValidationError(f"duplicate reward entry for (s={key[0]}, a={key[1]})")
                supports[key] = [(float(x["value"]), float(x["p"])) for x in entry["support"]]
            gamma, start = float(data["gamma"]), int(data["start_state"])
        except (KeyError, TypeError, IndexError) as exc:
            raise MdpValidationError(f"malformed MDP config: {exc!r}") from exc
        K = max([len(v) for v in supports.values()] + [1])
        values, probs = np.zeros((S, A, K)), np.zeros((S, A, K))
        for s in range(S):
            for a in range(A):
                if (s, a) not in supports:
                    raise MdpValidationError(f"missing reward distribution for (s={s}, a={a})")
                for k, (v, p) in enumerate(supports[(s, a)]):
                    values[s, a, k], probs[s, a, k] = v, p
        return cls(S, A, T, gamma, start, layer_of, P, values, probs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> TabularMdp:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode, or a batch of episodes sharing leading array dimensions.

    ``states``, ``actions`` and ``rewards`` have shape (..., T+1). A single
    trajectory has 1-D arrays; estimators broadcast over any leading shape.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        actions = np.asarray(self.actions, dtype=int)
        rewards = np.asarray(self.rewards, dtype=float)
        if not (states.shape == actions.shape == rewards.shape) or states.ndim < 1:
            raise ValueError("states, actions and rewards must share a shape (..., T+1)")
        for name, arr in (("states", states), ("actions", actions), ("rewards", rewards)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.states.shape[-1] - 1

    @property
    def batch_shape(self) -> tuple:
        return self.states.shape[:-1]

    @property
    def discounts(self) -> np.ndarray:
        return self.gamma ** np.arange(self.horizon + 1)

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        if self.states.ndim != 1:
            raise ValueError("steps is only defined for a single trajectory")
        return [(int(s), int(a), float(r)) for s, a, r in zip(self.states, self.actions, self.rewards)]

    def discounted_return(self) -> np.ndarray:
        return self.rewards @ self.discounts

    def __len__(self) -> int:
        if self.states.ndim == 1:
            raise TypeError("a single trajectory has no batch length")
        return self.states.shape[0]

    def __getitem__(self, idx) -> Trajectory:
        return Trajectory(self.states[idx], self.actions[idx], self.rewards[idx], self.gamma)


@dataclass(frozen=True, eq=False)
class TrajectoryDistribution:
    """Every positive-probability trajectory (as one batch) with its probability."""

    trajectories: Trajectory
    probs: np.ndarray

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __iter__(self) -> Iterator[tuple[Trajectory, float]]:
        for n in range(len(self)):
            yield self.trajectories[n], float(self.probs[n])

    def expectation(self, values: np.ndarray) -> np.ndarray:
        """Probability-weighted sum over the leading (trajectory) axis."""
        return np.tensordot(self.probs, values, axes=(0, 0))


@dataclass(frozen=True, eq=False)
class ValueTables:
    v: np.ndarray
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class ValueGradients:
    """Exact grad_theta V (S, d) and grad_theta Q (S, A, d)."""

    dv: np.ndarray
    dq: np.ndarray


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    u = (1.0 - rng.random(probs.shape[0]))[:, None] * cum[:, -1:]
    return (cum < u).sum(axis=-1)


def sample_trajectories(mdp: TabularMdp, policy: SoftmaxPolicy, n: int, rng) -> Trajectory:
    """Draw ``n`` independent trajectories as one batch."""
    mdp.check_policy(policy)
    rng = np.random.default_rng(rng)
    T = mdp.horizon
    states = np.empty((n, T + 1), dtype=int)
    actions = np.empty((n, T + 1), dtype=int)
    rewards = np.empty((n, T + 1))
    s = np.full(n, mdp.start_state)
    for t in range(T + 1):
        a = _categorical(policy.probs[s], rng)
        k = _categorical(mdp.reward_probs[s, a], rng)
        states[:, t], actions[:, t], rewards[:, t] = s, a, mdp.reward_values[s, a, k]
        if t < T:
            s = _categorical(mdp.transitions[s, a], rng)
    return Trajectory(states, actions, rewards, mdp.gamma)


def sample_trajectory(mdp: TabularMdp, policy: SoftmaxPolicy, rng) -> Trajectory:
    return sample_trajectories(mdp, policy, 1, rng)[0]


def support_size(mdp: TabularMdp, start: int | None = None, first_action: int | None = None) -> int:
    """Number of positive-probability trajectories (exact, via counting DP)."""
    n_rewards = (mdp.reward_probs > 0).sum(axis=-1)
    reach = (mdp.transitions > 0).astype(object)
    count = np.zeros(mdp.num_states, dtype=object)
    for t in range(mdp.horizon, -1, -1):
        for s in mdp.states_in_layer(t):
            per_action = [int(n_rewards[s, a]) * (int(reach[s, a] @ count) if t < mdp.horizon else 1)
                          for a in range(mdp.num_actions)]
            count[s] = sum(per_action) if s != start or first_action is None else per_action[first_action]
    return int(count[mdp.start_state if start is None else start])


def enumerate_trajectories(mdp: TabularMdp, policy: SoftmaxPolicy, cap: int | None = None,
                           start: int | None = None, first_action: int | None = None
                           ) -> TrajectoryDistribution:
    """Enumerate the full trajectory law.

    With ``start`` (and optionally ``first_action``) the enumeration covers
    continuations from that state (state-action) instead of the start state;
    trajectories then have length horizon - layer_of[start] + 1.
    """
    mdp.check_policy(policy)
    cap = enumeration_cap() if cap is None else cap
    s0 = mdp.start_state if start is None else start
    size = support_size(mdp, s0, first_action)
    if size > cap:
        raise EnumerationLimitError(f"trajectory support has {size} elements, cap is {cap}")
    t0 = int(mdp.layer_of[s0])
    T = mdp.horizon
    pi = policy.probs
    if first_action is not None:
        pi = pi.copy()
        pi[s0] = np.eye(mdp.num_actions)[first_action]
    cur = np.array([s0])
    prob = np.ones(1)
    hist = np.zeros((1, 0), dtype=int)
    hist_a = np.zeros((1, 0), dtype=int)
    hist_r = np.zeros((1, 0))
    A = mdp.num_actions
    for t in range(t0, T + 1):
        nxt_states = mdp.states_in_layer(t + 1) if t < T else np.array([-1])
        if t < T:
            p_next = mdp.transitions[cur][:, :, nxt_states]          # (N, A, M)
        else:
            p_next = np.ones((cur.size, A, 1))
        joint = (prob[:, None, None, None] * pi[cur][:, :, None, None]
                 * mdp.reward_probs[cur][:, :, :, None] * p_next[:, :, None, :])  # (N, A, K, M)
        n_idx, a_idx, k_idx, m_idx = np.nonzero(joint > 0)
        prob = joint[n_idx, a_idx, k_idx, m_idx]
        s_prev = cur[n_idx]
        hist = np.column_stack([hist[n_idx], s_prev])
        hist_a = np.column_stack([hist_a[n_idx], a_idx])
        hist_r = np.column_stack([hist_r[n_idx], mdp.reward_values[s_prev, a_idx, k_idx]])
        cur = nxt_states[m_idx]
    trajs = Trajectory(hist, hist_a, hist_r, mdp.gamma)
    return TrajectoryDistribution(trajs, prob)


def value_tables(mdp: TabularMdp, policy: SoftmaxPolicy) -> ValueTables:
    """Backward induction over layers."""
    mdp.check_policy(policy)
    v = np.zeros(mdp.num_states)
    q = np.zeros((mdp.num_states, mdp.num_actions))
    pi = policy.probs
    for t in range(mdp.horizon, -1, -1):
        idx = mdp.states_in_layer(t)
        q[idx] = mdp.expected_reward[idx] + mdp.gamma * mdp.transitions[idx] @ v
        v[idx] = (pi[idx] * q[idx]).sum(axis=-1)
    return ValueTables(v, q)


def value_gradients(mdp: TabularMdp, policy: SoftmaxPolicy, tables: ValueTables | None = None
                    ) -> ValueGradients:
    """Exact grad_theta of V and Q by differentiating the backward induction."""
    tables = value_tables(mdp, policy) if tables is None else tables
    S, A, d = mdp.num_states, mdp.num_actions, policy.dim
    dv = np.zeros((S, d))
    dq = np.zeros((S, A, d))
    pi, score = policy.probs, policy.score_table
    for t in range(mdp.horizon, -1, -1):
        idx = mdp.states_in_layer(t)
        dq[idx] = mdp.gamma * np.einsum("iaj,jd->iad", mdp.transitions[idx], dv)
        dv[idx] = np.einsum("ia,iad->id", pi[idx], score[idx] * tables.q[idx][..., None] + dq[idx])
    return ValueGradients(dv, dq)


def exact_return(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    return float(value_tables(mdp, policy).v[mdp.start_state])


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    return value_gradients(mdp, policy).dv[mdp.start_state].copy()


@dataclass(frozen=True, eq=False)
class PrefixLayer:
    """All state-action histories that reach layer ``t``.

    Row n is one history s_0, a_0, ..., s_{t-1}, a_{t-1}, s_t (rewards
    marginalized). ``score_sum`` holds sum_{t' < t} grad log pi(a_t'|s_t') and
    ``group`` identifies the parent history ending in (s_{t-1}, a_{t-1}), so
    that rows sharing a group differ only in the draw of s_t.
    """

    t: int
    probs: np.ndarray
    states: np.ndarray
    score_sum: np.ndarray
    group: np.ndarray
    prev_states: np.ndarray
    prev_actions: np.ndarray


def enumerate_prefixes(mdp: TabularMdp, policy: SoftmaxPolicy, cap: int | None = None) -> Iterator[PrefixLayer]:
    """Yield the history distribution layer by layer, t = 0..horizon."""
    mdp.check_policy(policy)
    cap = enumeration_cap() if cap is None else cap
    pi, score = policy.probs, policy.score_table
    probs = np.ones(1)
    states = np.array([mdp.start_state])
    score_sum = np.zeros((1, policy.dim))
    group = np.zeros(1, dtype=int)
    prev = np.full(1, -1)
    prev_a = np.full(1, -1)
    for t in range(mdp.horizon + 1):
        yield PrefixLayer(t, probs, states, score_sum, group, prev, prev_a)
        if t == mdp.horizon:
            return
        layer = mdp.states_in_layer(t + 1)
        joint = probs[:, None, None] * pi[states][:, :, None] * mdp.transitions[states][:, :, layer]
        n_idx, a_idx, m_idx = np.nonzero(joint > 0)
        if n_idx.size > cap:
            raise EnumerationLimitError(f"{n_idx.size} histories at layer {t + 1}, cap is {cap}")
        group = n_idx * mdp.num_actions + a_idx
        probs = joint[n_idx, a_idx, m_idx]
        prev, prev_a = states[n_idx], a_idx
        score_sum = score_sum[n_idx] + score[prev, a_idx]
        states = layer[m_idx]
