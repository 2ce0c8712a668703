"""Generators for small layered MDPs used by tests, configs and scripts."""
from __future__ import annotations

import numpy as np

from .mdp import TabularMdp

KINDS = ("chain", "tree", "gridlike", "random-dag")


def _reward_tables(rng, n_sa: tuple[int, int], support: int, stochastic: bool):
    S, A = n_sa
    K = support if stochastic else 1
    values = np.round(rng.uniform(-1.0, 1.0, size=(S, A, K)), 3)
    if K == 1:
        probs = np.ones((S, A, 1))
    else:
        probs = rng.dirichlet(np.full(K, 2.0), size=(S, A))
    return values, probs


def chain(horizon: int, num_actions: int = 2, gamma: float = 1.0, stochastic_rewards: bool = False,
          reward_support: int = 2, seed=0) -> TabularMdp:
    """One state per layer; every action leads to the next layer's only state."""
    _check(horizon >= 0 and num_actions >= 1, "chain needs horizon >= 0 and num_actions >= 1")
    rng = np.random.default_rng(seed)
    S = horizon + 1
    P = np.zeros((S, num_actions, S))
    for t in range(horizon):
        P[t, :, t + 1] = 1.0
    values, probs = _reward_tables(rng, (S, num_actions), reward_support, stochastic_rewards)
    return TabularMdp(S, num_actions, horizon, gamma, 0, np.arange(S), P, values, probs)


def tree(branching: int, horizon: int, num_actions: int = 2, gamma: float = 1.0,
         stochastic_rewards: bool = False, reward_support: int = 2, seed=0) -> TabularMdp:
    """Every (s, a) leads to ``branching`` fresh children, so each state has one root path."""
    _check(branching >= 1 and horizon >= 0 and num_actions >= 1,
           "tree needs branching >= 1, horizon >= 0, num_actions >= 1")
    rng = np.random.default_rng(seed)
    width = num_actions * branching
    sizes = [width**t for t in range(horizon + 1)]
    S = sum(sizes)
    layer_of = np.concatenate([np.full(n, t) for t, n in enumerate(sizes)])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    P = np.zeros((S, num_actions, S))
    for t in range(horizon):
        for j in range(sizes[t]):
            s = offsets[t] + j
            for a in range(num_actions):
                children = offsets[t + 1] + j * width + a * branching + np.arange(branching)
                p = rng.dirichlet(np.full(branching, 2.0)) if branching > 1 else np.ones(1)
                P[s, a, children] = p
    values, probs = _reward_tables(rng, (S, num_actions), reward_support, stochastic_rewards)
    return TabularMdp(S, num_actions, horizon, gamma, 0, layer_of, P, values, probs)


def gridlike(width: int, horizon: int, num_actions: int = 3, slip: float = 0.1, gamma: float = 1.0,
             stochastic_rewards: bool = False, reward_support: int = 2, seed=0) -> TabularMdp:
    """A 1-D corridor unrolled over time.

    Layer 0 holds only the start cell (the middle of the corridor). Action a
    moves by ``a - num_actions // 2`` cells (clipped); with probability
    ``slip`` the agent stays put instead.
    """
    _check(width >= 1 and horizon >= 0 and num_actions >= 1 and 0.0 <= slip <= 1.0,
           "gridlike needs width >= 1, horizon >= 0, num_actions >= 1, 0 <= slip <= 1")
    rng = np.random.default_rng(seed)
    S = 1 + width * horizon
    layer_of = np.concatenate([[0], np.repeat(np.arange(1, horizon + 1), width)])
    pos = np.concatenate([[width // 2], np.tile(np.arange(width), horizon)])

    def index(t, x):
        return 0 if t == 0 else 1 + (t - 1) * width + x

    P = np.zeros((S, num_actions, S))
    for s in range(S):
        t = layer_of[s]
        if t == horizon:
            continue
        for a in range(num_actions):
            target = int(np.clip(pos[s] + a - num_actions // 2, 0, width - 1))
            P[s, a, index(t + 1, target)] += 1.0 - slip
            P[s, a, index(t + 1, pos[s])] += slip
    cell_reward = np.round(rng.uniform(-1.0, 1.0, size=width), 3)
    values, probs = _reward_tables(rng, (S, num_actions), reward_support, stochastic_rewards)
    values = values * 0.25 + cell_reward[pos][:, None, None]
    return TabularMdp(S, num_actions, horizon, gamma, 0, layer_of, P, values, probs)


def random_dag(states_per_layer: int, horizon: int, num_actions: int = 2, gamma: float = 1.0,
               next_support: int | None = None, stochastic_rewards: bool = True,
               reward_support: int = 2, deterministic: bool = False, seed=0) -> TabularMdp:
    """Random layered MDP: one start state, then ``states_per_layer`` states per layer.

    ``deterministic=True`` forces point-mass transitions and rewards. Otherwise
    each (s, a) spreads over ``next_support`` next-layer states (all of them by
    default) with Dirichlet weights.
    """
    _check(states_per_layer >= 1 and horizon >= 0 and num_actions >= 1,
           "random-dag needs states_per_layer >= 1, horizon >= 0, num_actions >= 1")
    next_support = states_per_layer if next_support is None else next_support
    _check(1 <= next_support <= states_per_layer, "next_support must lie in 1..states_per_layer")
    rng = np.random.default_rng(seed)
    S = 1 + states_per_layer * horizon
    layer_of = np.concatenate([[0], np.repeat(np.arange(1, horizon + 1), states_per_layer)])
    P = np.zeros((S, num_actions, S))
    for s in range(S):
        t = layer_of[s]
        if t == horizon:
            continue
        layer = np.flatnonzero(layer_of == t + 1)
        for a in range(num_actions):
            k = 1 if deterministic else next_support
            chosen = rng.choice(layer, size=k, replace=False)
            P[s, a, chosen] = rng.dirichlet(np.full(k, 2.0)) if k > 1 else 1.0
    values, probs = _reward_tables(rng, (S, num_actions), reward_support,
                                   stochastic_rewards and not deterministic)
    return TabularMdp(S, num_actions, horizon, gamma, 0, layer_of, P, values, probs)


_BUILDERS = {"chain": chain, "tree": tree, "gridlike": gridlike, "random-dag": random_dag}


def generate_mdp(kind: str, seed=0, **params) -> TabularMdp:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown MDP kind {kind!r}; expected one of {KINDS}")
    try:
        return _BUILDERS[kind](seed=seed, **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from exc


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)
