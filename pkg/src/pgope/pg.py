"""Single-trajectory policy-gradient estimators.

All estimators take an on-policy ``Trajectory`` (any batch shape) and return
gradient estimates of shape batch_shape + (d,), coordinates ordered like
``SoftmaxPolicy.theta``.
"""
from __future__ import annotations

import numpy as np

from .mdp import Trajectory
from .policy import SoftmaxPolicy
from .qmodel import QModel


def scores(traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
    """grad log pi(a_t|s_t) for every step, shape (..., T+1, d)."""
    return policy.score_table[traj.states, traj.actions]


def reward_to_go(traj: Trajectory) -> np.ndarray:
    """G_t = sum_{t' >= t} gamma^t' r_t' (discounted from time 0, not from t)."""
    discounted = traj.rewards * traj.discounts
    return np.flip(np.cumsum(np.flip(discounted, -1), axis=-1), -1)


def reinforce(traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
    return scores(traj, policy).sum(axis=-2) * traj.discounted_return()[..., None]


def vanilla_pg(traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
    return np.einsum("...td,...t->...d", scores(traj, policy), reward_to_go(traj))


def baseline_pg(traj: Trajectory, policy: SoftmaxPolicy, baseline) -> np.ndarray:
    b = np.asarray(baseline, dtype=float)[traj.states]
    return np.einsum("...td,...t->...d", scores(traj, policy), reward_to_go(traj) - traj.discounts * b)


def drpg(traj: Trajectory, policy: SoftmaxPolicy, model: QModel) -> np.ndarray:
    """Gradient of the doubly robust estimator, expanded form.

    sum_t { score_t [G_t + sum_{t2 > t} gamma^t2 (V~_t2 - Q~_t2)]
            + gamma^t (grad V~_t - grad Q~_t - Q~_t score_t) }
    """
    sc = scores(traj, policy)
    s, a = traj.states, traj.actions
    q = model.q_table(policy)[s, a]
    v = model.v_table(policy)[s]
    dq = model.q_grad_table(policy)[s, a]
    dv = model.v_grad_table(policy)[s]
    gap = traj.discounts * (v - q)
    later_gap = np.flip(np.cumsum(np.flip(gap, -1), axis=-1), -1) - gap
    weight = reward_to_go(traj) + later_gap - traj.discounts * q
    return (np.einsum("...td,...t->...d", sc, weight)
            + np.einsum("t,...td->...d", traj.discounts, dv - dq))


def drpg_recursive(traj: Trajectory, policy: SoftmaxPolicy, model: QModel) -> np.ndarray:
    """Backward recursion for grad DR_t with DR_{T+1} = grad DR_{T+1} = 0."""
    sc = scores(traj, policy)
    q, v = model.q_table(policy), model.v_table(policy)
    dq, dv = model.q_grad_table(policy), model.v_grad_table(policy)
    dr = np.zeros(traj.batch_shape)
    grad = np.zeros(traj.batch_shape + (policy.dim,))
    for t in range(traj.horizon, -1, -1):
        s, a, r = traj.states[..., t], traj.actions[..., t], traj.rewards[..., t]
        residual = r + traj.gamma * dr - q[s, a]
        grad = dv[s] + sc[..., t, :] * residual[..., None] + traj.gamma * grad - dq[s, a]
        dr = v[s] + residual
    return grad


def trajcv_pg(traj: Trajectory, policy: SoftmaxPolicy, model: QModel) -> np.ndarray:
    """Trajectory-wise control variate estimator.

    Uses only the Q~ values of ``model`` (its theta dependence is ignored):
    grad V~(s) = sum_a Q~(s, a) grad pi(a|s). Written step by step from the
    policy probabilities, without the shared score/table helpers.
    """
    S, A = policy.num_states, policy.num_actions
    pi = policy.probs
    q_tab = model.q_table(policy)
    v_tab = (pi * q_tab).sum(axis=-1)
    T, gamma = traj.horizon, traj.gamma
    out = np.zeros(traj.batch_shape + (S, A))
    rows = np.indices(traj.batch_shape)
    for t in range(T + 1):
        s, a = traj.states[..., t], traj.actions[..., t]
        ret = sum(gamma**k * traj.rewards[..., k] for k in range(t, T + 1))
        cv = sum(gamma**k * (v_tab[traj.states[..., k]] - q_tab[traj.states[..., k], traj.actions[..., k]])
                 for k in range(t + 1, T + 1))
        coef = ret + cv - gamma**t * q_tab[s, a]
        # score block of state s: onehot(a) - pi(s)
        block = -pi[s] * coef[..., None]
        np.add.at(block, tuple(rows) + (a,), coef)
        # sum_b Q~(s, b) grad pi(b|s) restricted to the block of s: pi(s) * (Q~(s) - V~(s))
        block = block + gamma**t * pi[s] * (q_tab[s] - v_tab[s][..., None])
        idx = tuple(rows) + (s,)
        np.add.at(out, idx, block)
    return out.reshape(traj.batch_shape + (S * A,))


def actor_critic_pg(traj: Trajectory, policy: SoftmaxPolicy, critic) -> np.ndarray:
    f = np.asarray(critic, dtype=float)[traj.states, traj.actions]
    return np.einsum("...td,...t->...d", scores(traj, policy), traj.discounts * f)


def mean_zero_terms(traj: Trajectory, policy: SoftmaxPolicy, model: QModel):
    """Per-step terms p2_t and p3_t whose expectations vanish, shape (..., T+1, d).

    p2_t = score_t sum_{t2 > t} gamma^t2 (V~_t2 - Q~_t2)
    p3_t = grad V~_t - grad[Q~_t pi_t] / pi_t = grad V~_t - grad Q~_t - Q~_t score_t
    """
    sc = scores(traj, policy)
    s, a = traj.states, traj.actions
    q = model.q_table(policy)[s, a]
    v = model.v_table(policy)[s]
    gap = traj.discounts * (v - q)
    later_gap = np.flip(np.cumsum(np.flip(gap, -1), axis=-1), -1) - gap
    p2 = sc * later_gap[..., None]
    p3 = model.v_grad_table(policy)[s] - model.q_grad_table(policy)[s, a] - q[..., None] * sc
    return p2, p3


ESTIMATORS = {
    "reinforce": reinforce,
    "vanilla_pg": vanilla_pg,
    "baseline_pg": baseline_pg,
    "drpg": drpg,
    "drpg_recursive": drpg_recursive,
    "trajcv_pg": trajcv_pg,
    "actor_critic_pg": actor_critic_pg,
}
