"""Single-trajectory off-policy evaluation estimators.

Every estimator accepts a ``Trajectory`` of any batch shape and returns an
array of that batch shape (a 0-d array for a single trajectory).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Trajectory
from .policy import SoftmaxPolicy
from .qmodel import TERMINAL, QModel


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    ratios: np.ndarray
    cumulative: np.ndarray


def _check_shapes(traj: Trajectory, *policies: SoftmaxPolicy) -> None:
    shapes = {(p.num_states, p.num_actions) for p in policies}
    if len(shapes) != 1:
        raise ValueError(f"behavior and target policies differ in shape: {sorted(shapes)}")
    S, A = shapes.pop()
    if traj.states.size and (traj.states.max() >= S or traj.actions.max() >= A):
        raise ValueError("trajectory indexes states/actions outside the policy tables")


def importance_weights(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy) -> ImportanceWeights:
    _check_shapes(traj, behavior, target)
    denom = behavior.probs[traj.states, traj.actions]
    if np.any(denom <= 0):
        raise ValueError("behavior policy assigns zero probability to an observed action")
    ratios = target.probs[traj.states, traj.actions] / denom
    return ImportanceWeights(ratios, np.cumprod(ratios, axis=-1))


def next_states(traj: Trajectory) -> np.ndarray:
    """s_{t+1} for each step, with TERMINAL after the last step."""
    pad = np.full(traj.batch_shape + (1,), TERMINAL)
    return np.concatenate([traj.states[..., 1:], pad], axis=-1)


def with_terminal(table: np.ndarray) -> np.ndarray:
    """Append a zero row so that indexing with TERMINAL (-1) yields 0."""
    table = np.asarray(table, dtype=float)
    return np.concatenate([table, np.zeros((1,) + table.shape[1:])], axis=0)


def traj_is(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy) -> np.ndarray:
    w = importance_weights(traj, behavior, target)
    return w.cumulative[..., -1] * traj.discounted_return()


def step_is(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy) -> np.ndarray:
    w = importance_weights(traj, behavior, target)
    return (w.cumulative * traj.rewards) @ traj.discounts


def baseline_ope(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy, baseline) -> np.ndarray:
    """b(s_0) + sum_t gamma^t rho_[0:t] (r_t - b(s_t) + gamma b(s_{t+1})), b(terminal) = 0."""
    w = importance_weights(traj, behavior, target)
    b = with_terminal(baseline)
    correction = traj.rewards - b[traj.states] + traj.gamma * b[next_states(traj)]
    return b[traj.states[..., 0]] + (w.cumulative * correction) @ traj.discounts


def dr_ope_expanded(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy, model: QModel) -> np.ndarray:
    w = importance_weights(traj, behavior, target)
    q = model.q_table(target)
    v = with_terminal(model.v_table(target))
    correction = traj.rewards + traj.gamma * v[next_states(traj)] - q[traj.states, traj.actions]
    return v[traj.states[..., 0]] + (w.cumulative * correction) @ traj.discounts


def dr_ope_recursive(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy, model: QModel) -> np.ndarray:
    """DR_t = V~_t + rho_t (r_t + gamma DR_{t+1} - Q~_t), DR_{T+1} = 0; returns DR_0."""
    w = importance_weights(traj, behavior, target)
    q = model.q_table(target)
    v = model.v_table(target)
    dr = np.zeros(traj.batch_shape)
    for t in range(traj.horizon, -1, -1):
        s, a = traj.states[..., t], traj.actions[..., t]
        dr = v[s] + w.ratios[..., t] * (traj.rewards[..., t] + traj.gamma * dr - q[s, a])
    return dr


def actor_critic_ope(traj: Trajectory, behavior: SoftmaxPolicy, target: SoftmaxPolicy, critic) -> np.ndarray:
    """sum_t gamma^t rho_[0:t] (f(s_t, a_t) - gamma f(s_{t+1}, a_{t+1})) with f = 0 at the terminal."""
    w = importance_weights(traj, behavior, target)
    f = np.asarray(critic, dtype=float)[traj.states, traj.actions]
    f_next = np.concatenate([f[..., 1:], np.zeros(traj.batch_shape + (1,))], axis=-1)
    return (w.cumulative * (f - traj.gamma * f_next)) @ traj.discounts


ESTIMATORS = {
    "traj_is": traj_is,
    "step_is": step_is,
    "baseline_ope": baseline_ope,
    "dr_ope_expanded": dr_ope_expanded,
    "dr_ope_recursive": dr_ope_recursive,
    "actor_critic_ope": actor_critic_ope,
}
