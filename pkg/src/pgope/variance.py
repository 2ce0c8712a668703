"""Covariance of gradient estimators: enumeration, Monte Carlo, closed form.

The closed form decomposes the DR-PG covariance into a reward-noise term, an
action term and a transition term, each an expected conditional covariance
evaluated by exact enumeration of state-action histories.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import pg
from .mdp import (EnumerationLimitError, TabularMdp, Trajectory, enumerate_prefixes,
                  enumerate_trajectories, exact_policy_gradient, sample_trajectories,
                  value_gradients, value_tables)
from .policy import SoftmaxPolicy
from .qmodel import QModel

Estimator = Callable[[Trajectory], np.ndarray]
MC_CHUNK = 10_000


def weighted_covariance(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_n w_n (g_n - mean)(g_n - mean)^T with mean = sum_n w_n g_n (weights sum to 1)."""
    mean = weights @ values
    centered = values - mean
    cov = np.einsum("n,ni,nj->ij", weights, centered, centered)
    return 0.5 * (cov + cov.T)


def brute_force_covariance(mdp: TabularMdp, policy: SoftmaxPolicy, estimator: Estimator) -> np.ndarray:
    dist = enumerate_trajectories(mdp, policy)
    values = np.asarray(estimator(dist.trajectories), dtype=float)
    return weighted_covariance(values.reshape(len(dist), -1), dist.probs)


def _group_covariance(values, weights, group):
    """sum_n w_n (y_n - ybar_g)(y_n - ybar_g)^T with ybar_g the w-weighted mean within group g."""
    _, inverse = np.unique(group, return_inverse=True)
    inverse = inverse.reshape(-1)
    mass = np.bincount(inverse, weights=weights)
    sums = np.zeros((mass.size, values.shape[1]))
    np.add.at(sums, inverse, weights[:, None] * values)
    centered = values - (sums / mass[:, None])[inverse]
    return np.einsum("n,ni,nj->ij", weights, centered, centered)


@dataclass(frozen=True, eq=False)
class CovarianceTerms:
    """The three summands of the closed-form DR-PG covariance."""

    reward: np.ndarray
    action: np.ndarray
    transition: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.reward + self.action + self.transition


def drpg_covariance_terms(mdp: TabularMdp, policy: SoftmaxPolicy, model: QModel) -> CovarianceTerms:
    """Closed-form covariance of ``drpg`` split into its three terms.

    reward:     E[sum_n gamma^2n Var[r_n | s_n, a_n] c_n c_n^T],  c_n = sum_{t<=n} score_t
    action:     E[sum_n gamma^2n Cov_a[dQ_n - dQ~_n + c_n (Q_n - Q~_n) | history, s_n]]
    transition: E[sum_n gamma^2n Cov_s[dV_n + c_{n-1} V_n | history up to a_{n-1}]]
    """
    tables = value_tables(mdp, policy)
    grads = value_gradients(mdp, policy, tables)
    q_err = tables.q - model.q_table(policy)
    dq_err = grads.dq - model.q_grad_table(policy)
    pi, score = policy.probs, policy.score_table
    d = policy.dim
    reward = np.zeros((d, d))
    action = np.zeros((d, d))
    transition = np.zeros((d, d))
    for layer in enumerate_prefixes(mdp, policy):
        n, s, w = layer.t, layer.states, layer.probs
        disc = mdp.gamma ** (2 * n)
        c = layer.score_sum[:, None, :] + score[s]                       # (N, A, d)
        wa = w[:, None] * pi[s]                                           # (N, A)
        reward += disc * np.einsum("na,nai,naj->ij", wa * mdp.reward_variance[s], c, c)
        x = dq_err[s] + c * q_err[s][..., None]
        x = x - np.einsum("na,nad->nd", pi[s], x)[:, None, :]
        action += disc * np.einsum("na,nai,naj->ij", wa, x, x)
        if n > 0:
            y = grads.dv[s] + layer.score_sum * tables.v[s][:, None]
            transition += disc * _group_covariance(y, w, layer.group)
    sym = lambda m: 0.5 * (m + m.T)
    return CovarianceTerms(sym(reward), sym(action), sym(transition))


def drpg_covariance(mdp: TabularMdp, policy: SoftmaxPolicy, model: QModel) -> np.ndarray:
    return drpg_covariance_terms(mdp, policy, model).total


DETERMINISTIC_ROWS = ("step_is", "baseline", "trajcv", "drpg")


def deterministic_covariance(mdp: TabularMdp, policy: SoftmaxPolicy, row: str) -> np.ndarray:
    """Covariance of PG estimators in deterministic MDPs with exact side information.

    step_is:  E[sum_t gamma^2t Cov_t[dQ_t + Q_t c_t | s_t]]
    baseline: E[sum_t gamma^2t Cov_t[dQ_t + A_t c_t | s_t]]   (b = V)
    trajcv:   E[sum_t gamma^2t Cov_t[dQ_t | s_t]]             (Q~ = Q, grad ignored)
    drpg:     0                                                (Q~ = Q, grad Q~ = grad Q)
    with c_t = sum_{t' <= t} score_t'.
    """
    if row not in DETERMINISTIC_ROWS:
        raise ValueError(f"unknown row {row!r}; expected one of {DETERMINISTIC_ROWS}")
    if not mdp.is_deterministic:
        raise ValueError("these closed forms hold only for deterministic MDPs")
    d = policy.dim
    if row == "drpg":
        return np.zeros((d, d))
    tables = value_tables(mdp, policy)
    dq = value_gradients(mdp, policy, tables).dq
    pi, score = policy.probs, policy.score_table
    out = np.zeros((d, d))
    for layer in enumerate_prefixes(mdp, policy):
        s = layer.states
        for n_row in range(s.size):
            st = s[n_row]
            vals = []
            for a in range(mdp.num_actions):
                c = layer.score_sum[n_row] + score[st, a]
                if row == "step_is":
                    vals.append(dq[st, a] + tables.q[st, a] * c)
                elif row == "baseline":
                    vals.append(dq[st, a] + (tables.q[st, a] - tables.v[st]) * c)
                else:
                    vals.append(dq[st, a].copy())
            vals = np.array(vals)
            mean = pi[st] @ vals
            cov = (pi[st][:, None] * (vals - mean)).T @ (vals - mean)
            out += layer.probs[n_row] * mdp.gamma ** (2 * layer.t) * cov
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class MonteCarloCovariance:
    cov: np.ndarray
    mean: np.ndarray
    mse: float
    n_samples: int
    trace_se: float

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))


def mc_covariance(mdp: TabularMdp, policy: SoftmaxPolicy, estimator: Estimator, n_samples: int,
                  seed: int) -> MonteCarloCovariance:
    """Sample covariance of ``n_samples`` independent estimates.

    Trajectories are drawn in fixed-size chunks, each from its own child of
    ``SeedSequence(seed)``, so results do not depend on how chunks are scheduled.
    ``mse`` is measured against the exact gradient.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    n_chunks = -(-n_samples // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    values = []
    for k, child in enumerate(children):
        size = min(MC_CHUNK, n_samples - k * MC_CHUNK)
        traj = sample_trajectories(mdp, policy, size, np.random.default_rng(child))
        values.append(np.asarray(estimator(traj), dtype=float).reshape(size, -1))
    g = np.concatenate(values)
    mean = g.mean(axis=0)
    centered = g - mean
    cov = centered.T @ centered / (n_samples - 1)
    sq = (centered**2).sum(axis=1)
    trace_se = float(sq.std(ddof=1) / np.sqrt(n_samples))
    exact = exact_policy_gradient(mdp, policy)
    mse = float(((g - exact) ** 2).sum(axis=1).mean())
    return MonteCarloCovariance(0.5 * (cov + cov.T), mean, mse, n_samples, trace_se)


def estimator_for(name: str, policy: SoftmaxPolicy, model: QModel | None) -> Estimator:
    """Bind a named PG estimator to a policy and (where needed) a model.

    ``baseline_pg`` uses V~ of the model as its baseline and ``actor_critic_pg``
    uses Q~ as its critic.
    """
    fn = pg.ESTIMATORS[name]
    if name in ("reinforce", "vanilla_pg"):
        return lambda tr: fn(tr, policy)
    if model is None:
        raise ValueError(f"estimator {name!r} needs a model")
    if name == "baseline_pg":
        b = model.v_table(policy)
        return lambda tr: fn(tr, policy, b)
    if name == "actor_critic_pg":
        f = model.q_table(policy)
        return lambda tr: fn(tr, policy, f)
    return lambda tr: fn(tr, policy, model)


@dataclass(frozen=True)
class VarianceRow:
    estimator: str
    model: str
    trace: float
    reduction_vs_vanilla: float
    method: str


def reduction_ratio(reference: float, other: float) -> float:
    """(V_reference - V_other) / V_reference, NaN when the reference variance is 0."""
    return (reference - other) / reference if reference > 0 else float("nan")


def variance_table(mdp: TabularMdp, policy: SoftmaxPolicy, models: dict[str, QModel],
                   estimators: list[str], n_samples: int = 100_000, seed: int = 0) -> list[VarianceRow]:
    """Trace of each estimator's covariance and its reduction ratio against vanilla PG.

    Model-free estimators get one row; the others get one row per model.
    Uses enumeration when the support fits under the cap, else Monte Carlo.
    """
    def trace_of(est):
        try:
            return float(np.trace(brute_force_covariance(mdp, policy, est))), "enumeration"
        except EnumerationLimitError:
            return mc_covariance(mdp, policy, est, n_samples, seed).trace, "monte-carlo"

    vanilla, _ = trace_of(estimator_for("vanilla_pg", policy, None))
    rows = []
    for name in estimators:
        configs = [("-", None)] if name in ("reinforce", "vanilla_pg") else list(models.items())
        for label, model in configs:
            tr, method = trace_of(estimator_for(name, policy, model))
            rows.append(VarianceRow(name, label, tr, reduction_ratio(vanilla, tr), method))
    return rows
