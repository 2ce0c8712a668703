"""Cramer-Rao lower bounds for per-coordinate policy-gradient estimation.

``dag_cr_bounds`` handles any layered MDP using state-action marginals;
``tree_cr_bounds`` is the tree specialization, where every state has a
unique history and conditioning on (s_{t-1}, a_{t-1}) equals conditioning on
the full history.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp, enumerate_prefixes, value_gradients, value_tables
from .policy import SoftmaxPolicy


class NotATreeError(ValueError):
    pass


@dataclass(frozen=True)
class TreeCertificate:
    """Parent (state, action) of every reachable non-start state, or the first violation."""

    is_tree: bool
    parents: dict = field(default_factory=dict)
    violating_state: int | None = None
    reason: str = ""

    def root_path(self, s: int) -> list[tuple[int, int]]:
        """(state, action) pairs leading from the start state to ``s``."""
        if not self.is_tree:
            raise NotATreeError(self.reason)
        path = []
        while s in self.parents:
            s, a = self.parents[s]
            path.append((s, a))
        return path[::-1]


def _reachable(mdp: TabularMdp) -> np.ndarray:
    reach = np.zeros(mdp.num_states, dtype=bool)
    reach[mdp.start_state] = True
    for t in range(mdp.horizon):
        for s in mdp.states_in_layer(t):
            if reach[s]:
                reach |= (mdp.transitions[s] > 0).any(axis=0)
    return reach


def check_tree(mdp: TabularMdp) -> TreeCertificate:
    """Accept iff every reachable state is entered through exactly one (state, action) pair."""
    reach = _reachable(mdp)
    parents = {}
    for s in np.flatnonzero(reach):
        for a in range(mdp.num_actions):
            for child in np.flatnonzero(mdp.transitions[s, a] > 0):
                child = int(child)
                if child in parents:
                    ps, pa = parents[child]
                    return TreeCertificate(
                        False, violating_state=child,
                        reason=f"state {child} is reachable from both (s={ps}, a={pa}) and (s={s}, a={a})")
                parents[child] = (int(s), a)
    return TreeCertificate(True, parents)


def _layer_marginals(mdp: TabularMdp, policy: SoftmaxPolicy):
    """Per layer: P_M(s, a) and E[sum_{t' <= t} score_t' | s_t = s, a_t = a], keyed by s*A + a."""
    S, A, d = mdp.num_states, mdp.num_actions, policy.dim
    pi, score = policy.probs, policy.score_table
    out = []
    for layer in enumerate_prefixes(mdp, policy):
        s = layer.states
        w = layer.probs[:, None] * pi[s]                                   # (N, A)
        c = layer.score_sum[:, None, :] + score[s]                         # (N, A, d)
        keys = (s[:, None] * A + np.arange(A)).reshape(-1)
        mass = np.bincount(keys, weights=w.reshape(-1), minlength=S * A)
        sums = np.zeros((S * A, d))
        np.add.at(sums, keys, (w[..., None] * c).reshape(-1, d))
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(mass[:, None] > 0, sums / mass[:, None], 0.0)
        out.append((layer.t, mass.reshape(S, A), mean.reshape(S, A, d)))
    return out


def dag_cr_bounds(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """Lower bound on the variance of any unbiased estimator, for every coordinate.

    sum_t gamma^2t { E_(s,a)~P_M[Var(r|s,a) m_t(s,a)^2]
                    + E_(s,a)~P_M at t-1 [Var_{s'~P(s,a)}(V(s') m_{t-1}(s,a) + dV(s'))] }
    where m_t(s, a) = E[sum_{t' <= t} d log pi_t' | s_t = s, a_t = a].
    """
    tables = value_tables(mdp, policy)
    dv = value_gradients(mdp, policy, tables).dv
    bound = np.zeros(policy.dim)
    for t, mass, mean in _layer_marginals(mdp, policy):
        disc = mdp.gamma ** (2 * t)
        bound += disc * np.einsum("sa,sa,sad->d", mass, mdp.reward_variance, mean**2)
        if t == mdp.horizon:
            continue
        # contribution of s_{t+1} drawn from P(.|s_t, a_t)
        y = tables.v[None, None, :, None] * mean[:, :, None, :] + dv[None, None, :, :]   # (S, A, S', d)
        p = mdp.transitions
        ybar = np.einsum("sak,sakd->sad", p, y)
        var = np.einsum("sak,sakd->sad", p, (y - ybar[:, :, None, :]) ** 2)
        bound += mdp.gamma ** (2 * (t + 1)) * np.einsum("sa,sad->d", mass, var)
    return bound


def dag_cr_bound(mdp: TabularMdp, policy: SoftmaxPolicy, coord: int) -> float:
    _check_coord(policy, coord)
    return float(dag_cr_bounds(mdp, policy)[coord])


def tree_cr_bounds(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """Tree-MDP bound for every coordinate, by enumerating histories.

    E[sum_t gamma^2t {Var_{t+1}[r_t] (sum_{t1<=t} d log pi_t1)^2
                      + Var_t[V_t sum_{t1<t} d log pi_t1 + dV_t]}]
    """
    cert = check_tree(mdp)
    if not cert.is_tree:
        raise NotATreeError(cert.reason)
    tables = value_tables(mdp, policy)
    dv = value_gradients(mdp, policy, tables).dv
    pi, score = policy.probs, policy.score_table
    bound = np.zeros(policy.dim)
    for layer in enumerate_prefixes(mdp, policy):
        s, w = layer.states, layer.probs
        disc = mdp.gamma ** (2 * layer.t)
        c = layer.score_sum[:, None, :] + score[s]
        bound += disc * np.einsum("na,na,nad->d", w[:, None] * pi[s], mdp.reward_variance[s], c**2)
        if layer.t > 0:
            y = tables.v[s][:, None] * layer.score_sum + dv[s]
            # histories sharing (s_{t-1}, a_{t-1}) differ only in s_t
            keys = layer.group
            _, inv = np.unique(keys, return_inverse=True)
            inv = inv.reshape(-1)
            mass = np.bincount(inv, weights=w)
            sums = np.zeros((mass.size, policy.dim))
            np.add.at(sums, inv, w[:, None] * y)
            centered = y - (sums / mass[:, None])[inv]
            bound += disc * (w[:, None] * centered**2).sum(axis=0)
    return bound


def tree_cr_bound(mdp: TabularMdp, policy: SoftmaxPolicy, coord: int) -> float:
    _check_coord(policy, coord)
    return float(tree_cr_bounds(mdp, policy)[coord])


def _check_coord(policy: SoftmaxPolicy, coord: int) -> None:
    if not 0 <= coord < policy.dim:
        raise IndexError(f"coordinate {coord} out of range for dimension {policy.dim}")
