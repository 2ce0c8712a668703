"""Finite differences of OPE estimators on fixed trajectories.

Differentiating an OPE estimator with respect to the target policy, at
target = behavior, reproduces a policy-gradient estimator trajectory by
trajectory. ``verify_correspondence`` checks this for each estimator pair.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ope, pg
from .mdp import TabularMdp, Trajectory, enumerate_trajectories
from .policy import SoftmaxPolicy
from .qmodel import ConstantQModel, QModel

DEFAULT_EPS = 1e-5

OpeFn = Callable[[Trajectory, SoftmaxPolicy, SoftmaxPolicy], np.ndarray]


@dataclass(frozen=True, eq=False)
class CorrespondenceReport:
    pair: str
    eps: float
    fd: np.ndarray
    pg: np.ndarray
    deviations: np.ndarray
    probs: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.deviations.size else 0.0

    @property
    def num_trajectories(self) -> int:
        return int(self.deviations.shape[0])


def finite_diff_ope_gradient(estimator: OpeFn, traj: Trajectory, policy: SoftmaxPolicy,
                             eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of ``estimator(traj, policy, target)`` in the target's theta."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grad = np.empty(traj.batch_shape + (policy.dim,))
    for i in range(policy.dim):
        up = np.asarray(estimator(traj, policy, policy.perturb(i, eps)), dtype=float)
        down = np.asarray(estimator(traj, policy, policy.perturb(i, -eps)), dtype=float)
        if not (np.all(np.isfinite(up)) and np.all(np.isfinite(down))):
            raise FloatingPointError(f"non-finite estimator value at coordinate {i}")
        grad[..., i] = (up - down) / (2 * eps)
    return grad


def _pair_functions(pair: str, side) -> tuple[OpeFn, Callable[[Trajectory, SoftmaxPolicy], np.ndarray]]:
    if pair == "traj-is":
        return ope.traj_is, pg.reinforce
    if pair == "step-is":
        return ope.step_is, pg.vanilla_pg
    if pair == "baseline":
        b = np.asarray(side, dtype=float)
        return (lambda tr, beh, tgt: ope.baseline_ope(tr, beh, tgt, b),
                lambda tr, pol: pg.baseline_pg(tr, pol, b))
    if pair in ("dr", "dr-recursive"):
        if not isinstance(side, QModel):
            raise TypeError(f"pair {pair!r} needs a QModel")
        dr = ope.dr_ope_expanded if pair == "dr" else ope.dr_ope_recursive
        est = pg.drpg if pair == "dr" else pg.drpg_recursive
        return (lambda tr, beh, tgt: dr(tr, beh, tgt, side),
                lambda tr, pol: est(tr, pol, side))
    if pair == "dr-constant":
        if not isinstance(side, QModel):
            raise TypeError(f"pair {pair!r} needs a QModel")
        return (lambda tr, beh, tgt: ope.dr_ope_expanded(tr, beh, tgt, side),
                lambda tr, pol: pg.trajcv_pg(tr, pol, side))
    if pair == "actor-critic":
        f = np.asarray(side, dtype=float)
        return (lambda tr, beh, tgt: ope.actor_critic_ope(tr, beh, tgt, f),
                lambda tr, pol: pg.actor_critic_pg(tr, pol, f))
    raise KeyError(f"unknown estimator pair {pair!r}; expected one of {PAIRS}")


PAIRS = ("traj-is", "step-is", "baseline", "dr", "dr-recursive", "dr-constant", "actor-critic")


def verify_correspondence(pair: str, mdp: TabularMdp, policy: SoftmaxPolicy, side=None,
                          eps: float = DEFAULT_EPS) -> CorrespondenceReport:
    """Compare FD-of-OPE with the matching PG estimator on every enumerated trajectory.

    ``side`` is the baseline table (``baseline``), critic table
    (``actor-critic``) or QModel (``dr*``). For ``dr-constant`` the model is
    frozen at ``policy`` first, so the OPE side sees a theta-independent Q~.
    """
    if pair == "dr-constant" and isinstance(side, QModel) and not isinstance(side, ConstantQModel):
        side = ConstantQModel.snapshot(side, policy)
    ope_fn, pg_fn = _pair_functions(pair, side)
    dist = enumerate_trajectories(mdp, policy)
    fd = finite_diff_ope_gradient(ope_fn, dist.trajectories, policy, eps)
    est = pg_fn(dist.trajectories, policy)
    deviations = np.abs(fd - est).max(axis=-1)
    return CorrespondenceReport(pair, eps, fd, est, deviations, dist.probs)
