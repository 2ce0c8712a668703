"""Approximate value models supplying Q~, V~, grad Q~ and grad V~.

A model is a function of the policy parameters: every query takes the policy
at which it is evaluated. The variants differ in how Q~ moves with theta:

* ``zero``: Q~ = 0 everywhere.
* ``constant``: a fixed table, so grad Q~ = 0.
* ``state-baseline``: Q~(s, a) = b(s), also constant in theta.
* ``frozen-linear``: first-order extrapolation around an anchor theta with a
  stored gradient table; grad Q~ is the stored table at every theta.
* ``exact``: the true Q of the queried policy (backward induction), with its
  exact gradient. Optional noise is drawn once at construction and enters as
  ``Q + noise_q + <noise_g, theta - anchor>`` so that grad Q~ = grad Q +
  noise_g remains the true derivative of the model.

Queries at the terminal (``TERMINAL``) return 0.
"""
from __future__ import annotations

import csv
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp, value_gradients, value_tables
from .policy import SoftmaxPolicy

TERMINAL = -1
VARIANTS = ("zero", "constant", "state-baseline", "frozen-linear", "exact")


class QModel:
    variant: str = ""

    def q_table(self, policy: SoftmaxPolicy) -> np.ndarray:
        """(S, A) table of Q~ at ``policy``."""
        raise NotImplementedError

    def q_grad_table(self, policy: SoftmaxPolicy) -> np.ndarray:
        """(S, A, d) table of grad Q~ at ``policy``."""
        raise NotImplementedError

    def v_table(self, policy: SoftmaxPolicy) -> np.ndarray:
        return (policy.probs * self.q_table(policy)).sum(axis=-1)

    def v_grad_table(self, policy: SoftmaxPolicy) -> np.ndarray:
        # both the action distribution and Q~ itself move with theta
        q = self.q_table(policy)
        dq = self.q_grad_table(policy)
        weighted = policy.score_table * q[..., None] + dq
        return np.einsum("sa,sad->sd", policy.probs, weighted)

    def q_value(self, policy: SoftmaxPolicy, s: int, a: int) -> float:
        if s == TERMINAL:
            return 0.0
        return float(self.q_table(policy)[s, a])

    def v_value(self, policy: SoftmaxPolicy, s: int) -> float:
        if s == TERMINAL:
            return 0.0
        return float(self.v_table(policy)[s])

    def q_grad(self, policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
        if s == TERMINAL:
            return np.zeros(policy.dim)
        return self.q_grad_table(policy)[s, a].copy()

    def v_grad(self, policy: SoftmaxPolicy, s: int) -> np.ndarray:
        if s == TERMINAL:
            return np.zeros(policy.dim)
        return self.v_grad_table(policy)[s].copy()

    def to_csv(self, path, policy: SoftmaxPolicy) -> None:
        """Dump Q~, V~ and the norm of grad Q~ per (s, a)."""
        q, v, dq = self.q_table(policy), self.v_table(policy), self.q_grad_table(policy)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "action", "q", "v", "q_grad_norm"])
            for s in range(q.shape[0]):
                for a in range(q.shape[1]):
                    writer.writerow([s, a, repr(float(q[s, a])), repr(float(v[s])),
                                     repr(float(np.linalg.norm(dq[s, a])))])


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ZeroQModel(QModel):
    num_states: int
    num_actions: int
    variant = "zero"

    def q_table(self, policy):
        return np.zeros((self.num_states, self.num_actions))

    def q_grad_table(self, policy):
        return np.zeros((self.num_states, self.num_actions, policy.dim))


@dataclass(frozen=True, eq=False)
class ConstantQModel(QModel):
    table: np.ndarray
    variant = "constant"

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen(self.table))

    @classmethod
    def snapshot(cls, model: QModel, policy: SoftmaxPolicy) -> ConstantQModel:
        """Freeze ``model``'s Q~ values at ``policy``, discarding its theta dependence."""
        return cls(model.q_table(policy))

    def q_table(self, policy):
        return self.table.copy()

    def q_grad_table(self, policy):
        return np.zeros(self.table.shape + (policy.dim,))


@dataclass(frozen=True, eq=False)
class StateBaselineQModel(QModel):
    baseline: np.ndarray
    num_actions: int
    variant = "state-baseline"

    def __post_init__(self):
        object.__setattr__(self, "baseline", _frozen(self.baseline))

    def q_table(self, policy):
        return np.repeat(self.baseline[:, None], self.num_actions, axis=1)

    def v_table(self, policy):
        return self.baseline.copy()

    def q_grad_table(self, policy):
        return np.zeros((self.baseline.shape[0], self.num_actions, policy.dim))


@dataclass(frozen=True, eq=False)
class FrozenLinearQModel(QModel):
    table: np.ndarray
    grad_table: np.ndarray
    anchor: np.ndarray
    variant = "frozen-linear"

    def __post_init__(self):
        for name in ("table", "grad_table", "anchor"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.grad_table.shape != self.table.shape + self.anchor.shape:
            raise ValueError("grad_table must have shape (S, A, d) matching table and anchor")

    def q_table(self, policy):
        return self.table + self.grad_table @ (policy.theta - self.anchor)

    def q_grad_table(self, policy):
        return self.grad_table.copy()


@dataclass(frozen=True, eq=False)
class ExactQModel(QModel):
    mdp: TabularMdp
    noise_q: np.ndarray | None = None
    noise_grad: np.ndarray | None = None
    anchor: np.ndarray | None = None
    cache_size: int = 512
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    variant = "exact"

    @classmethod
    def noisy(cls, mdp: TabularMdp, policy: SoftmaxPolicy, q_noise: float, grad_noise: float,
              rng) -> ExactQModel:
        """Exact model plus independent Gaussian perturbations of Q~ and grad Q~."""
        rng = np.random.default_rng(rng)
        S, A, d = mdp.num_states, mdp.num_actions, policy.dim
        return cls(mdp, _frozen(q_noise * rng.standard_normal((S, A))),
                   _frozen(grad_noise * rng.standard_normal((S, A, d))), _frozen(policy.theta))

    @property
    def is_noisy(self) -> bool:
        return self.noise_q is not None or self.noise_grad is not None

    def _exact(self, policy):
        key = policy.theta.tobytes()
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        tables = value_tables(self.mdp, policy)
        grads = value_gradients(self.mdp, policy, tables)
        with self._lock:
            self._cache[key] = (tables.q, grads.dq)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return tables.q, grads.dq

    def q_table(self, policy):
        q = self._exact(policy)[0].copy()
        if self.noise_q is not None:
            q = q + self.noise_q
        if self.noise_grad is not None:
            q = q + self.noise_grad @ (policy.theta - self.anchor)
        return q

    def q_grad_table(self, policy):
        dq = self._exact(policy)[1].copy()
        if self.noise_grad is not None:
            dq = dq + self.noise_grad
        return dq


def make_qmodel(variant: str, mdp: TabularMdp, policy: SoftmaxPolicy, rng=0, noise: float = 0.0,
                grad_noise: float | None = None) -> QModel:
    """Build a model of the given variant around ``policy``.

    Tables that need content (constant, state-baseline, frozen-linear) are the
    exact DP quantities at ``policy`` plus Gaussian noise of scale ``noise``.
    For frozen-linear the stored gradient gets noise of scale ``grad_noise``
    (defaults to ``noise``). ``exact`` with nonzero noise gives the perturbed
    exact model.
    """
    grad_noise = noise if grad_noise is None else grad_noise
    rng = np.random.default_rng(rng)
    S, A, d = mdp.num_states, mdp.num_actions, policy.dim
    if variant == "zero":
        return ZeroQModel(S, A)
    if variant == "exact":
        if noise == 0 and grad_noise == 0:
            return ExactQModel(mdp)
        return ExactQModel.noisy(mdp, policy, noise, grad_noise, rng)
    tables = value_tables(mdp, policy)
    if variant == "constant":
        return ConstantQModel(tables.q + noise * rng.standard_normal((S, A)))
    if variant == "state-baseline":
        return StateBaselineQModel(tables.v + noise * rng.standard_normal(S), A)
    if variant == "frozen-linear":
        dq = value_gradients(mdp, policy, tables).dq
        return FrozenLinearQModel(tables.q + noise * rng.standard_normal((S, A)),
                                  dq + grad_noise * rng.standard_normal((S, A, d)), policy.theta)
    raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
