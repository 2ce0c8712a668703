"""Tabular softmax policies.

The parameter vector ``theta`` is the logit table flattened state-major,
action-minor: coordinate ``s * num_actions + a`` is the logit of action ``a``
in state ``s``. Every gradient vector in the package uses this order.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi(a|s) = exp(logit[s, a]) / sum_b exp(logit[s, b])."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
            raise ValueError(f"logits must be a non-empty (S, A) table, got shape {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> SoftmaxPolicy:
        return cls(np.zeros((num_states, num_actions)))

    @classmethod
    def random(cls, num_states: int, num_actions: int, rng, scale: float = 1.0) -> SoftmaxPolicy:
        rng = np.random.default_rng(rng)
        return cls(scale * rng.standard_normal((num_states, num_actions)))

    @classmethod
    def from_theta(cls, theta, num_states: int, num_actions: int) -> SoftmaxPolicy:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (num_states * num_actions,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({num_states * num_actions},)")
        return cls(theta.reshape(num_states, num_actions))

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def dim(self) -> int:
        return self.logits.size

    @property
    def theta(self) -> np.ndarray:
        return self.logits.reshape(-1)

    @cached_property
    def probs(self) -> np.ndarray:
        """(S, A) table of action probabilities."""
        p = _softmax_rows(self.logits)
        p.setflags(write=False)
        return p

    @cached_property
    def score_table(self) -> np.ndarray:
        """(S, A, d) table of grad log pi(a|s).

        Only the block of coordinates belonging to ``s`` is nonzero; within it
        coordinate (s, b) equals 1{b = a} - pi(b|s).
        """
        S, A = self.logits.shape
        table = np.zeros((S, A, S, A))
        block = np.eye(A)[None, :, :] - self.probs[:, None, :]
        table[np.arange(S), :, np.arange(S), :] = block
        table = table.reshape(S, A, S * A)
        table.setflags(write=False)
        return table

    def index(self, s: int, a: int) -> int:
        """Flat coordinate of the logit for (s, a)."""
        return s * self.num_actions + a

    def action_probs(self, s: int) -> np.ndarray:
        self._check_state(s)
        return self.probs[s].copy()

    def grad_log_prob(self, s: int, a: int) -> np.ndarray:
        self._check_state(s)
        if not 0 <= a < self.num_actions:
            raise IndexError(f"action {a} out of range for {self.num_actions} actions")
        return self.score_table[s, a].copy()

    def perturb(self, i: int, eps: float) -> SoftmaxPolicy:
        """Copy of the policy with theta[i] shifted by eps."""
        if not 0 <= i < self.dim:
            raise IndexError(f"coordinate {i} out of range for dimension {self.dim}")
        theta = self.theta.copy()
        theta[i] += eps
        return SoftmaxPolicy.from_theta(theta, self.num_states, self.num_actions)

    def _check_state(self, s: int) -> None:
        if not 0 <= s < self.num_states:
            raise IndexError(f"state {s} out of range for {self.num_states} states")

    def __repr__(self) -> str:
        return f"SoftmaxPolicy(num_states={self.num_states}, num_actions={self.num_actions})"
