"""Exact, enumeration-based checks of policy-gradient estimators derived from
off-policy evaluation estimators on layered tabular MDPs."""
from .mdp import TabularMdp, enumerate_trajectories, exact_policy_gradient, exact_return
from .policy import SoftmaxPolicy
from .qmodel import make_qmodel

__all__ = ["TabularMdp", "SoftmaxPolicy", "enumerate_trajectories", "exact_policy_gradient", "exact_return",
           "make_qmodel"]
