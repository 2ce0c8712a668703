import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgope.crbound import NotATreeError, check_tree, dag_cr_bound, dag_cr_bounds, tree_cr_bound, tree_cr_bounds
from pgope.generate import chain, random_dag, tree
from pgope.mdp import TabularMdp
from pgope.qmodel import ExactQModel, make_qmodel
from pgope.variance import brute_force_covariance, drpg_covariance, estimator_for

from conftest import policy_for


def _drpg_var(mdp, p):
    return np.diag(brute_force_covariance(mdp, p, estimator_for("drpg", p, ExactQModel(mdp))))


def test_tree_certificate(stoch_tree):
    cert = check_tree(stoch_tree)
    assert cert.is_tree
    leaf = int(stoch_tree.states_in_layer(2)[5])
    path = cert.root_path(leaf)
    assert path[0][0] == stoch_tree.start_state and len(path) == 2


def test_shared_successor_is_rejected():
    m = tree(1, 2, seed=0)
    P = np.array(m.transitions)
    # send (s=0, a=1) into the child of (s=0, a=0)
    child0 = int(np.flatnonzero(P[0, 0])[0])
    P[0, 1] = 0.0
    P[0, 1, child0] = 1.0
    bad = TabularMdp(m.num_states, m.num_actions, m.horizon, m.gamma, 0, m.layer_of, P,
                     m.reward_values, m.reward_probs)
    cert = check_tree(bad)
    assert not cert.is_tree and cert.violating_state == child0
    assert f"state {child0}" in cert.reason
    with pytest.raises(NotATreeError):
        cert.root_path(child0)


def test_chain_with_two_actions_is_not_a_tree():
    cert = check_tree(chain(3, num_actions=2))
    assert not cert.is_tree
    assert "(s=0, a=0)" in cert.reason and "(s=0, a=1)" in cert.reason
    with pytest.raises(NotATreeError):
        tree_cr_bounds(chain(3, num_actions=2), policy_for(chain(3, num_actions=2)))


def test_deterministic_tree_bound_is_zero():
    m = tree(1, 3, seed=5)
    p = policy_for(m)
    assert np.abs(tree_cr_bounds(m, p)).max() < 1e-15
    assert np.abs(dag_cr_bounds(m, p)).max() < 1e-15


def test_one_action_tree_bound_is_zero():
    m = tree(2, 2, num_actions=1, stochastic_rewards=True, seed=1)
    p = policy_for(m)
    assert np.all(tree_cr_bounds(m, p) == 0)


@pytest.mark.parametrize("horizon", [1, 2])
def test_bound_attained_by_exact_drpg_on_trees(horizon):
    m = tree(2, horizon, stochastic_rewards=True, seed=4)
    p = policy_for(m)
    bound = tree_cr_bounds(m, p)
    model = ExactQModel(m)
    assert np.abs(bound - np.diag(drpg_covariance(m, p, model))).max() <= 1e-8
    assert np.abs(bound - _drpg_var(m, p)).max() <= 1e-8


@given(st.integers(1, 2), st.integers(0, 2), st.integers(0, 200))
def test_tree_and_dag_forms_agree(branching, horizon, seed):
    m = tree(branching, horizon, stochastic_rewards=True, seed=seed)
    p = policy_for(m, seed)
    assert np.abs(tree_cr_bounds(m, p) - dag_cr_bounds(m, p)).max() <= 1e-10


def test_deterministic_dag_bound_is_zero(det_dag):
    assert np.abs(dag_cr_bounds(det_dag, policy_for(det_dag))).max() < 1e-15


@given(st.integers(0, 300))
def test_dag_bound_below_estimator_variances(seed):
    m = random_dag(2, 2, seed=seed)
    p = policy_for(m, seed)
    bound = dag_cr_bounds(m, p)
    assert np.all(_drpg_var(m, p) >= bound - 1e-9)
    for name, variant in (("vanilla_pg", None), ("drpg", "constant"), ("drpg", "frozen-linear")):
        model = None if variant is None else make_qmodel(variant, m, p, rng=seed, noise=0.3)
        var = np.diag(brute_force_covariance(m, p, estimator_for(name, p, model)))
        assert np.all(var >= bound - 1e-9)


def test_single_coordinate_accessors(stoch_tree):
    p = policy_for(stoch_tree)
    full = dag_cr_bounds(stoch_tree, p)
    assert dag_cr_bound(stoch_tree, p, 3) == full[3]
    assert tree_cr_bound(stoch_tree, p, 3) == pytest.approx(full[3], abs=1e-12)
    with pytest.raises(IndexError):
        dag_cr_bound(stoch_tree, p, p.dim)
