import threading

import numpy as np
import pytest

from pgope.mdp import enumerate_trajectories, value_gradients, value_tables
from pgope.policy import SoftmaxPolicy
from pgope.qmodel import (TERMINAL, VARIANTS, ConstantQModel, ExactQModel, FrozenLinearQModel,
                          StateBaselineQModel, ZeroQModel, make_qmodel)

from conftest import central_diff


@pytest.fixture(scope="module")
def models(dag, policy):
    return {v: make_qmodel(v, dag, policy, rng=3, noise=0.2) for v in VARIANTS}


def _at(dag, theta):
    return SoftmaxPolicy.from_theta(theta, dag.num_states, dag.num_actions)


def test_zero_model(dag, policy):
    m = ZeroQModel(dag.num_states, dag.num_actions)
    assert m.q_value(policy, 3, 1) == 0.0 and m.v_value(policy, 3) == 0.0
    assert not m.q_grad(policy, 3, 1).any() and not m.v_grad(policy, 3).any()


@pytest.mark.parametrize("variant", VARIANTS)
def test_terminal_queries_are_zero(models, policy, variant):
    m = models[variant]
    assert m.q_value(policy, TERMINAL, 0) == 0.0
    assert m.v_value(policy, TERMINAL) == 0.0
    assert np.all(m.q_grad(policy, TERMINAL, 1) == 0)
    assert np.all(m.v_grad(policy, TERMINAL) == 0)


def test_constant_model_ignores_theta(dag, policy, models):
    m = models["constant"]
    other = SoftmaxPolicy.random(dag.num_states, dag.num_actions, 42)
    assert np.array_equal(m.q_table(policy), m.q_table(other))
    assert not m.q_grad_table(other).any()
    # grad V~ = sum_a Q~(s, a) grad pi(a|s)
    grad_pi = policy.probs[..., None] * policy.score_table
    expected = np.einsum("sa,sad->sd", m.q_table(policy), grad_pi)
    assert np.allclose(m.v_grad_table(policy), expected, atol=1e-14)


def test_state_baseline_values(dag, policy):
    b = np.random.default_rng(0).normal(size=dag.num_states)
    m = StateBaselineQModel(b, dag.num_actions)
    assert np.allclose(m.v_table(policy), b)
    assert np.allclose(m.v_table(policy), (policy.probs * m.q_table(policy)).sum(axis=1))
    assert np.allclose(m.v_grad_table(policy), 0, atol=1e-15)


def test_frozen_linear_extrapolation(dag, policy, models):
    m = models["frozen-linear"]
    assert np.array_equal(m.q_table(policy), m.table)
    theta = policy.theta + 0.1
    q = m.q_table(_at(dag, theta))
    assert np.allclose(q, m.table + m.grad_table @ np.full(policy.dim, 0.1))
    fd = central_diff(lambda th: m.q_table(_at(dag, th)), policy.theta)
    assert np.abs(fd - m.grad_table).max() < 1e-8
    with pytest.raises(ValueError):
        FrozenLinearQModel(m.table, m.grad_table[..., :3], m.anchor)


def test_exact_model_matches_dp(dag, policy):
    m = ExactQModel(dag)
    tables = value_tables(dag, policy)
    assert np.abs(m.q_table(policy) - tables.q).max() < 1e-12
    assert np.abs(m.v_table(policy) - tables.v).max() < 1e-12
    last = dag.states_in_layer(dag.horizon)
    assert np.all(m.q_grad_table(policy)[last] == 0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_are_derivatives_of_values(dag, policy, models, variant):
    """grad Q~ and grad V~ match central differences of the model's own Q~ and V~."""
    m = models[variant]
    fd_q = central_diff(lambda th: m.q_table(_at(dag, th)), policy.theta)
    fd_v = central_diff(lambda th: m.v_table(_at(dag, th)), policy.theta)
    if variant not in ("constant", "state-baseline"):
        assert np.abs(fd_q - m.q_grad_table(policy)).max() < 1e-6
    assert np.abs(fd_v - m.v_grad_table(policy)).max() < 1e-6


def test_noisy_exact_model(dag, policy, models):
    m = models["exact"]
    assert m.is_noisy
    exact = value_gradients(dag, policy)
    assert np.abs(m.q_grad_table(policy) - exact.dq).max() > 1e-3
    assert np.abs(m.q_table(policy) - value_tables(dag, policy).q).max() > 1e-3


def test_exact_model_cache_is_bounded_and_thread_safe(dag, policy):
    m = ExactQModel(dag, cache_size=4)
    pols = [policy.perturb(i, 1e-3) for i in range(8)]
    results = [None] * 8

    def work(k):
        results[k] = m.q_table(pols[k])

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert len(m._cache) <= 4
    for k in range(8):
        assert np.array_equal(results[k], value_tables(dag, pols[k]).q)


def test_snapshot_and_csv(tmp_path, dag, policy, models):
    snap = ConstantQModel.snapshot(models["exact"], policy)
    assert np.array_equal(snap.q_table(policy), models["exact"].q_table(policy))
    path = tmp_path / "q.csv"
    snap.to_csv(path, policy)
    lines = path.read_text().splitlines()
    assert lines[0] == "state,action,q,v,q_grad_norm"
    assert len(lines) == 1 + dag.num_states * dag.num_actions


def test_unknown_variant(dag, policy):
    with pytest.raises(ValueError, match="unknown model variant"):
        make_qmodel("neural", dag, policy)


@pytest.mark.parametrize("variant", VARIANTS)
def test_v_is_policy_average_of_q(models, policy, variant):
    m = models[variant]
    q, dq = m.q_table(policy), m.q_grad_table(policy)
    assert np.abs(m.v_table(policy) - (policy.probs * q).sum(axis=1)).max() <= 1e-12
    product_rule = np.einsum("sa,sad->sd", policy.probs, policy.score_table * q[..., None] + dq)
    assert np.abs(m.v_grad_table(policy) - product_rule).max() <= 1e-12


def test_exact_q_gradient_matches_enumeration(dag, policy):
    """grad Q(s, a) = E[sum_{k >= 1} score_k G_k | s_0 = s, a_0 = a] over continuations."""
    from pgope import pg
    dq = ExactQModel(dag).q_grad_table(policy)
    for s in (0, 2, 5):
        for a in range(dag.num_actions):
            dist = enumerate_trajectories(dag, policy, start=s, first_action=a)
            tr = dist.trajectories
            terms = pg.scores(tr, policy)[:, 1:] * pg.reward_to_go(tr)[:, 1:, None]
            assert np.abs(dist.expectation(terms.sum(axis=1)) - dq[s, a]).max() <= 1e-12
