import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgope.generate import random_dag
from pgope.mdp import value_tables
from pgope.qmodel import VARIANTS, ConstantQModel, ExactQModel, ZeroQModel, make_qmodel
from pgope.variance import (DETERMINISTIC_ROWS, brute_force_covariance, deterministic_covariance,
                            drpg_covariance, drpg_covariance_terms, estimator_for, mc_covariance,
                            reduction_ratio, variance_table, weighted_covariance)

from conftest import policy_for, small_mdps


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_weighted_covariance_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 3))
    w = rng.dirichlet(np.ones(50))
    expected = np.cov(x.T, aweights=w, bias=True)
    assert np.allclose(weighted_covariance(x, w), expected, atol=1e-14)


def test_constant_estimator_has_zero_covariance(dag, policy):
    const = lambda tr: np.ones(tr.batch_shape + (policy.dim,))
    assert np.abs(brute_force_covariance(dag, policy, const)).max() <= 1e-28
    assert mc_covariance(dag, policy, const, 1000, 0).trace == 0.0


def test_single_action_gives_zero_matrix():
    m = random_dag(2, 2, num_actions=1, seed=0)
    p = policy_for(m)
    for name in ("reinforce", "vanilla_pg", "drpg"):
        cov = brute_force_covariance(m, p, estimator_for(name, p, ExactQModel(m)))
        assert not cov.any()


def test_vanilla_above_exact_drpg(dag, policy):
    tv = np.trace(brute_force_covariance(dag, policy, estimator_for("vanilla_pg", policy, None)))
    td = np.trace(brute_force_covariance(dag, policy, estimator_for("drpg", policy, ExactQModel(dag))))
    assert tv >= td > 0


@pytest.mark.parametrize("variant", VARIANTS)
def test_closed_form_matches_brute_force(dag, policy, variant):
    model = make_qmodel(variant, dag, policy, rng=5, noise=0.3)
    terms = drpg_covariance_terms(dag, policy, model)
    bf = brute_force_covariance(dag, policy, estimator_for("drpg", policy, model))
    assert _rel(terms.total, bf) <= 1e-8
    for m in (terms.reward, terms.action, terms.transition):
        assert np.linalg.eigvalsh(m).min() >= -1e-9


def test_closed_form_special_cases(dag, policy):
    zero = ZeroQModel(dag.num_states, dag.num_actions)
    bf = brute_force_covariance(dag, policy, estimator_for("vanilla_pg", policy, None))
    assert _rel(drpg_covariance(dag, policy, zero), bf) <= 1e-8
    const = ConstantQModel(value_tables(dag, policy).q)
    bf = brute_force_covariance(dag, policy, estimator_for("trajcv_pg", policy, const))
    assert _rel(drpg_covariance(dag, policy, const), bf) <= 1e-8


@given(small_mdps(), st.sampled_from(VARIANTS), st.integers(0, 100))
def test_closed_form_on_random_mdps(mdp, variant, seed):
    p = policy_for(mdp, seed)
    model = make_qmodel(variant, mdp, p, rng=seed, noise=0.4)
    bf = brute_force_covariance(mdp, p, estimator_for("drpg", p, model))
    assert np.abs(drpg_covariance(mdp, p, model) - bf).max() <= 1e-8 * max(1.0, np.abs(bf).max())


# zero variance iff deterministic rewards, deterministic transitions and exact Q~, grad Q~

def test_zero_variance_when_everything_is_exact(det_dag):
    p = policy_for(det_dag, 2)
    terms = drpg_covariance_terms(det_dag, p, ExactQModel(det_dag))
    assert np.trace(terms.total) <= 1e-18
    bf = brute_force_covariance(det_dag, p, estimator_for("drpg", p, ExactQModel(det_dag)))
    assert np.trace(bf) <= 1e-18


@pytest.mark.parametrize("case", ["reward noise", "transition noise", "wrong Q", "wrong grad Q"])
def test_positive_variance_when_any_condition_fails(case):
    if case == "reward noise":
        m = random_dag(2, 2, next_support=1, stochastic_rewards=True, seed=3)
    elif case == "transition noise":
        m = random_dag(2, 2, stochastic_rewards=False, seed=3)
    else:
        m = random_dag(2, 2, deterministic=True, seed=3)
    p = policy_for(m, 1)
    model = ExactQModel(m)
    if case == "wrong Q":
        model = ExactQModel.noisy(m, p, 0.3, 0.0, 0)
    elif case == "wrong grad Q":
        model = ConstantQModel(value_tables(m, p).q)
    terms = drpg_covariance_terms(m, p, model)
    assert np.trace(terms.total) > 1e-6
    bf = brute_force_covariance(m, p, estimator_for("drpg", p, model))
    assert _rel(terms.total, bf) <= 1e-8


@pytest.mark.parametrize("row,estimator,model", [
    ("step_is", "vanilla_pg", None), ("baseline", "baseline_pg", "exact"),
    ("trajcv", "trajcv_pg", "exact"), ("drpg", "drpg", "exact")])
def test_deterministic_formulas(det_dag, row, estimator, model):
    p = policy_for(det_dag, 4)
    m = ExactQModel(det_dag) if model else None
    bf = brute_force_covariance(det_dag, p, estimator_for(estimator, p, m))
    assert np.abs(deterministic_covariance(det_dag, p, row) - bf).max() <= 1e-8


def test_deterministic_formula_errors(dag, det_dag, policy):
    with pytest.raises(ValueError, match="deterministic"):
        deterministic_covariance(dag, policy, "step_is")
    with pytest.raises(ValueError, match="unknown row"):
        deterministic_covariance(det_dag, policy_for(det_dag), "wis")
    assert set(DETERMINISTIC_ROWS) == {"step_is", "baseline", "trajcv", "drpg"}


def test_monte_carlo_converges_and_is_reproducible(dag, policy):
    est = estimator_for("vanilla_pg", policy, None)
    exact = np.trace(brute_force_covariance(dag, policy, est))
    for n in (1_000, 10_000, 100_000):
        mc = mc_covariance(dag, policy, est, n, seed=3)
        assert abs(mc.trace - exact) <= 5 * mc.trace_se
    again = mc_covariance(dag, policy, est, 100_000, seed=3)
    assert np.array_equal(again.cov, mc.cov)
    assert mc.mse > 0
    with pytest.raises(ValueError):
        mc_covariance(dag, policy, est, 1, 0)


def test_reduction_ratios(det_dag):
    p = policy_for(det_dag, 5)
    rows = variance_table(det_dag, p, {"exact": ExactQModel(det_dag)}, ["vanilla_pg", "drpg"])
    by = {r.estimator: r for r in rows}
    assert by["vanilla_pg"].reduction_vs_vanilla == 0.0
    assert abs(by["drpg"].reduction_vs_vanilla - 1.0) <= 1e-9
    assert all(r.method == "enumeration" for r in rows)
    assert np.isnan(reduction_ratio(0.0, 0.0))


def test_variance_table_falls_back_to_monte_carlo(dag, policy, monkeypatch):
    monkeypatch.setenv("PGOPE_ENUM_CAP", "100")
    rows = variance_table(dag, policy, {}, ["vanilla_pg"], n_samples=2_000, seed=0)
    assert rows[0].method == "monte-carlo"


def test_estimator_for_requires_model(policy):
    with pytest.raises(ValueError):
        estimator_for("drpg", policy, None)
