import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pgope.generate import random_dag, tree
from pgope.mdp import TabularMdp
from pgope.policy import SoftmaxPolicy

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def dag():
    """3 states per layer, 2 actions, T=3, stochastic rewards and transitions."""
    return random_dag(3, 3, seed=1)


@pytest.fixture(scope="session")
def det_dag():
    return random_dag(3, 3, seed=2, deterministic=True, stochastic_rewards=False)


@pytest.fixture(scope="session")
def stoch_tree():
    return tree(2, 2, stochastic_rewards=True, seed=4)


@pytest.fixture(scope="session")
def policy(dag):
    return SoftmaxPolicy.random(dag.num_states, dag.num_actions, 0)


def policy_for(mdp, seed=0, scale=1.0):
    return SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, seed, scale)


@st.composite
def small_mdps(draw, deterministic=None):
    det = draw(st.booleans()) if deterministic is None else deterministic
    return random_dag(
        draw(st.integers(1, 3)), draw(st.integers(0, 2)),
        num_actions=draw(st.integers(1, 3)),
        gamma=draw(st.sampled_from([1.0, 0.9, 0.5])),
        stochastic_rewards=not det, deterministic=det,
        seed=draw(st.integers(0, 10_000)))


# ---- independent oracles ----

def naive_trajectories(mdp: TabularMdp, policy: SoftmaxPolicy):
    """Depth-first enumeration with python loops: list of (states, actions, rewards, prob)."""
    out = []

    def rec(s, t, states, actions, rewards, p):
        for a in range(mdp.num_actions):
            pa = p * policy.probs[s, a]
            for value, pr in zip(mdp.reward_values[s, a], mdp.reward_probs[s, a]):
                if pr <= 0:
                    continue
                st_, ac, rw = states + [s], actions + [a], rewards + [value]
                if t == mdp.horizon:
                    out.append((st_, ac, rw, pa * pr))
                    continue
                for nxt in range(mdp.num_states):
                    pn = mdp.transitions[s, a, nxt]
                    if pn > 0:
                        rec(nxt, t + 1, st_, ac, rw, pa * pr * pn)

    rec(mdp.start_state, 0, [], [], [], 1.0)
    return out


def central_diff(f, theta, eps=1e-5):
    theta = np.asarray(theta, dtype=float)
    grads = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        grads.append((np.asarray(f(theta + e)) - np.asarray(f(theta - e))) / (2 * eps))
    return np.stack(grads, axis=-1)


# ---- acceptance reporting ----

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
