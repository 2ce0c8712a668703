"""Verification suites run by the command line harness.

Each suite returns a list of ``Check`` records plus optional detail tables;
``run_suite`` writes them as CSV next to a plain-text summary.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ope, pg
from .crbound import check_tree, dag_cr_bounds, tree_cr_bounds
from .finite_diff import DEFAULT_EPS, verify_correspondence
from .mdp import TabularMdp, enumerate_trajectories, exact_policy_gradient, exact_return, value_tables
from .policy import SoftmaxPolicy
from .qmodel import ConstantQModel, QModel, make_qmodel
from .variance import (brute_force_covariance, estimator_for, mc_covariance, deterministic_covariance,
                       drpg_covariance_terms, variance_table)

log = logging.getLogger(__name__)

SUITES = ("correspondence", "unbiasedness", "variance", "crbound", "all")

CORRESPONDENCE_TOL = 1e-6
UNBIASED_TOL = 1e-10
BIAS_WITNESS = 1e-3
CLOSED_FORM_RTOL = 1e-8
PSD_TOL = -1e-9
ZERO_VAR_PATH_TOL = 1e-9
ZERO_VAR_TRACE_TOL = 1e-18
DETERMINISTIC_TOL = 1e-8
MC_SE = 5.0
MC_SE_FLOOR = 1e-12
CR_ATTAIN_TOL = 1e-8
CR_CONSISTENCY_TOL = 1e-10
CR_LOWER_TOL = 1e-9
LATTICE_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mdp_path: Path
    policy: dict = field(default_factory=lambda: {"random": {"seed": 0, "scale": 1.0}})
    model: dict = field(default_factory=lambda: {"variant": "exact", "noise": 0.3})
    estimators: list = field(default_factory=lambda: ["reinforce", "vanilla_pg", "baseline_pg",
                                                      "trajcv_pg", "drpg"])
    suite: str = "all"
    seed: int | None = 0
    samples: int = 100_000
    eps: float = DEFAULT_EPS

    @classmethod
    def load(cls, path, mdp_path=None) -> ExperimentConfig:
        """Read a JSON config; relative paths resolve against the config's directory."""
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if mdp_path is not None:
            data["mdp"] = str(Path(mdp_path).resolve())
        if "mdp" not in data:
            raise ConfigError("config needs an 'mdp' path")
        known = {"mdp", "policy", "model", "estimators", "suite", "seed", "samples", "eps"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(mdp_path=(path.parent / data["mdp"]).resolve())
        for key in known - {"mdp"}:
            if key in data:
                setattr(cfg, key, data[key])
        policy = cfg.policy
        if "logits_file" in policy:
            policy = dict(policy, logits_file=str((path.parent / policy["logits_file"]).resolve()))
            cfg.policy = policy
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.mdp_path.exists():
            raise ConfigError(f"MDP file not found: {self.mdp_path}")
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if "logits_file" in self.policy and not Path(self.policy["logits_file"]).exists():
            raise ConfigError(f"policy logits file not found: {self.policy['logits_file']}")
        if self.suite in ("variance", "all") and self.seed is None:
            raise ConfigError("a seed is required for suites that sample")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")

    def build_policy(self, mdp: TabularMdp) -> SoftmaxPolicy:
        S, A = mdp.num_states, mdp.num_actions
        if "logits" in self.policy:
            return SoftmaxPolicy(np.asarray(self.policy["logits"], dtype=float).reshape(S, A))
        if "logits_file" in self.policy:
            logits = json.loads(Path(self.policy["logits_file"]).read_text())
            return SoftmaxPolicy(np.asarray(logits, dtype=float).reshape(S, A))
        if "random" in self.policy:
            spec = self.policy["random"]
            return SoftmaxPolicy.random(S, A, spec.get("seed", 0), spec.get("scale", 1.0))
        return SoftmaxPolicy.uniform(S, A)


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool
    relation: str = "<="


def _le(suite, name, value, tol):
    value = float(value)
    return Check(suite, name, value, tol, bool(np.isfinite(value) and value <= tol), "<=")


def _ge(suite, name, value, tol):
    value = float(value)
    return Check(suite, name, value, tol, bool(np.isfinite(value) and value >= tol), ">=")


def standard_models(mdp: TabularMdp, policy: SoftmaxPolicy, noise: float = 0.3, seed: int = 0
                    ) -> dict[str, QModel]:
    """One model per variant, inexact ones perturbed by ``noise``, plus a noisy exact model."""
    models = {}
    for k, variant in enumerate(("zero", "constant", "state-baseline", "frozen-linear", "exact")):
        models[variant] = make_qmodel(variant, mdp, policy, rng=[seed, k],
                                      noise=0.0 if variant == "exact" else noise)
    models["exact-noisy"] = make_qmodel("exact", mdp, policy, rng=[seed, 99], noise=noise)
    return models


def lattice_deviations(mdp: TabularMdp, policy: SoftmaxPolicy, models: dict[str, QModel],
                       seed: int = 0) -> dict[str, float]:
    """Max pathwise deviation of each special-case identity over all enumerated trajectories."""
    dist = enumerate_trajectories(mdp, policy)
    tr = dist.trajectories
    target = SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, [seed, 5])
    zero, sb, const = models["zero"], models["state-baseline"], models["constant"]
    b = sb.baseline

    def dev(x, y):
        return float(np.abs(np.asarray(x) - np.asarray(y)).max())

    out = {
        "drpg[zero] == vanilla_pg": dev(pg.drpg(tr, policy, zero), pg.vanilla_pg(tr, policy)),
        "drpg[state-baseline] == baseline_pg": dev(pg.drpg(tr, policy, sb), pg.baseline_pg(tr, policy, b)),
        "drpg[constant] == trajcv_pg": dev(pg.drpg(tr, policy, const), pg.trajcv_pg(tr, policy, const)),
        "dr_ope[zero] == step_is": dev(ope.dr_ope_expanded(tr, policy, target, zero),
                                       ope.step_is(tr, policy, target)),
        "dr_ope[state-baseline] == baseline_ope": dev(ope.dr_ope_expanded(tr, policy, target, sb),
                                                      ope.baseline_ope(tr, policy, target, b)),
    }
    for label, model in models.items():
        out[f"drpg_recursive == drpg [{label}]"] = dev(pg.drpg_recursive(tr, policy, model),
                                                       pg.drpg(tr, policy, model))
        out[f"trajcv_pg == drpg[constant snapshot] [{label}]"] = dev(
            pg.trajcv_pg(tr, policy, model), pg.drpg(tr, policy, ConstantQModel.snapshot(model, policy)))
        out[f"dr_ope_recursive == dr_ope_expanded [{label}]"] = dev(
            ope.dr_ope_recursive(tr, policy, target, model), ope.dr_ope_expanded(tr, policy, target, model))
    return out


def lattice_checks(mdp, policy, models, seed):
    return [_le("correspondence", f"lattice: {name}", value, LATTICE_TOL)
            for name, value in lattice_deviations(mdp, policy, models, seed).items()]


def correspondence_suite(mdp, policy, seed, eps, noise):
    rng = np.random.default_rng([seed, 1])
    models = standard_models(mdp, policy, noise, seed)
    cases = [
        ("traj-is", "reinforce", None),
        ("step-is", "vanilla_pg", None),
        ("baseline", "baseline_pg", rng.normal(size=mdp.num_states)),
        ("dr", "drpg[frozen-linear]", models["frozen-linear"]),
        ("dr", "drpg[exact]", models["exact"]),
        ("dr-recursive", "drpg_recursive[exact-noisy]", models["exact-noisy"]),
        ("dr-constant", "trajcv_pg[constant]", models["constant"]),
        ("actor-critic", "actor_critic_pg", rng.normal(size=(mdp.num_states, mdp.num_actions))),
    ]
    checks = lattice_checks(mdp, policy, models, seed)
    rows = []
    for pair, label, side in cases:
        report = verify_correspondence(pair, mdp, policy, side, eps)
        checks.append(_le("correspondence", f"{pair}->{label} max deviation", report.max_deviation,
                          CORRESPONDENCE_TOL))
        rows += [(pair, label, n, repr(float(p)), repr(float(dev)))
                 for n, (p, dev) in enumerate(zip(report.probs, report.deviations))]
    detail = (["pair", "pg_estimator", "trajectory", "probability", "deviation"], rows)
    return checks, {"correspondence_trajectories.csv": detail}


def unbiasedness_suite(mdp, policy, seed, noise):
    rng = np.random.default_rng([seed, 2])
    dist = enumerate_trajectories(mdp, policy)
    tr = dist.trajectories
    grad = exact_policy_gradient(mdp, policy)
    J = exact_return(mdp, policy)
    models = standard_models(mdp, policy, noise, seed)
    checks = []

    def pg_check(name, values):
        checks.append(_le("unbiasedness", name, np.abs(dist.expectation(values) - grad).max(), UNBIASED_TOL))

    pg_check("reinforce", pg.reinforce(tr, policy))
    pg_check("vanilla_pg", pg.vanilla_pg(tr, policy))
    for k in range(3):
        pg_check(f"baseline_pg[random b #{k}]", pg.baseline_pg(tr, policy, rng.normal(size=mdp.num_states)))
    for label, model in models.items():
        pg_check(f"drpg[{label}]", pg.drpg(tr, policy, model))
        pg_check(f"trajcv_pg[{label}]", pg.trajcv_pg(tr, policy, model))

    # OPE side: behavior = policy, a different random target
    target = SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, [seed, 3])
    J_target = exact_return(mdp, target)
    ope_cases = [("traj_is", ope.traj_is(tr, policy, target)),
                 ("step_is", ope.step_is(tr, policy, target)),
                 ("baseline_ope", ope.baseline_ope(tr, policy, target, rng.normal(size=mdp.num_states)))]
    for label, model in standard_models(mdp, target, noise, seed).items():
        ope_cases.append((f"dr_ope_expanded[{label}]", ope.dr_ope_expanded(tr, policy, target, model)))
        ope_cases.append((f"dr_ope_recursive[{label}]", ope.dr_ope_recursive(tr, policy, target, model)))
    for name, values in ope_cases:
        checks.append(_le("unbiasedness", f"{name} vs J(target)", abs(dist.expectation(values) - J_target),
                          UNBIASED_TOL))

    q = value_tables(mdp, policy).q
    bias_exact = np.abs(dist.expectation(pg.actor_critic_pg(tr, policy, q)) - grad).max()
    checks.append(_le("unbiasedness", "actor_critic_pg[f = Q] bias", bias_exact, UNBIASED_TOL))
    f = rng.normal(size=q.shape)
    bias_random = np.abs(dist.expectation(pg.actor_critic_pg(tr, policy, f)) - grad).max()
    checks.append(_ge("unbiasedness", "actor_critic_pg[random f] bias", bias_random, BIAS_WITNESS))
    log.info("J = %.6f", J)
    return checks, {}


def variance_suite(mdp, policy, seed, noise, samples, estimators):
    models = standard_models(mdp, policy, noise, seed)
    checks = []
    for label, model in models.items():
        bf = brute_force_covariance(mdp, policy, estimator_for("drpg", policy, model))
        terms = drpg_covariance_terms(mdp, policy, model)
        # floor keeps the zero-variance case (both sides ~0) meaningful
        denom = max(np.linalg.norm(bf), 1e-12)
        checks.append(_le("variance", f"closed-form drpg covariance vs brute force [{label}] (rel. Frobenius)",
                          np.linalg.norm(terms.total - bf) / denom, CLOSED_FORM_RTOL))
        for term_name in ("reward", "action", "transition"):
            checks.append(_ge("variance", f"closed-form {term_name} term min eigenvalue [{label}]",
                              np.linalg.eigvalsh(getattr(terms, term_name)).min(), PSD_TOL))

    if mdp.is_deterministic:
        dist = enumerate_trajectories(mdp, policy)
        exact = models["exact"]
        est = pg.drpg(dist.trajectories, policy, exact)
        grad = exact_policy_gradient(mdp, policy)
        checks.append(_le("variance", "drpg[exact] per-trajectory deviation from exact gradient",
                          np.abs(est - grad).max(), ZERO_VAR_PATH_TOL))
        checks.append(_le("variance", "drpg[exact] covariance trace",
                          np.trace(brute_force_covariance(mdp, policy, estimator_for("drpg", policy, exact))),
                          ZERO_VAR_TRACE_TOL))
        constant = ConstantQModel.snapshot(exact, policy)
        tc = brute_force_covariance(mdp, policy, estimator_for("drpg", policy, constant))
        checks.append(_ge("variance", "drpg[constant exact Q] covariance trace", np.trace(tc), np.finfo(float).tiny))
        checks.append(_le("variance", "drpg[constant exact Q] vs E[sum gamma^2t Cov_t[dQ_t|s_t]]",
                          np.abs(tc - deterministic_covariance(mdp, policy, "trajcv")).max(), DETERMINISTIC_TOL))

    mc_rows = []
    for label, model in (("vanilla_pg", None), ("drpg[exact]", models["exact"])):
        name = "vanilla_pg" if model is None else "drpg"
        est = estimator_for(name, policy, model)
        bf_trace = np.trace(brute_force_covariance(mdp, policy, est))
        mc = mc_covariance(mdp, policy, est, samples, seed)
        gap = abs(mc.trace - bf_trace)
        # a zero-variance estimator has se ~ 1e-16 of pure rounding; floor it
        z = gap / max(mc.trace_se, MC_SE_FLOOR)
        checks.append(_le("variance", f"monte carlo trace {label} (standard errors)", z, MC_SE))
        mc_rows.append((label, samples, seed, repr(mc.trace), repr(mc.trace_se), repr(float(bf_trace)),
                        repr(mc.mse)))

    rows = variance_table(mdp, policy, models, estimators, samples, seed)
    table = [(r.estimator, r.model, repr(r.trace), repr(r.reduction_vs_vanilla)) for r in rows]
    return checks, {
        "variance_table.csv": (["estimator", "model", "trace", "reduction_vs_vanilla"], table),
        "monte_carlo.csv": (["estimator", "n_samples", "seed", "mc_trace", "mc_trace_se", "exact_trace", "mse"],
                            mc_rows),
    }


def crbound_suite(mdp, policy, seed, noise):
    models = standard_models(mdp, policy, noise, seed)
    bound = dag_cr_bounds(mdp, policy)
    drpg_var = np.diag(brute_force_covariance(mdp, policy, estimator_for("drpg", policy, models["exact"])))
    checks = []
    if check_tree(mdp).is_tree:
        tree = tree_cr_bounds(mdp, policy)
        checks.append(_le("crbound", "tree vs dag bound", np.abs(tree - bound).max(), CR_CONSISTENCY_TOL))
        checks.append(_le("crbound", "drpg[exact] variance vs tree bound", np.abs(drpg_var - tree).max(),
                          CR_ATTAIN_TOL))
    candidates = [("reinforce", None), ("vanilla_pg", None)]
    candidates += [("baseline_pg", m) for m in (models["state-baseline"], models["exact"])]
    candidates += [("trajcv_pg", models["constant"]), ("trajcv_pg", models["exact"])]
    candidates += [("drpg", m) for m in models.values()]
    for k, (name, model) in enumerate(candidates):
        var = np.diag(brute_force_covariance(mdp, policy, estimator_for(name, policy, model)))
        label = name if model is None else f"{name}[{model.variant}#{k}]"
        checks.append(_ge("crbound", f"{label} variance minus bound (min over coordinates)",
                          (var - bound).min(), -CR_LOWER_TOL))
    rows = [(i, repr(float(b)), repr(float(v)), repr(float(v - b))) for i, (b, v) in enumerate(zip(bound, drpg_var))]
    return checks, {"crbound.csv": (["coordinate", "bound", "drpg_variance", "gap"], rows)}


def run_checks(suite: str, mdp: TabularMdp, policy: SoftmaxPolicy, cfg: ExperimentConfig):
    noise = float(cfg.model.get("noise", 0.3))
    seed = int(cfg.seed or 0)
    parts = SUITES[:-1] if suite == "all" else (suite,)
    checks, details = [], {}
    for part in parts:
        log.info("running %s suite", part)
        if part == "correspondence":
            c, d = correspondence_suite(mdp, policy, seed, cfg.eps, noise)
        elif part == "unbiasedness":
            c, d = unbiasedness_suite(mdp, policy, seed, noise)
        elif part == "variance":
            c, d = variance_suite(mdp, policy, seed, noise, int(cfg.samples), list(cfg.estimators))
        else:
            c, d = crbound_suite(mdp, policy, seed, noise)
        checks += c
        details.update(d)
    return checks, details


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run_suite(cfg: ExperimentConfig, out_dir, suite: str | None = None) -> int:
    """Run a suite, write ``checks.csv``, detail CSVs and ``summary.txt``; return the exit status."""
    suite = suite or cfg.suite
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}")
    mdp = TabularMdp.load(cfg.mdp_path)
    policy = cfg.build_policy(mdp)
    checks, details = run_checks(suite, mdp, policy, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "checks.csv", ["suite", "check", "value", "relation", "tolerance", "passed"],
              [(c.suite, c.name, repr(c.value), c.relation, repr(c.tolerance), c.passed) for c in checks])
    for name, (header, rows) in details.items():
        write_csv(out / name, header, rows)
    failed = [c for c in checks if not c.passed]
    lines = [f"suite: {suite}", f"mdp: {cfg.mdp_path.name}", f"checks: {len(checks)}, failed: {len(failed)}", ""]
    lines += [f"{'PASS' if c.passed else 'FAIL'}  [{c.suite}] {c.name}: {c.value:.3e} {c.relation} {c.tolerance:.0e}"
              for c in checks]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return 0 if not failed else 1
