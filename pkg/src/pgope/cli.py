"""Command line entry point: ``pgope <command> ...``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .crbound import dag_cr_bounds
from .finite_diff import DEFAULT_EPS, PAIRS, verify_correspondence
from .generate import KINDS, generate_mdp
from .mdp import EnumerationLimitError, MdpValidationError, TabularMdp
from .policy import SoftmaxPolicy
from .qmodel import make_qmodel
from .suites import SUITES, ConfigError, ExperimentConfig, run_suite, standard_models
from .variance import brute_force_covariance, estimator_for, variance_table

log = logging.getLogger("pgope")


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _open_out(path):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


def _policy(mdp: TabularMdp, args) -> SoftmaxPolicy:
    if args.logits:
        logits = json.loads(Path(args.logits).read_text())
        return SoftmaxPolicy(np.asarray(logits, dtype=float).reshape(mdp.num_states, mdp.num_actions))
    return SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, args.policy_seed, args.policy_scale)


def _parse_param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.replace("-", "_"), json.loads(value)
    except json.JSONDecodeError:
        return key.replace("-", "_"), value


def cmd_suite(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    status = run_suite(cfg, args.out, args.command)
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return status


def cmd_verify(args) -> int:
    mdp = TabularMdp.load(args.mdp)
    policy = _policy(mdp, args)
    rng = np.random.default_rng(args.seed)
    side = None
    if args.pair == "baseline":
        side = rng.normal(size=mdp.num_states)
    elif args.pair == "actor-critic":
        side = rng.normal(size=(mdp.num_states, mdp.num_actions))
    elif args.pair.startswith("dr"):
        side = make_qmodel(args.model, mdp, policy, rng=rng, noise=args.noise)
    report = verify_correspondence(args.pair, mdp, policy, side, args.eps)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["trajectory", "probability", "deviation"])
        for n, (p, dev) in enumerate(zip(report.probs, report.deviations)):
            w.writerow([n, repr(float(p)), repr(float(dev))])
    log.info("%s: %d trajectories, max deviation %.3e", args.pair, report.num_trajectories,
             report.max_deviation)
    return 0 if report.max_deviation <= args.tol else 1


def cmd_variance_table(args) -> int:
    cfg = ExperimentConfig.load(args.config, mdp_path=args.mdp)
    mdp = TabularMdp.load(cfg.mdp_path)
    policy = cfg.build_policy(mdp)
    seed = int(cfg.seed or 0)
    models = standard_models(mdp, policy, float(cfg.model.get("noise", 0.3)), seed)
    if "variant" in cfg.model and cfg.model["variant"] != "all":
        models = {k: v for k, v in models.items() if k.startswith(cfg.model["variant"])}
    rows = variance_table(mdp, policy, models, list(cfg.estimators), int(cfg.samples), seed)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["estimator", "model", "trace", "reduction_vs_vanilla"])
        for r in rows:
            w.writerow([r.estimator, r.model, repr(r.trace), repr(r.reduction_vs_vanilla)])
    return 0


def cmd_cr_bound(args) -> int:
    mdp = TabularMdp.load(args.mdp)
    policy = _policy(mdp, args)
    bound = dag_cr_bounds(mdp, policy)
    exact = make_qmodel("exact", mdp, policy)
    var = np.diag(brute_force_covariance(mdp, policy, estimator_for("drpg", policy, exact)))
    if args.coord is not None:
        if not 0 <= args.coord < policy.dim:
            raise IndexError(f"coordinate {args.coord} out of range for dimension {policy.dim}")
        coords = [args.coord]
    else:
        coords = range(policy.dim)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["coordinate", "bound", "drpg_variance", "gap"])
        for i in coords:
            w.writerow([i, repr(float(bound[i])), repr(float(var[i])), repr(float(var[i] - bound[i]))])
    return 0


def cmd_generate(args) -> int:
    mdp = generate_mdp(args.kind, seed=args.seed, **dict(args.param))
    if args.out:
        mdp.save(args.out)
    else:
        print(json.dumps(mdp.to_dict(), indent=1))
    log.info("%s: %d states, %d actions, horizon %d", args.kind, mdp.num_states, mdp.num_actions, mdp.horizon)
    return 0


def _add_policy_args(p):
    p.add_argument("--logits", help="JSON file with an S x A logits table (default: random policy)")
    p.add_argument("--policy-seed", type=int, default=0)
    p.add_argument("--policy-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgope", description="Exact checks of OPE-derived policy gradients")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in SUITES:
        p = sub.add_parser(name, help=f"run the {name} suite")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True, help="output directory for CSV and summary")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(func=cmd_suite)

    p = sub.add_parser("verify-correspondence", help="per-trajectory finite-difference check of one pair")
    p.add_argument("--pair", required=True, choices=PAIRS)
    p.add_argument("--mdp", required=True)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--model", default="exact", help="model variant for the dr pairs")
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0, help="seed for baselines, critics and model noise")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_policy_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("variance-table", help="covariance trace and reduction ratio per estimator and model")
    p.add_argument("--mdp", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_variance_table)

    p = sub.add_parser("cr-bound", help="per-coordinate variance lower bound")
    p.add_argument("--mdp", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--coord", type=int)
    group.add_argument("--all", action="store_true", help="every coordinate (default)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_policy_args(p)
    p.set_defaults(func=cmd_cr_bound)

    p = sub.add_parser("generate-mdp", help="write a generated layered MDP as JSON")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", type=_parse_param, action="append", default=[],
                   help="generator parameter as key=value, e.g. horizon=3 (repeatable)")
    p.add_argument("--out", help="JSON path (default: stdout)")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MdpValidationError, EnumerationLimitError, OSError, IndexError,
            KeyError, ValueError) as exc:
        print(f"pgope: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
