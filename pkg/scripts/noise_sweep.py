"""Covariance trace of each PG estimator as model error grows.

For every noise level the inexact models are rebuilt around the exact tables
and the trace of each estimator's covariance is computed by enumeration.
Orderings between estimators at nonzero noise are reported, not asserted.
"""
import argparse
import csv
import sys
from dataclasses import dataclass, field

import numpy as np

from pgope.mdp import TabularMdp
from pgope.policy import SoftmaxPolicy
from pgope.suites import standard_models
from pgope.variance import variance_table


@dataclass
class NoiseSweepConfig:
    mdp: str
    noise_levels: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.4, 0.8])
    estimators: list = field(default_factory=lambda: ["vanilla_pg", "baseline_pg", "trajcv_pg", "drpg"])
    policy_seed: int = 0
    seed: int = 0


def run(cfg: NoiseSweepConfig, out):
    mdp = TabularMdp.load(cfg.mdp)
    policy = SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, cfg.policy_seed)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["noise", "estimator", "model", "trace", "reduction_vs_vanilla"])
    for noise in cfg.noise_levels:
        models = standard_models(mdp, policy, noise, cfg.seed)
        if noise == 0:
            models.pop("exact-noisy")
        for row in variance_table(mdp, policy, models, cfg.estimators, seed=cfg.seed):
            writer.writerow([noise, row.estimator, row.model, repr(row.trace), repr(row.reduction_vs_vanilla)])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mdp", required=True)
    parser.add_argument("--noise", type=float, nargs="+", default=None)
    parser.add_argument("--policy-seed", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    cfg = NoiseSweepConfig(args.mdp, policy_seed=args.policy_seed, seed=args.seed)
    if args.noise:
        cfg.noise_levels = list(np.asarray(args.noise, dtype=float))
    run(cfg, sys.stdout)


if __name__ == "__main__":
    main()
