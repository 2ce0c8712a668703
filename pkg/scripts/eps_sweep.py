"""Correspondence deviation as a function of the finite-difference step.

Central differences should shrink the deviation ~4x per halving of eps until
rounding noise takes over. Writes one CSV row per (pair, eps).
"""
import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from pgope.finite_diff import PAIRS, verify_correspondence
from pgope.mdp import TabularMdp
from pgope.policy import SoftmaxPolicy
from pgope.qmodel import make_qmodel


@dataclass
class SweepConfig:
    mdp: str
    eps_max: float = 1e-2
    halvings: int = 12
    policy_seed: int = 0
    seed: int = 0


def side_info(pair, mdp, policy, rng):
    if pair == "baseline":
        return rng.normal(size=mdp.num_states)
    if pair == "actor-critic":
        return rng.normal(size=(mdp.num_states, mdp.num_actions))
    if pair.startswith("dr"):
        return make_qmodel("frozen-linear", mdp, policy, rng=rng, noise=0.3)
    return None


def run(cfg: SweepConfig, out):
    mdp = TabularMdp.load(cfg.mdp)
    policy = SoftmaxPolicy.random(mdp.num_states, mdp.num_actions, cfg.policy_seed)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["pair", "eps", "max_deviation", "ratio_to_previous"])
    for pair in PAIRS:
        side = side_info(pair, mdp, policy, np.random.default_rng(cfg.seed))
        prev = None
        for k in range(cfg.halvings):
            eps = cfg.eps_max / 2**k
            dev = verify_correspondence(pair, mdp, policy, side, eps).max_deviation
            writer.writerow([pair, repr(eps), repr(dev), "" if prev is None else repr(prev / dev)])
            prev = dev


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mdp", required=True)
    parser.add_argument("--eps-max", type=float, default=1e-2)
    parser.add_argument("--halvings", type=int, default=12)
    parser.add_argument("--policy-seed", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    run(SweepConfig(args.mdp, args.eps_max, args.halvings, args.policy_seed, args.seed), sys.stdout)


if __name__ == "__main__":
    main()
