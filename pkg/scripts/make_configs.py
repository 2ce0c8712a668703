"""Regenerate the bundled MDP files under configs/mdps."""
import argparse
from pathlib import Path

from pgope.generate import generate_mdp

BUNDLE = {
    "stochastic_dag": ("random-dag", 1, dict(states_per_layer=3, horizon=3)),
    "deterministic_dag": ("random-dag", 2, dict(states_per_layer=3, horizon=3, deterministic=True,
                                                stochastic_rewards=False)),
    "stochastic_tree": ("tree", 4, dict(branching=2, horizon=2, stochastic_rewards=True)),
    "deterministic_tree": ("tree", 5, dict(branching=1, horizon=3)),
    "chain": ("chain", 0, dict(horizon=3)),
    "gridlike": ("gridlike", 0, dict(width=3, horizon=3)),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=Path(__file__).resolve().parents[1] / "configs" / "mdps", type=Path)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, (kind, seed, params) in BUNDLE.items():
        mdp = generate_mdp(kind, seed=seed, **params)
        mdp.save(args.out / f"{name}.json")
        print(f"{name}: {kind}, {mdp.num_states} states, horizon {mdp.horizon}")


if __name__ == "__main__":
    main()
