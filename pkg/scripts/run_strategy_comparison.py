#!/usr/bin/env python3
"""Headline comparison: no guidance vs cfg vs nasa vs nag on the default setup.

Trains the default toy model per seed, samples 500 points per strategy with
class A positive / class B negative, and writes one results.csv covering all
four strategies.
"""

import argparse

from guidance_lab.experiments import ExperimentConfig, run_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/strategy_comparison")
    args = parser.parse_args()

    config = ExperimentConfig(
        sweep_param="strategy",
        sweep_values=("none", "cfg", "nasa", "nag"),
        out_dir=args.out,
    )
    run_experiment(config)
    print(f"wrote {args.out}/results.csv and {args.out}/summary.json")


if __name__ == "__main__":
    main()
