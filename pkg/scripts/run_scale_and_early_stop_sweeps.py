#!/usr/bin/env python3
"""Guidance-scale and early-stop sweeps on the default setup.

Reproduces the two quantitative sweep shapes: suppression as a function of
the extrapolation scale (0 to 20) and as a function of the guided fraction
of steps (0 to 1).
"""

import argparse

from guidance_lab.experiments import ExperimentConfig, run_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/sweeps")
    args = parser.parse_args()

    for param, values in (
        ("phi", (0.0, 1.0, 2.0, 4.0, 8.0, 20.0)),
        ("theta", (0.0, 0.25, 0.5, 1.0)),
    ):
        out_dir = f"{args.out}/{param}"
        run_experiment(
            ExperimentConfig(sweep_param=param, sweep_values=values, out_dir=out_dir)
        )
        print(f"wrote {out_dir}/results.csv")


if __name__ == "__main__":
    main()
