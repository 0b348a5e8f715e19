#!/usr/bin/env python3
"""Per-step latency table for every guidance strategy.

Times one sampler step per strategy on a wide-encoder/narrow-attention
model, where duplicating only the attention work is much cheaper than
duplicating the whole forward pass.
"""

import argparse

from guidance_lab.experiments import ExperimentConfig, run_latency


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/latency")
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()

    rows = run_latency(ExperimentConfig(out_dir=args.out, latency_batch=args.batch))
    for row in rows:
        print(
            f"{row['strategy']:>5}: baseline {row['baseline_ms']:8.3f} ms   "
            f"overhead {row['overhead_ms']:8.3f} ms  ({row['overhead_pct']:5.1f}%)"
        )
    print(f"wrote {args.out}/latency.csv")


if __name__ == "__main__":
    main()
