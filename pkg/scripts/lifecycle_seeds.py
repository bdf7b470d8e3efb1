"""Run the default lifecycle over several seeds and print the F1 table.

    python3 scripts/lifecycle_seeds.py --seeds 0 1 2 3 4 --gamma 0.1 0.0
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from flowshift.config import PipelineConfig, load
from flowshift.pipeline import run_lifecycle, scenario_windows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--gamma", type=float, nargs="+", default=[0.1, 0.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    base = load(args.config) if args.config else PipelineConfig()

    print(f"{'gamma':>6} {'seed':>4} {'p':>8} {'sel':>5} {'f1_before':>9} {'f1_after':>8} {'orig_after':>10}")
    for gamma in args.gamma:
        gains, kept = [], []
        for seed in args.seeds:
            cfg = base.with_seed(seed)
            cfg = replace(cfg, adapt=replace(cfg.adapt, gamma=gamma))
            row = run_lifecycle(scenario_windows(cfg), cfg).rows[0]
            gains.append(row.after["f1"] - row.before["f1"])
            kept.append(row.original_after["f1"])
            print(
                f"{gamma:6.2f} {seed:4d} {row.p_value:8.4f} {row.n_selected:5d} "
                f"{row.before['f1']:9.3f} {row.after['f1']:8.3f} {row.original_after['f1']:10.3f}"
            )
        print(f"gamma={gamma}: mean gain {np.mean(gains):.4f}, mean original-window F1 {np.mean(kept):.4f}\n")


if __name__ == "__main__":
    main()
