"""Sweeps behind the chosen defaults.

    python3 scripts/sensitivity.py kd          # kd_temperature x gamma
    python3 scripts/sensitivity.py explain     # lambda1 trade-off
    python3 scripts/sensitivity.py calibration # permutation test size and power
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from flowshift.config import PipelineConfig
from flowshift.drift_sim import bimodal_posteriors
from flowshift.pipeline import run_lifecycle, scenario_windows
from flowshift.shift_detect import permutation_test
from flowshift.shift_explain import ExplainConfig, explain


def kd_sweep(seeds, kd_temps=(1.0, 0.02, 0.005), gammas=(0.0, 0.1)):
    print(f"{'kd_temp':>8} {'gamma':>6} {'gain':>7} {'orig_f1':>8}")
    for kt in kd_temps:
        for gamma in gammas:
            gains, kept = [], []
            for seed in seeds:
                cfg = PipelineConfig().with_seed(seed)
                cfg = replace(cfg, adapt=replace(cfg.adapt, gamma=gamma, kd_temperature=kt))
                row = run_lifecycle(scenario_windows(cfg), cfg).rows[0]
                gains.append(row.after["f1"] - row.before["f1"])
                kept.append(row.original_after["f1"])
            print(f"{kt:8.3f} {gamma:6.2f} {np.mean(gains):7.4f} {np.mean(kept):8.4f}")


def explain_sweep(seeds, lambdas=(0.1, 1.0, 10.0, 20.0, 100.0)):
    print(f"{'lambda1':>8} {'case':>8} {'selected':>9} {'kl':>7}")
    for lam in lambdas:
        for case in ("bimodal", "same"):
            fracs, kls = [], []
            for seed in seeds:
                if case == "bimodal":
                    old, new = bimodal_posteriors(1000, seed=seed)
                else:
                    rng = np.random.default_rng(11 + seed)
                    old, new = rng.beta(5, 2, 500), rng.beta(5, 2, 500)
                res = explain(old, new, ExplainConfig(lambda1=lam, seed=seed))
                fracs.append(res.n_selected / (len(old) + len(new)))
                kls.append(res.losses["accuracy"])
            print(f"{lam:8.1f} {case:>8} {np.mean(fracs):9.3f} {np.mean(kls):7.4f}")


def calibration(trials=200, n=500):
    null = sum(
        permutation_test(
            *np.clip(np.random.default_rng(10_000 + t).normal(0.6, 0.1, (2, n)), 0, 1), seed=t
        ).shifted
        for t in range(trials)
    )
    power = 0
    for t in range(trials):
        rng = np.random.default_rng(20_000 + t)
        old = np.clip(rng.normal(0.5, 0.1, n), 0, 1)
        new = np.clip(rng.normal(0.8, 0.1, n), 0, 1)
        power += permutation_test(old, new, seed=t).shifted
    print(f"rejection rate under no shift: {null / trials:.3f}; power at a 3 sd shift: {power / trials:.3f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("sweep", choices=["kd", "explain", "calibration"])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    if args.sweep == "kd":
        kd_sweep(args.seeds)
    elif args.sweep == "explain":
        explain_sweep(args.seeds)
    else:
        calibration()


if __name__ == "__main__":
    main()
