"""Run the seeded comparison and print a summary table.

    python scripts/run_experiment.py configs/default.yaml [-v]

Writes report.json, monthly_import.csv, reduction_by_run.csv and per-run
checkpoints / reward histories under the config's ``output_dir``.
"""

import argparse
import logging
import time

import numpy as np

from powerwall_rl.config import load_config
from powerwall_rl.harness import run_experiment


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = load_config(args.config)
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    minutes = (time.perf_counter() - t0) / 60

    s = report.summary
    print(f"{cfg.runs} runs, {cfg.ppo_episodes} PPO / {cfg.q_episodes} Q episodes, "
          f"{minutes:.1f} min")
    print(f"{'algorithm':<12}{'median kWh':>14}{'reduction %':>14}")
    for a in report.algorithms:
        print(f"{a:<12}{s['median_annual_import_kwh'][a]:>14.1f}"
              f"{s['reduction_vs_no_battery_pct'][a]:>14.3f}")
    for r in report.runs:
        rw = np.asarray(r.ppo_rewards)
        k = max(1, len(rw) // 10)
        print(f"run {r.run}: PPO reward first10% {rw[:k].mean():9.1f} ± {rw[:k].std():6.1f}"
              f"  last10% {rw[-k:].mean():9.1f} ± {rw[-k:].std():6.1f}")
    if report.failed_runs:
        print("failed runs:", report.failed_runs)


if __name__ == "__main__":
    main()
