"""Upper bound on how much any battery schedule can cut grid import.

With imports clamped at zero, charging during a deficit hour adds exactly the
charged energy to import, and discharging removes exactly the discharged
energy. The only import-free energy a battery can store is PV surplus, so the
best possible reduction is ``(initial stored energy) + (surplus charged)``.
A greedy schedule that soaks up every bit of surplus and discharges as soon as
there is a deficit attains it (with fractional charge amounts, which the
discrete environment cannot do, so this is an upper bound there).

    python scripts/import_bound.py [--seed 42] [--csv path]
"""

import argparse

import numpy as np

from powerwall_rl.data import generate_synthetic, load_csv, split
from powerwall_rl.env import EnvConfig


def greedy_bound(load: np.ndarray, pv: np.ndarray, cfg: EnvConfig, soc0_frac: float = 0.5):
    lo, hi = cfg.soc_min_kwh, cfg.soc_max_kwh
    soc = soc0_frac * cfg.capacity_kwh
    imported = 0.0
    for l, p in zip(load, pv):
        net = l - p
        if net < 0:
            soc += min(cfg.rate_kw, hi - soc, -net)
        else:
            d = min(cfg.rate_kw, soc - lo, net)
            soc -= d
            imported += net - d
    return imported


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--csv")
    args = ap.parse_args()
    series = load_csv(args.csv) if args.csv else generate_synthetic(args.seed)
    test = split(series).test
    load = np.array([r.load_kwh for r in test])
    pv = np.array([r.pv_kwh for r in test])
    cfg = EnvConfig()
    base = float(np.maximum(load - pv, 0).sum())
    best = greedy_bound(load, pv, cfg)
    surplus = float(np.maximum(pv - load, 0).sum())
    print(f"no-battery import     {base:12.1f} kWh")
    print(f"PV surplus (curtailed) {surplus:11.1f} kWh")
    print(f"best achievable import {best:11.1f} kWh")
    print(f"max reduction          {100 * (base - best) / base:11.3f} %")


if __name__ == "__main__":
    main()
