"""Command line entry point.

Exit codes: 0 success, 2 configuration / input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import baselines, harness, nn, ppo
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .data import DataError, generate_synthetic, save_csv, split
from .env import TRACE_HEADER

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("powerwall_rl")


def _config(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else config_from_dict({})


def _base_dir(path: str | None) -> Path | None:
    return Path(path).resolve().parent if path else None


def _policy_from_checkpoint(spec: str, cfg: ExperimentConfig, tiers):
    """``rule``/``idle``, a PPO ``.npz`` checkpoint, or a Q-table ``.csv``."""
    if spec == "rule":
        return baselines.make_rule_policy(cfg.rules, cfg.env, tiers)
    if spec == "idle":
        return baselines.idle_policy
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    if path.suffix == ".npz":
        nets = nn.load_checkpoint(path)
        if "actor" not in nets:
            raise ConfigError(f"{path} has no actor network")
        return ppo.greedy_policy(nets["actor"], cfg.env)
    if path.suffix == ".csv":
        return baselines.q_policy(baselines.load_q_csv(path, cfg.qlearn), tiers)
    raise ConfigError(f"unrecognised checkpoint type {path.suffix!r} (want .npz or .csv)")


def cmd_generate_data(args) -> int:
    series = generate_synthetic(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(series, out)
    print(f"wrote {len(series.records)} hours to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args.config)
    series = cfg.data.load(_base_dir(args.config))
    sp = split(series)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.algo == "ppo":
        every = max(1, cfg.ppo_episodes // 20)

        def progress(h: ppo.EpisodeLog) -> None:
            if h.episode % every == 0:
                log.info("episode %d reward %.2f eps %.3f", h.episode, h.reward, h.epsilon)

        res = ppo.train(sp.train, cfg.env, cfg.ppo, cfg.ppo_episodes, cfg.base_seed,
                        cfg.initial_soc_frac, progress)
        path = out / "ppo.npz"
        nn.save_checkpoint(path, {"actor": res.actor, "critic": res.critic})
        harness.write_reward_history(res.history, out / "reward_history.csv")
    else:
        qres = baselines.train_q(sp.train, series.tariff_tiers, cfg.env, cfg.q_episodes,
                                 cfg.base_seed, cfg.qlearn, cfg.initial_soc_frac)
        path = out / "qtable.csv"
        baselines.save_q_csv(qres.table, path)
    print(path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    series = cfg.data.load(_base_dir(args.config))
    policy = _policy_from_checkpoint(args.checkpoint, cfg, series.tariff_tiers)
    test = split(series).test
    ev = harness.evaluate_policy(policy, test, cfg.env, cfg.initial_soc_frac)
    base = harness.monthly_no_battery(test)
    print(json.dumps({
        "checkpoint": args.checkpoint,
        "monthly_import_kwh": ev.monthly_import_kwh,
        "annual_import_kwh": ev.annual_import_kwh,
        "no_battery_annual_import_kwh": base.annual_import_kwh,
        "reduction_vs_no_battery_pct": harness.reduction_percent(base.annual_import_kwh,
                                                                 ev.annual_import_kwh),
    }, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args.config)
    report = harness.run_experiment(cfg, cfg.data.load(_base_dir(args.config)))
    print(json.dumps(report.summary, indent=2))
    for f in report.failed_runs:
        log.error("run %d diverged: %s", f["run"], f["error"])
    return EXIT_DIVERGED if report.failed_runs else EXIT_OK


def cmd_trace_day(args) -> int:
    cfg = _config(args.config)
    series = cfg.data.load(_base_dir(args.config))
    policy = _policy_from_checkpoint(args.checkpoint, cfg, series.tariff_tiers)
    try:
        rows = harness.trace_day(policy, args.date, series, cfg.env, cfg.initial_soc_frac)
    except harness.DateOutOfRange as exc:
        raise ConfigError(str(exc)) from None
    print(",".join(TRACE_HEADER))
    for r in rows:
        print(f"{r.hour},{r.soc_kwh:.4f},{r.action},{r.pv_kwh:.4f},{r.load_kwh:.4f},"
              f"{r.price},{r.grid_import_kwh:.4f},{r.reward:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="powerwall-rl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write the synthetic hourly year as CSV")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train one agent on the January window")
    t.add_argument("--config")
    t.add_argument("--algo", choices=("ppo", "qlearn"), required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="greedy import over February-December")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True, help=".npz, .csv, 'rule' or 'idle'")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="full seeded comparison of all four policies")
    c.add_argument("--config")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("trace-day", help="hour-by-hour behaviour on one date")
    d.add_argument("--config")
    d.add_argument("--checkpoint", required=True, help=".npz, .csv, 'rule' or 'idle'")
    d.add_argument("--date", required=True, help="MM-DD or YYYY-MM-DD")
    d.set_defaults(func=cmd_trace_day)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches our config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ppo.NonFiniteLoss as exc:
        print(f"training diverged: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
