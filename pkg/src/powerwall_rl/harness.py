"""Train every agent, evaluate on February-December, and aggregate seeded runs."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines, nn, ppo
from .config import ExperimentConfig
from .data import (MONTH_NAMES, HourlyRecord, YearSeries, hour_of_date,
                   month_of_hour, split)
from .env import Action, EnvConfig, EnvState, FarmEnv, TraceRow, trace_row

log = logging.getLogger(__name__)

Policy = Callable[[EnvState, HourlyRecord], Action]

ALGORITHMS = ("ppo", "qlearn", "rule", "no_battery")
TEST_MONTHS = MONTH_NAMES[1:]
REPORT_VERSION = 1


class DateOutOfRange(ValueError):
    pass


@dataclass
class PolicyEvaluation:
    monthly_import_kwh: dict[str, float]
    annual_import_kwh: float


def evaluate_policy(policy: Policy, window: Sequence[HourlyRecord], config: EnvConfig,
                    initial_soc_frac: float = 0.5) -> PolicyEvaluation:
    """Greedy rollout over the whole window with SOC carried across months."""
    env = FarmEnv(window, config)
    state = env.reset(initial_soc_frac)
    monthly: dict[str, float] = {}
    for record in window:
        res = env.step(policy(state, record))
        name = MONTH_NAMES[month_of_hour(record.index)]
        monthly[name] = monthly.get(name, 0.0) + res.grid_import_kwh
        state = res.next_state
    return PolicyEvaluation(monthly, sum(monthly.values()))


def monthly_no_battery(window: Sequence[HourlyRecord]) -> PolicyEvaluation:
    months: dict[str, list[HourlyRecord]] = {}
    for r in window:
        months.setdefault(MONTH_NAMES[month_of_hour(r.index)], []).append(r)
    monthly = {m: baselines.no_battery_import(recs) for m, recs in months.items()}
    return PolicyEvaluation(monthly, sum(monthly.values()))


def reduction_percent(no_battery: float, algo: float) -> float:
    if no_battery == 0:
        raise ZeroDivisionError("no-battery import is zero")
    return (no_battery - algo) / no_battery * 100.0


def five_numbers(values: Sequence[float]) -> dict[str, float]:
    q = np.percentile(np.asarray(values, dtype=np.float64), [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))


# --------------------------------------------------------------- one run


@dataclass
class RunResult:
    run: int
    seed: int
    monthly_import_kwh: dict[str, dict[str, float]]
    annual_import_kwh: dict[str, float]
    reduction_pct: dict[str, float]
    ppo_rewards: list[float] = field(repr=False)
    q_rewards: list[float] = field(repr=False)
    seconds: float = 0.0


def _run_once(cfg: ExperimentConfig, series: YearSeries, run: int,
              out_dir: Path | None) -> RunResult:
    seed = cfg.base_seed + run
    ppo_seed, q_seed = (int(s.generate_state(1)[0])
                        for s in np.random.SeedSequence(seed).spawn(2))
    sp = split(series)
    t0 = time.perf_counter()

    log.info("run %d: PPO %d episodes", run, cfg.ppo_episodes)
    trained = ppo.train(sp.train, cfg.env, cfg.ppo, cfg.ppo_episodes, ppo_seed,
                        cfg.initial_soc_frac)
    log.info("run %d: Q-learning %d episodes", run, cfg.q_episodes)
    qres = baselines.train_q(sp.train, series.tariff_tiers, cfg.env, cfg.q_episodes, q_seed,
                             cfg.qlearn, cfg.initial_soc_frac)

    policies: dict[str, Policy] = {
        "ppo": ppo.greedy_policy(trained.actor, cfg.env),
        "qlearn": baselines.q_policy(qres.table, series.tariff_tiers),
        "rule": baselines.make_rule_policy(cfg.rules, cfg.env, series.tariff_tiers),
    }
    evals = {name: evaluate_policy(p, sp.test, cfg.env, cfg.initial_soc_frac)
             for name, p in policies.items()}
    evals["no_battery"] = monthly_no_battery(sp.test)
    base = evals["no_battery"].annual_import_kwh

    if out_dir is not None:
        nn.save_checkpoint(out_dir / f"ppo_run{run}.npz",
                           {"actor": trained.actor, "critic": trained.critic})
        baselines.save_q_csv(qres.table, out_dir / f"qtable_run{run}.csv")
        write_reward_history(trained.history, out_dir / f"reward_history_run{run}.csv")

    return RunResult(
        run=run, seed=seed,
        monthly_import_kwh={a: evals[a].monthly_import_kwh for a in ALGORITHMS},
        annual_import_kwh={a: evals[a].annual_import_kwh for a in ALGORITHMS},
        reduction_pct={a: reduction_percent(base, evals[a].annual_import_kwh)
                       for a in ALGORITHMS},
        ppo_rewards=[h.reward for h in trained.history],
        q_rewards=qres.history,
        seconds=time.perf_counter() - t0,
    )


def _run_worker(args) -> RunResult | tuple[int, str]:
    cfg, series, run, out_dir = args
    try:
        return _run_once(cfg, series, run, out_dir)
    except ppo.NonFiniteLoss as exc:
        return run, f"{exc} {exc.diagnostics}"


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    algorithms: list[str]
    months: list[str]
    runs: list[RunResult]
    failed_runs: list[dict]
    summary: dict
    config: dict

    def to_json(self) -> dict:
        d = asdict(self)
        for r in d["runs"]:
            # wall-clock time would make reports non-reproducible
            del r["ppo_rewards"], r["q_rewards"], r["seconds"]
        d["version"] = REPORT_VERSION
        return d


def summarize(runs: Sequence[RunResult]) -> dict:
    if not runs:
        return {}
    median_annual = {a: float(np.median([r.annual_import_kwh[a] for r in runs]))
                     for a in ALGORITHMS}
    median_monthly = {a: {m: float(np.median([r.monthly_import_kwh[a][m] for r in runs]))
                          for m in TEST_MONTHS} for a in ALGORITHMS}
    base = median_annual["no_battery"]
    pairs = [("ppo", "qlearn"), ("ppo", "rule"), ("qlearn", "rule")]
    return {
        "median_annual_import_kwh": median_annual,
        "median_monthly_import_kwh": median_monthly,
        "reduction_vs_no_battery_pct": {a: reduction_percent(base, median_annual[a])
                                        for a in ALGORITHMS},
        "pairwise_reduction_pct": {f"{a}_vs_{b}": reduction_percent(median_annual[b],
                                                                    median_annual[a])
                                   for a, b in pairs},
        "reduction_distribution_pct": {a: five_numbers([r.reduction_pct[a] for r in runs])
                                       for a in ALGORITHMS},
    }


def build_report(cfg: ExperimentConfig, runs: Sequence[RunResult],
                 failed: Sequence[dict]) -> EvalReport:
    runs = sorted(runs, key=lambda r: r.run)
    return EvalReport(list(ALGORITHMS), list(TEST_MONTHS), list(runs), list(failed),
                      summarize(runs), cfg.to_dict())


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _csv_text(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_reward_history(history: Sequence[ppo.EpisodeLog], path: Path) -> None:
    _atomic_write(path, _csv_text(
        ("episode", "reward", "epsilon", "clip_fraction"),
        ((h.episode, repr(h.reward), repr(h.epsilon), repr(h.clip_fraction)) for h in history)))


def write_report(report: EvalReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "report.json", json.dumps(report.to_json(), indent=2))
    if report.summary:
        mm = report.summary["median_monthly_import_kwh"]
        _atomic_write(out_dir / "monthly_import.csv", _csv_text(
            ("month", "algorithm", "median_import_kwh"),
            ((m, a, repr(mm[a][m])) for m in report.months for a in report.algorithms)))
    _atomic_write(out_dir / "reduction_by_run.csv", _csv_text(
        ("run", "algorithm", "annual_import_kwh", "reduction_pct"),
        ((r.run, a, repr(r.annual_import_kwh[a]), repr(r.reduction_pct[a]))
         for r in report.runs for a in report.algorithms)))


def run_experiment(cfg: ExperimentConfig, series: YearSeries | None = None,
                   write: bool = True) -> EvalReport:
    """All seeded runs of the comparison; a diverged run lands in ``failed_runs``."""
    series = series if series is not None else cfg.data.load()
    out_dir = Path(cfg.output_dir) if write else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, series, r, out_dir) for r in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_worker, jobs))
    else:
        outcomes = [_run_worker(j) for j in jobs]

    runs = [o for o in outcomes if isinstance(o, RunResult)]
    failed = [{"run": o[0], "error": o[1]} for o in outcomes if not isinstance(o, RunResult)]
    report = build_report(cfg, runs, failed)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


# ------------------------------------------------------------------ traces


def parse_date(text: str) -> tuple[int, int]:
    """Accepts ``MM-DD`` or ``YYYY-MM-DD`` (the year is ignored)."""
    parts = text.strip().split("-")
    try:
        month, day = (int(p) for p in parts[-2:])
    except ValueError:
        raise DateOutOfRange(f"cannot parse date {text!r}") from None
    if len(parts) not in (2, 3):
        raise DateOutOfRange(f"cannot parse date {text!r}")
    return month, day


def trace_day(policy: Policy, date: str | tuple[int, int], series: YearSeries,
              config: EnvConfig, initial_soc_frac: float = 0.5) -> list[TraceRow]:
    """Hour-by-hour behaviour of ``policy`` over one calendar day."""
    month, day = parse_date(date) if isinstance(date, str) else date
    try:
        start = hour_of_date(month, day)
    except ValueError as exc:
        raise DateOutOfRange(str(exc)) from None
    window = series.records[start:start + 24]
    env = FarmEnv(window, config)
    state = env.reset(initial_soc_frac)
    rows = []
    for record in window:
        action = policy(state, record)
        res = env.step(action)
        rows.append(trace_row(state, action, record, res))
        state = res.next_state
    return rows

