"""Comparison policies: tabular Q-learning, a time-of-use rule, and no battery at all."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .data import HourlyRecord
from .env import BAND_TOL, N_ACTIONS, Action, EnvConfig, EnvState, _soc_bin, _transition

N_HOURS = 24
N_TIERS = 3
N_PV_FLAGS = 2
Q_CSV_HEADER = ("hour", "soc_bin", "price_tier", "pv_flag", "action", "q_value")


@dataclass(frozen=True)
class QParams:
    learning_rate: float = 0.1
    discount: float = 0.89
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.0001

    def epsilon(self, episode: int) -> float:
        return max(0.0, self.epsilon_start - self.epsilon_decay * episode)


@dataclass
class QTable:
    """Action values indexed by (hour, soc_bin, price_tier, pv_flag, action)."""

    values: np.ndarray
    params: QParams = field(default_factory=QParams)

    @classmethod
    def zeros(cls, soc_bins: int = 11, params: QParams = QParams()) -> "QTable":
        return cls(np.zeros((N_HOURS, soc_bins, N_TIERS, N_PV_FLAGS, N_ACTIONS)), params)

    @property
    def flat(self) -> np.ndarray:
        """(n_states, n_actions) view used by the compiled loops."""
        return self.values.reshape(-1, N_ACTIONS)

    def state_index(self, hour: int, soc_bin: int, tier: int, pv_flag: int) -> int:
        shape = self.values.shape[:4]
        for v, n in zip((hour, soc_bin, tier, pv_flag), shape):
            if not 0 <= v < n:
                raise IndexError(f"state {(hour, soc_bin, tier, pv_flag)} outside table {shape}")
        return int(np.ravel_multi_index((hour, soc_bin, tier, pv_flag), shape))


# ------------------------------------------------------------------ kernels


@njit(cache=True)
def _q_backup(q, s, a, r, s_next, alpha, gamma, terminal):
    target = r
    if not terminal:
        target += gamma * q[s_next].max()
    q[s, a] += alpha * (target - q[s, a])


@njit(cache=True)
def _egreedy(q_row, epsilon, u_explore, u_action):
    if u_explore < epsilon:
        return min(int(u_action * q_row.shape[0]), q_row.shape[0] - 1)
    return int(np.argmax(q_row))  # lowest index on ties


@njit(cache=True)
def _farm_state(hour, soc, tier, pv, capacity, n_bins):
    b = _soc_bin(soc, capacity, n_bins)
    flag = 1 if pv > 0.0 else 0
    return ((hour * n_bins + b) * 3 + tier) * 2 + flag


@njit(cache=True)
def _q_farm_episode(q, hours, tiers, load, pv, price, soc0, epsilon, uniforms,
                    alpha, gamma, capacity, rate, lo_frac, hi_frac, penalty, n_bins):
    n = load.shape[0]
    soc = soc0
    s = _farm_state(hours[0], soc, tiers[0], pv[0], capacity, n_bins)
    total = 0.0
    for t in range(n):
        a = _egreedy(q[s], epsilon, uniforms[t, 0], uniforms[t, 1])
        soc, _, grid, pen = _transition(soc, a, load[t], pv[t], capacity, rate, lo_frac, hi_frac)
        r = -grid * price[t] - (penalty if pen else 0.0)
        total += r
        last = t == n - 1
        s_next = s
        if not last:
            s_next = _farm_state(hours[t + 1], soc, tiers[t + 1], pv[t + 1], capacity, n_bins)
        _q_backup(q, s, a, r, s_next, alpha, gamma, last)
        s = s_next
    return total


@njit(cache=True)
def _q_tabular_episode(q, next_state, reward, terminal, start, max_steps, epsilon,
                       uniforms, alpha, gamma):
    s = start
    total = 0.0
    for t in range(max_steps):
        a = _egreedy(q[s], epsilon, uniforms[t, 0], uniforms[t, 1])
        s_next = next_state[s, a]
        r = reward[s, a]
        done = terminal[s, a]
        total += r
        # hitting max_steps is a time limit, not a terminal state: keep bootstrapping
        _q_backup(q, s, a, r, s_next, alpha, gamma, done)
        if done:
            break
        s = s_next
    return total


# ------------------------------------------------------------- Q-learning API


def q_update(table: QTable, s: tuple[int, int, int, int], a: Action | int, r: float,
             s_next: tuple[int, int, int, int], terminal: bool = False) -> QTable:
    """One-step backup ``Q(s,a) += alpha * (r + gamma * max Q(s') - Q(s,a))`` in place."""
    if not 0 <= int(a) < N_ACTIONS:
        raise IndexError(f"action {a} out of range")
    i = table.state_index(*s)
    j = table.state_index(*s_next)
    _q_backup(table.flat, i, int(a), float(r), j, table.params.learning_rate,
              table.params.discount, terminal)
    return table


@dataclass
class QResult:
    table: QTable
    history: list[float]


def _tier_array(window: Sequence[HourlyRecord], tiers: Sequence[float]) -> np.ndarray:
    lookup = {p: i for i, p in enumerate(tiers)}
    return np.array([lookup[r.price] for r in window], dtype=np.int64)


def train_q(window: Sequence[HourlyRecord], tiers: Sequence[float], config: EnvConfig,
            episodes: int, seed: int, params: QParams = QParams(),
            initial_soc_frac: float = 0.5) -> QResult:
    """Epsilon-greedy Q-learning, one pass over ``window`` per episode."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    table = QTable.zeros(config.soc_bins, params)
    hours = np.array([r.index % 24 for r in window], dtype=np.int64)
    tier = _tier_array(window, tiers)
    load = np.array([r.load_kwh for r in window])
    pv = np.array([r.pv_kwh for r in window])
    price = np.array([r.price for r in window])
    q = table.flat
    history = []
    for ep in range(episodes):
        total = _q_farm_episode(
            q, hours, tier, load, pv, price, initial_soc_frac * config.capacity_kwh,
            params.epsilon(ep), rng.random((len(window), 2)), params.learning_rate,
            params.discount, config.capacity_kwh, config.rate_kw, config.soc_min_frac,
            config.soc_max_frac, config.penalty_value, config.soc_bins)
        history.append(float(total))
    return QResult(table, history)


@dataclass(frozen=True)
class TabularMdp:
    """Deterministic finite MDP: arrays indexed [state, action]."""

    next_state: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def train_q_tabular(mdp: TabularMdp, episodes: int, seed: int, params: QParams = QParams(),
                    max_steps: int = 50) -> tuple[np.ndarray, list[float]]:
    """Same learner as ``train_q`` on an explicit MDP; episodes start in a random state."""
    rng = np.random.default_rng(seed)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    ns = np.ascontiguousarray(mdp.next_state, dtype=np.int64)
    rw = np.ascontiguousarray(mdp.reward, dtype=np.float64)
    tm = np.ascontiguousarray(mdp.terminal, dtype=np.bool_)
    history = []
    for ep in range(episodes):
        start = int(rng.integers(mdp.n_states))
        total = _q_tabular_episode(q, ns, rw, tm, start, max_steps, params.epsilon(ep),
                                   rng.random((max_steps, 2)), params.learning_rate,
                                   params.discount)
        history.append(float(total))
    return q, history


def q_policy(table: QTable, tiers: Sequence[float]) -> Callable[[EnvState, HourlyRecord], Action]:
    lookup = {p: i for i, p in enumerate(tiers)}

    def policy(state: EnvState, record: HourlyRecord) -> Action:
        flag = 1 if record.pv_kwh > 0 else 0
        row = table.values[state.hour, state.soc_bin, lookup[record.price], flag]
        return Action(int(np.argmax(row)))

    return policy


def save_q_csv(table: QTable, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(Q_CSV_HEADER)
        for idx in np.ndindex(*table.values.shape):
            w.writerow((*idx, repr(float(table.values[idx]))))
    tmp.replace(path)


def load_q_csv(path: str | Path, params: QParams = QParams()) -> QTable:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != Q_CSV_HEADER:
            raise ValueError(f"expected header {','.join(Q_CSV_HEADER)}")
        rows = [r for r in reader if r]
    idx = np.array([[int(v) for v in r[:5]] for r in rows], dtype=np.int64)
    shape = tuple(int(m) + 1 for m in idx.max(axis=0))
    values = np.zeros(shape)
    values[tuple(idx.T)] = [float(r[5]) for r in rows]
    return QTable(values, params)


# -------------------------------------------------------------------- rules


@dataclass(frozen=True)
class RuleConfig:
    charge_tier: int = 0
    discharge_tier: int = 2
    pv_surplus_charge: bool = True

    def __post_init__(self) -> None:
        if self.charge_tier == self.discharge_tier:
            raise ValueError("charge_tier and discharge_tier must differ")


def rule_policy(state: EnvState, record: HourlyRecord, rules: RuleConfig,
                config: EnvConfig, tiers: Sequence[float]) -> Action:
    """Charge on the cheap tier or from PV surplus, discharge on the peak tier.

    Boundary states fall back to Idle, so the rule never earns a penalty.
    """
    tier = tiers.index(record.price)
    room = state.soc_kwh < config.soc_max_kwh - BAND_TOL
    stored = state.soc_kwh > config.soc_min_kwh + BAND_TOL
    surplus = rules.pv_surplus_charge and record.pv_kwh > record.load_kwh
    if room and (tier == rules.charge_tier or surplus):
        return Action.CHARGE
    if stored and tier == rules.discharge_tier and record.load_kwh > record.pv_kwh:
        return Action.DISCHARGE
    return Action.IDLE


def make_rule_policy(rules: RuleConfig, config: EnvConfig,
                     tiers: Sequence[float]) -> Callable[[EnvState, HourlyRecord], Action]:
    tiers = tuple(tiers)
    return lambda state, record: rule_policy(state, record, rules, config, tiers)


def idle_policy(state: EnvState, record: HourlyRecord) -> Action:
    return Action.IDLE


def no_battery_import(window: Sequence[HourlyRecord]) -> float:
    if len(window) == 0:
        raise ValueError("empty window")
    return float(sum(max(0.0, r.load_kwh - r.pv_kwh) for r in window))
