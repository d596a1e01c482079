"""Hourly battery-dispatch MDP for a dairy farm with PV and a Powerwall-class battery.

Observation is ``(hour, soc_bin, load, pv)``; actions are Charge, Discharge,
Idle. The reward is minus the cost of grid import, minus a fixed penalty when
the agent tries to charge a full battery or discharge an empty one (the
penalized action then behaves like Idle). Surplus PV is curtailed, nothing is
exported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .data import HourlyRecord

STEP_HOURS = 1.0
# SOC within this distance of a band edge counts as being at the edge
BAND_TOL = 1e-9


class Action(IntEnum):
    CHARGE = 0
    DISCHARGE = 1
    IDLE = 2


N_ACTIONS = len(Action)


class EnvError(ValueError):
    pass


class EmptyWindow(EnvError):
    pass


class SocOutOfRange(EnvError):
    pass


class InvalidState(EnvError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    capacity_kwh: float = 13.5
    rate_kw: float = 5.0
    soc_min_frac: float = 0.15
    soc_max_frac: float = 0.85
    penalty_value: float = 15.0
    soc_bins: int = 11
    # observation scaling
    load_scale_kwh: float = 110.0
    pv_scale_kwh: float = 20.0

    def __post_init__(self) -> None:
        if not 0 <= self.soc_min_frac < self.soc_max_frac <= 1:
            raise EnvError("need 0 <= soc_min_frac < soc_max_frac <= 1")
        if self.capacity_kwh <= 0 or self.rate_kw <= 0:
            raise EnvError("capacity_kwh and rate_kw must be positive")
        if self.penalty_value < 0:
            raise EnvError("penalty_value must be >= 0")
        if self.soc_bins < 2:
            raise EnvError("soc_bins must be >= 2")
        if self.load_scale_kwh <= 0 or self.pv_scale_kwh <= 0:
            raise EnvError("observation scales must be positive")

    @property
    def soc_min_kwh(self) -> float:
        return self.soc_min_frac * self.capacity_kwh

    @property
    def soc_max_kwh(self) -> float:
        return self.soc_max_frac * self.capacity_kwh


@dataclass(frozen=True)
class EnvState:
    hour: int
    soc_kwh: float
    soc_bin: int
    load_kwh: float
    pv_kwh: float


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    grid_import_kwh: float
    penalty_applied: bool
    done: bool
    battery_kwh: float  # signed energy into the battery this step


# ------------------------------------------------------------------ kernels
# Compiled so the training loops can call them per step; the public functions
# below are thin wrappers over the same code.


@njit(cache=True)
def _soc_bin(soc_kwh, capacity_kwh, n_bins):
    return int(math.floor(soc_kwh / capacity_kwh * (n_bins - 1) + 0.5 + 1e-9))


@njit(cache=True)
def _transition(soc, action, load, pv, capacity, rate, lo_frac, hi_frac):
    """Returns (new_soc, battery_energy, grid_import, penalized)."""
    lo = lo_frac * capacity
    hi = hi_frac * capacity
    energy = 0.0
    penalized = False
    if action == 0:
        if soc >= hi - BAND_TOL:
            penalized = True
        else:
            energy = min(rate * STEP_HOURS, hi - soc)
    elif action == 1:
        if soc <= lo + BAND_TOL:
            penalized = True
        else:
            energy = -min(rate * STEP_HOURS, soc - lo, max(0.0, load - pv))
    grid = max(0.0, load + energy - pv)
    return soc + energy, energy, grid, penalized


# --------------------------------------------------------------- public API


def soc_to_bin(soc_kwh: float, capacity_kwh: float, n_bins: int = 11) -> int:
    """Nearest SOC level in ``0..n_bins-1``, ties rounded up."""
    if not 0.0 <= soc_kwh <= capacity_kwh:
        raise SocOutOfRange(f"soc {soc_kwh} outside [0, {capacity_kwh}]")
    return _soc_bin(soc_kwh, capacity_kwh, n_bins)


def make_state(hour: int, soc_kwh: float, record: HourlyRecord, config: EnvConfig) -> EnvState:
    return EnvState(
        hour=hour % 24,
        soc_kwh=soc_kwh,
        soc_bin=soc_to_bin(soc_kwh, config.capacity_kwh, config.soc_bins),
        load_kwh=record.load_kwh,
        pv_kwh=record.pv_kwh,
    )


def reset(window: Sequence[HourlyRecord], initial_soc_frac: float,
          config: EnvConfig = EnvConfig()) -> EnvState:
    if len(window) == 0:
        raise EmptyWindow("window has no records")
    if not config.soc_min_frac - BAND_TOL <= initial_soc_frac <= config.soc_max_frac + BAND_TOL:
        raise SocOutOfRange(
            f"initial_soc_frac {initial_soc_frac} outside "
            f"[{config.soc_min_frac}, {config.soc_max_frac}]")
    first = window[0]
    return make_state(first.index, initial_soc_frac * config.capacity_kwh, first, config)


def check_state(state: EnvState, config: EnvConfig) -> None:
    if not 0 <= state.hour <= 23:
        raise InvalidState(f"hour {state.hour} outside [0, 23]")
    if not 0.0 <= state.soc_kwh <= config.capacity_kwh:
        raise InvalidState(f"soc {state.soc_kwh} outside [0, {config.capacity_kwh}]")
    if state.soc_bin != _soc_bin(state.soc_kwh, config.capacity_kwh, config.soc_bins):
        raise InvalidState(f"soc_bin {state.soc_bin} inconsistent with soc {state.soc_kwh}")
    if state.load_kwh < 0 or state.pv_kwh < 0:
        raise InvalidState("negative load or pv")


def step(state: EnvState, action: Action | int, record: HourlyRecord,
         config: EnvConfig = EnvConfig(),
         next_record: HourlyRecord | None = None, done: bool = False) -> StepResult:
    """Apply one hour of ``action`` using ``record``'s load, PV and price.

    The next state's load/pv come from ``next_record`` when given, otherwise
    they repeat the current record (the caller knows the next hour, this
    function does not).
    """
    check_state(state, config)
    action = Action(action)
    soc, energy, grid, penalized = _transition(
        state.soc_kwh, int(action), record.load_kwh, record.pv_kwh,
        config.capacity_kwh, config.rate_kw, config.soc_min_frac, config.soc_max_frac)
    soc = min(max(soc, 0.0), config.capacity_kwh)
    reward = -grid * record.price - (config.penalty_value if penalized else 0.0)
    nxt = next_record if next_record is not None else record
    next_state = EnvState(
        hour=(state.hour + 1) % 24,
        soc_kwh=soc,
        soc_bin=_soc_bin(soc, config.capacity_kwh, config.soc_bins),
        load_kwh=nxt.load_kwh,
        pv_kwh=nxt.pv_kwh,
    )
    return StepResult(next_state, reward, grid, penalized, done, energy)


def encode_observation(state: EnvState, config: EnvConfig = EnvConfig()) -> np.ndarray:
    return np.array([
        state.hour / 23.0,
        state.soc_bin / (config.soc_bins - 1),
        state.load_kwh / config.load_scale_kwh,
        state.pv_kwh / config.pv_scale_kwh,
    ])


OBS_DIM = 4


class FarmEnv:
    """Steps through a window of hourly records, one episode per pass."""

    def __init__(self, window: Sequence[HourlyRecord], config: EnvConfig = EnvConfig()):
        if len(window) == 0:
            raise EmptyWindow("window has no records")
        self.window = window
        self.config = config
        self.t = 0
        self.state: EnvState | None = None

    def reset(self, initial_soc_frac: float = 0.5) -> EnvState:
        self.t = 0
        self.state = reset(self.window, initial_soc_frac, self.config)
        return self.state

    def restore(self, soc_kwh: float) -> EnvState:
        """Start a pass at an arbitrary SOC (used to carry SOC across windows)."""
        self.t = 0
        self.state = make_state(self.window[0].index, soc_kwh, self.window[0], self.config)
        return self.state

    @property
    def record(self) -> HourlyRecord:
        return self.window[self.t]

    def step(self, action: Action | int) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() first")
        if self.t >= len(self.window):
            raise RuntimeError("episode finished, call reset()")
        last = self.t == len(self.window) - 1
        nxt = None if last else self.window[self.t + 1]
        res = step(self.state, action, self.window[self.t], self.config, nxt, done=last)
        self.t += 1
        self.state = res.next_state
        return res


TRACE_HEADER = ("hour", "soc_kwh", "action", "pv_kwh", "load_kwh", "price",
                "grid_import_kwh", "reward")


@dataclass(frozen=True)
class TraceRow:
    hour: int
    soc_kwh: float
    action: str
    pv_kwh: float
    load_kwh: float
    price: float
    grid_import_kwh: float
    reward: float


def trace_row(state: EnvState, action: Action | int, record: HourlyRecord,
              result: StepResult) -> TraceRow:
    return TraceRow(state.hour, state.soc_kwh, Action(action).name.capitalize(),
                    record.pv_kwh, record.load_kwh, record.price,
                    result.grid_import_kwh, result.reward)


def write_trace_csv(rows: Sequence[TraceRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow((r.hour, repr(r.soc_kwh), r.action, repr(r.pv_kwh), repr(r.load_kwh),
                        repr(r.price), repr(r.grid_import_kwh), repr(r.reward)))

