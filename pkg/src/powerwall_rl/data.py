"""Hourly exogenous series for the farm: load, PV generation and tariff.

A year is 8760 hours (no leap day). Series come either from a CSV file with
header ``hour,load_kwh,pv_kwh,price`` or from a seeded synthetic generator
whose aggregates match a Finnish dairy farm (261 MWh/yr load, 20 kW PV,
three-tier time-of-use price).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

HOURS_PER_YEAR = 8760
DAYS_PER_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
MONTH_NAMES = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
               "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
MONTH_START_HOUR = tuple(24 * sum(DAYS_PER_MONTH[:m]) for m in range(12))

TRAIN_HOURS = (0, 720)       # Jan 1-30
TEST_HOURS = (744, 8760)     # Feb 1 - Dec 31

CSV_HEADER = ("hour", "load_kwh", "pv_kwh", "price")

DEFAULT_TIERS = (0.07, 0.11, 0.17)
# tier index per hour of day: night 22-07, peaks around the two milkings
DEFAULT_TOU_SCHEDULE = (
    0, 0, 0, 0, 0, 0, 0,        # 00-06 night
    2, 2, 2,                    # 07-09 morning peak
    1, 1, 1, 1, 1, 1, 1,        # 10-16 day
    2, 2, 2, 2,                 # 17-20 evening peak
    1,                          # 21 day
    0, 0,                       # 22-23 night
)

SITE_LATITUDE_DEG = 60.2


class DataError(ValueError):
    """Base class for malformed series input."""


class MissingFile(DataError, FileNotFoundError):
    pass


class BadHeader(DataError):
    pass


class RowCountError(DataError):
    pass


class NonNumericField(DataError):
    pass


class NegativeValue(DataError):
    pass


class TooManyPrices(DataError):
    pass


class HourIndexError(DataError):
    pass


@dataclass(frozen=True)
class HourlyRecord:
    index: int
    load_kwh: float
    pv_kwh: float
    price: float


@dataclass(frozen=True)
class YearSeries:
    records: tuple[HourlyRecord, ...]
    pv_capacity_kw: float
    tariff_tiers: tuple[float, ...]

    def __post_init__(self) -> None:
        validate_series(self)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def load(self) -> np.ndarray:
        return _readonly([r.load_kwh for r in self.records])

    @cached_property
    def pv(self) -> np.ndarray:
        return _readonly([r.pv_kwh for r in self.records])

    @cached_property
    def price(self) -> np.ndarray:
        return _readonly([r.price for r in self.records])

    @cached_property
    def tier(self) -> np.ndarray:
        """Tier index (0 = cheapest) of every hour."""
        lookup = {p: i for i, p in enumerate(self.tariff_tiers)}
        out = np.array([lookup[r.price] for r in self.records], dtype=np.int64)
        out.flags.writeable = False
        return out

    def tier_of(self, price: float) -> int:
        return self.tariff_tiers.index(price)


@dataclass(frozen=True)
class DatasetSplit:
    series: YearSeries
    train: tuple[HourlyRecord, ...] = field(repr=False)
    test: tuple[HourlyRecord, ...] = field(repr=False)
    train_start: int = TRAIN_HOURS[0]
    test_start: int = TEST_HOURS[0]


def _readonly(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def validate_series(series: YearSeries) -> None:
    recs = series.records
    if len(recs) != HOURS_PER_YEAR:
        raise RowCountError(f"expected {HOURS_PER_YEAR} records, got {len(recs)}")
    tiers = series.tariff_tiers
    if len(tiers) != 3 or any(b <= a for a, b in zip(tiers, tiers[1:])):
        raise DataError(f"tariff_tiers must be 3 strictly ascending prices, got {tiers}")
    tier_set = set(tiers)
    cap = series.pv_capacity_kw
    for i, r in enumerate(recs):
        if r.index != i:
            raise HourIndexError(f"record {i} has hour index {r.index}")
        if r.load_kwh < 0 or r.pv_kwh < 0 or r.price <= 0:
            raise NegativeValue(f"hour {i}: load, pv must be >= 0 and price > 0")
        if r.pv_kwh > cap:
            raise DataError(f"hour {i}: pv {r.pv_kwh} exceeds capacity {cap}")
        if r.price not in tier_set:
            raise DataError(f"hour {i}: price {r.price} not a tariff tier")


def month_of_hour(hour: int) -> int:
    """0-based calendar month of an hour-of-year."""
    for m in range(11, -1, -1):
        if hour >= MONTH_START_HOUR[m]:
            return m
    raise ValueError(hour)


def hour_of_date(month: int, day: int) -> int:
    """First hour-of-year of a 1-based (month, day)."""
    if not 1 <= month <= 12 or not 1 <= day <= DAYS_PER_MONTH[month - 1]:
        raise ValueError(f"no such date in a non-leap year: {month:02d}-{day:02d}")
    return MONTH_START_HOUR[month - 1] + 24 * (day - 1)


# --------------------------------------------------------------------------- csv


def save_csv(series: YearSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in series.records:
            # repr() round-trips floats exactly
            w.writerow((r.index, repr(r.load_kwh), repr(r.pv_kwh), repr(r.price)))


def load_csv(path: str | Path, pv_capacity_kw: float | None = None) -> YearSeries:
    """Read and validate a year of hourly data.

    Tariff tiers are the sorted distinct prices in the file. When
    ``pv_capacity_kw`` is not given the largest PV value is used.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise BadHeader(f"expected header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    if len(body) != HOURS_PER_YEAR:
        raise RowCountError(f"expected {HOURS_PER_YEAR} data rows, got {len(body)}")

    records = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != 4:
            raise NonNumericField(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            hour = int(row[0])
            load, pv, price = (float(x) for x in row[1:])
        except ValueError as exc:
            raise NonNumericField(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in (load, pv, price)):
            raise NonNumericField(f"line {lineno}: non-finite value")
        if load < 0 or pv < 0 or price <= 0:
            raise NegativeValue(f"line {lineno}: negative load/pv or non-positive price")
        records.append(HourlyRecord(hour, load, pv, price))

    tiers = tuple(sorted({r.price for r in records}))
    if len(tiers) > 3:
        raise TooManyPrices(f"found {len(tiers)} distinct prices, at most 3 allowed")
    if len(tiers) < 3:
        raise DataError(f"found only {len(tiers)} distinct prices, need 3 tariff tiers")
    cap = max(r.pv_kwh for r in records) if pv_capacity_kw is None else pv_capacity_kw
    return YearSeries(tuple(records), float(cap), tiers)


# --------------------------------------------------------------------- synthetic


def _solar_sine_elevation(hours: np.ndarray, latitude_deg: float) -> np.ndarray:
    """Sine of solar elevation at the middle of each hour (solar time)."""
    day = hours // 24 + 1
    hod = hours % 24 + 0.5
    decl = np.radians(23.44) * np.sin(2 * np.pi * (284 + day) / 365)
    lat = np.radians(latitude_deg)
    hour_angle = np.radians(15.0 * (hod - 12.0))
    return np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)


def generate_synthetic(
    seed: int = 42,
    annual_load_kwh: float = 261_000.0,
    pv_capacity_kw: float = 20.0,
    tiers: Sequence[float] = DEFAULT_TIERS,
    tou_schedule: Sequence[int] = DEFAULT_TOU_SCHEDULE,
) -> YearSeries:
    """Seeded synthetic dairy-farm year.

    Load follows a morning/evening milking double hump on a low base, a mild
    winter uplift and multiplicative noise, rescaled to ``annual_load_kwh``.
    PV follows solar elevation at ~60 N (zero at night, bell-shaped by day,
    summer peak) times a daily cloud factor, clipped to the plant capacity.
    """
    if annual_load_kwh <= 0 or pv_capacity_kw <= 0:
        raise ValueError("annual_load_kwh and pv_capacity_kw must be positive")
    tiers = tuple(float(t) for t in tiers)
    if len(tou_schedule) != 24 or any(t not in (0, 1, 2) for t in tou_schedule):
        raise ValueError("tou_schedule must map each of 24 hours to a tier in {0,1,2}")

    rng = np.random.default_rng(seed)
    hours = np.arange(HOURS_PER_YEAR)
    hod = hours % 24
    doy = hours // 24

    milking = np.exp(-0.5 * ((hod - 6.0) / 1.3) ** 2) + np.exp(-0.5 * ((hod - 18.0) / 1.3) ** 2)
    shape = 0.3 + 1.6 * milking
    seasonal = 1.0 + 0.12 * np.cos(2 * np.pi * (doy + 10) / 365)
    noise = np.clip(1.0 + 0.08 * rng.standard_normal(HOURS_PER_YEAR), 0.5, None)
    load = shape * seasonal * noise
    load *= annual_load_kwh / load.sum()

    sin_el = np.clip(_solar_sine_elevation(hours, SITE_LATITUDE_DEG), 0.0, None)
    clear_sky = 0.95 * sin_el / sin_el.max()
    cloud = rng.beta(4.0, 2.0, size=365)[doy]
    jitter = np.clip(1.0 + 0.1 * rng.standard_normal(HOURS_PER_YEAR), 0.0, None)
    pv = np.minimum(pv_capacity_kw * clear_sky * cloud * jitter, pv_capacity_kw)

    price = np.asarray(tiers)[np.asarray(tou_schedule)[hod]]
    records = tuple(
        HourlyRecord(int(h), float(l), float(p), float(c))
        for h, l, p, c in zip(hours, load, pv, price)
    )
    return YearSeries(records, float(pv_capacity_kw), tiers)


def split(series: YearSeries) -> DatasetSplit:
    """January 1-30 for training, February-December for testing.

    January 31 belongs to neither slice.
    """
    recs = series.records
    return DatasetSplit(
        series=series,
        train=recs[TRAIN_HOURS[0]:TRAIN_HOURS[1]],
        test=recs[TEST_HOURS[0]:TEST_HOURS[1]],
    )
