"""Exogenous inputs: per-slot traffic load (MB) and harvested energy (kJ)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_SLOT_SECONDS = 3600
DEFAULT_EDGE_SHARE = 0.8
DAYLIGHT = (7, 18)

# Aggregate (edge + delay-tolerant) daily load shape, as a fraction of the
# edge-served maximum. Anchors are (hour, level); linear in between, wraps at 24.
_LOAD_ANCHORS = (
    (0, 1.00), (1, 0.75), (2, 0.45), (3, 0.25), (4, 0.17), (5, 0.40), (6, 0.62),
    (7, 0.76), (8, 0.83), (9, 0.86), (24, 1.00),
)


class TraceError(ValueError):
    pass


class TraceFileMissing(TraceError, FileNotFoundError):
    pass


class MalformedRow(TraceError):
    pass


class NegativeValue(TraceError):
    pass


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeriesTrace:
    name: str
    slot_duration: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size < 1:
            raise TraceError(f"trace {self.name!r} must be a non-empty 1-D series")
        if not np.all(np.isfinite(vals)):
            raise TraceError(f"trace {self.name!r} contains non-finite values")
        if np.any(vals < 0):
            raise NegativeValue(f"trace {self.name!r} contains negative values")
        if self.slot_duration <= 0:
            raise TraceError("slot_duration must be positive")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def hour_of_day(self) -> np.ndarray:
        return (np.arange(len(self)) * self.slot_duration / 3600.0).astype(int) % 24


@dataclass(frozen=True)
class TraceBundle:
    load: TimeSeriesTrace
    harvested: TimeSeriesTrace
    edge_share: float = DEFAULT_EDGE_SHARE

    def __post_init__(self) -> None:
        if len(self.load) != len(self.harvested):
            raise TraceError("load and harvested traces differ in length")
        if self.load.slot_duration != self.harvested.slot_duration:
            raise TraceError("load and harvested traces differ in slot duration")
        if not 0.0 <= self.edge_share <= 1.0:
            raise TraceError("edge_share must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.load)

    @property
    def slot_duration(self) -> float:
        return self.load.slot_duration


# ---------------------------------------------------------------------------
# CSV


def _parse(cell: str, lineno: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise MalformedRow(f"line {lineno}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise MalformedRow(f"line {lineno}: non-finite value {cell!r}")
    if v < 0:
        raise NegativeValue(f"line {lineno}: negative value {v}")
    return v


def load_csv_trace(path: str | Path, column: str | None = None,
                   slot_duration: float = DEFAULT_SLOT_SECONDS, scale: float = 1.0) -> TimeSeriesTrace:
    """Read a trace from either a bare one-value-per-line file or a CSV with header.

    With a header, ``column`` selects the value column (default: the last one).
    ``scale`` multiplies every value, e.g. to apply an edge share at ingestion.
    """
    path = Path(path)
    if not path.is_file():
        raise TraceFileMissing(f"no such trace file: {path}")
    with path.open(newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedRow(f"{path}: no data rows")

    first = [c.strip() for c in rows[0][1]]
    try:
        [float(c) for c in first]
        header = None
    except ValueError:
        header = first
        rows = rows[1:]

    if header is None:
        col = -1
    elif column is None:
        col = len(header) - 1
    elif column in header:
        col = header.index(column)
    else:
        raise MalformedRow(f"{path}: column {column!r} not in header {header}")

    values = []
    for lineno, row in rows:
        if header is not None and len(row) != len(header):
            raise MalformedRow(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        values.append(_parse(row[col].strip(), lineno) * scale)
    if not values:
        raise MalformedRow(f"{path}: no data rows")
    return TimeSeriesTrace(column or path.stem, slot_duration, values)


def write_csv_trace(trace: TimeSeriesTrace, path: str | Path, column: str | None = None) -> None:
    column = column or trace.name or "value"
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", column])
        for i, v in enumerate(trace.values):
            w.writerow([int(i * trace.slot_duration), repr(float(v))])


# ---------------------------------------------------------------------------
# synthetic generators


def daily_load_profile() -> np.ndarray:
    """Hourly aggregate load shape (24 values, peak near 1)."""
    hours, levels = zip(*_LOAD_ANCHORS)
    return np.interp(np.arange(24), hours, levels)


def synth_load_trace(days: int, l_max: float, noise_sd: float = 0.0, seed: int = 0,
                     edge_share: float = DEFAULT_EDGE_SHARE,
                     slot_duration: float = DEFAULT_SLOT_SECONDS) -> TimeSeriesTrace:
    """Hourly edge-destined load in MB with a night trough and a daytime plateau.

    The aggregate profile is built for the whole site and the edge share is
    applied here, so the output is directly L(t).  Values lie in (0, l_max].
    """
    if days < 1:
        raise TraceError("days must be >= 1")
    if l_max <= 0:
        raise TraceError("l_max must be positive")
    if noise_sd < 0:
        raise TraceError("noise_sd must be non-negative")
    if not 0.0 < edge_share <= 1.0:
        raise TraceError("edge_share must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    aggregate = np.tile(daily_load_profile(), days) * l_max / edge_share
    load = edge_share * aggregate
    if noise_sd > 0:
        load = load + rng.normal(0.0, noise_sd, size=load.size)
    load = np.clip(load, 0.01 * l_max, l_max)
    return TimeSeriesTrace("load_mb", slot_duration, load)


def harvest_components(days: int, beta_max: float, seed: int = 0, daily_multiple: float = 1.0,
                       daylight: tuple[int, int] = DAYLIGHT) -> tuple[np.ndarray, np.ndarray]:
    """Solar and wind per-slot energy (kJ) before capping.

    Solar is a half-sine over the daylight window with a per-day cloud factor;
    wind fills the remaining hours.  The pair is scaled so the mean daily total
    equals ``daily_multiple * beta_max``.
    """
    if days < 1:
        raise TraceError("days must be >= 1")
    if beta_max <= 0:
        raise TraceError("beta_max must be positive")
    rng = np.random.default_rng(seed)
    start, end = daylight
    hour = np.arange(24)
    bell = np.where((hour > start) & (hour < end), np.sin(np.pi * (hour - start) / (end - start)), 0.0)
    daylight_mask = (hour >= start) & (hour <= end)

    cloud = rng.uniform(0.55, 1.0, size=days)
    solar = (cloud[:, None] * bell[None, :]).ravel()
    wind_speed = rng.weibull(2.0, size=24 * days)
    wind = 0.12 * np.minimum(wind_speed, 2.5) ** 2 / 2.5
    wind = np.where(np.tile(daylight_mask, days), 0.0, wind)

    scale = daily_multiple * beta_max * days / (solar.sum() + wind.sum())
    return solar * scale, wind * scale


def synth_harvest_trace(days: int, beta_max: float, seed: int = 0, daily_multiple: float = 1.0,
                        slot_duration: float = DEFAULT_SLOT_SECONDS) -> TimeSeriesTrace:
    solar, wind = harvest_components(days, beta_max, seed, daily_multiple)
    return TimeSeriesTrace("harvest_kj", slot_duration, np.minimum(solar + wind, beta_max))


def synth_bundle(days: int = 30, l_max: float = 15.0, beta_max: float = 490.0, seed: int = 0,
                 noise_sd: float | None = None, edge_share: float = DEFAULT_EDGE_SHARE,
                 harvest_multiple: float = 1.0) -> TraceBundle:
    """Default paired traces; load noise defaults to 5% of ``l_max``."""
    noise = 0.05 * l_max if noise_sd is None else noise_sd
    load = synth_load_trace(days, l_max, noise, seed, edge_share)
    harvest = synth_harvest_trace(days, beta_max, seed + 7919, harvest_multiple)
    return TraceBundle(load, harvest, edge_share)


def normalize_load(trace: TimeSeriesTrace | Sequence[float], l_max: float) -> np.ndarray:
    """Offered load as a fraction of ``l_max``, clamped to at most 1."""
    if l_max <= 0:
        raise TraceError("l_max must be positive")
    vals = trace.values if isinstance(trace, TimeSeriesTrace) else np.asarray(trace, dtype=float)
    return np.minimum(np.asarray(vals, dtype=float) / l_max, 1.0)
