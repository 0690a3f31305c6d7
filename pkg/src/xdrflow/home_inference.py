"""Weekly home-comuna inference from night-time weekday events.

A night runs from 22:00 to 07:00 local; its post-midnight hours belong
to the previous day's night, and the night is kept when that previous
day is a weekday.  Each Monday-aligned week's home is the comuna of the
device's most-used antenna over the week's kept night events, requiring
at least ``min_events`` events; antenna ties break toward the smallest
antenna id so that parallel runs reduce deterministically.

Scalar operations mirror the definitions one event at a time; the
``WeeklyHomeAccumulator`` computes the same assignments columnar for
full-corpus runs, and the two are kept interchangeable by tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import (SECONDS_PER_DAY, SECONDS_PER_HOUR, StudyWindow, XdrEvent,
                   date_of, day_index, mode_with_tiebreak, monday_of, weekday_of)
from .errors import SchemaError, ValidationError
from .ingest import AntennaRegistry, ComunaTable, XdrBatch

NIGHT_START_HOUR = 22
NIGHT_END_HOUR = 7
DEFAULT_MIN_EVENTS = 3

HOMES_CSV_HEADER = "device_id,week_start,comuna_id"


# ---------------------------------------------------------------------------
# night classification
# ---------------------------------------------------------------------------

def night_of(ts_utc: int, window: StudyWindow) -> Optional[int]:
    """Day index of the night an event belongs to, or None if not at night."""
    local = window.local_seconds(ts_utc)
    day, sec = divmod(local, SECONDS_PER_DAY)
    if sec >= NIGHT_START_HOUR * SECONDS_PER_HOUR:
        return day
    if sec < NIGHT_END_HOUR * SECONDS_PER_HOUR:
        return day - 1
    return None


def night_weekday_filter(events: Iterable[XdrEvent],
                         window: StudyWindow) -> Iterator[XdrEvent]:
    """Keep events on weekday nights whose night starts inside the window."""
    for ev in events:
        night = night_of(ev.timestamp, window)
        if night is None or weekday_of(night) > 4:
            continue
        if window.start_day <= night <= window.end_day:
            yield ev


def night_mask_arrays(ts_utc: np.ndarray,
                      window: StudyWindow) -> tuple[np.ndarray, np.ndarray]:
    """(keep mask, night day index) for an epoch-second array."""
    local = ts_utc + window.tz_offset * SECONDS_PER_HOUR
    day = local // SECONDS_PER_DAY
    sec = local - day * SECONDS_PER_DAY
    evening = sec >= NIGHT_START_HOUR * SECONDS_PER_HOUR
    morning = sec < NIGHT_END_HOUR * SECONDS_PER_HOUR
    night_day = np.where(morning, day - 1, day)
    keep = ((evening | morning)
            & ((night_day + 3) % 7 <= 4)
            & (night_day >= window.start_day) & (night_day <= window.end_day))
    return keep, night_day


# ---------------------------------------------------------------------------
# scalar weekly home
# ---------------------------------------------------------------------------

def weekly_home(events: Sequence[XdrEvent], registry: AntennaRegistry,
                min_events: int = DEFAULT_MIN_EVENTS) -> Optional[str]:
    """Home comuna for one device-week of night events.

    Returns None when fewer than ``min_events`` events are present.
    """
    counts: dict[int, int] = {}
    total = 0
    for ev in events:
        counts[ev.antenna_id] = counts.get(ev.antenna_id, 0) + 1
        total += 1
    if total < min_events:
        return None
    best = min(counts, key=lambda a: (-counts[a], a))
    return registry.comuna_of(best)


@dataclass
class HomeSeries:
    """Weekly inferred homes of one device over the study window."""

    device_id: int
    weekly_home: dict[int, Optional[str]]  # week Monday day index -> comuna
    baseline_home: Optional[str]
    november_home: Optional[str]

    def home_at(self, week_monday: int) -> Optional[str]:
        return self.weekly_home.get(week_monday)


def build_home_series(device_events: Iterable[XdrEvent], window: StudyWindow,
                      registry: AntennaRegistry,
                      min_events: int = DEFAULT_MIN_EVENTS) -> HomeSeries:
    """Night-filter one device's events and resolve each week's home."""
    by_week: dict[int, list[XdrEvent]] = {}
    device_id = None
    for ev in night_weekday_filter(device_events, window):
        device_id = ev.device_id if device_id is None else device_id
        by_week.setdefault(monday_of(night_of(ev.timestamp, window)), []).append(ev)

    weekly: dict[int, Optional[str]] = {}
    for m in window.week_mondays:
        evs = by_week.get(m)
        weekly[m] = weekly_home(evs, registry, min_events) if evs else None

    baseline = weekly.get(window.baseline_monday)
    november_values = [weekly[m] for m in window.november_mondays
                       if weekly.get(m) is not None]
    november = mode_with_tiebreak(november_values) if len(november_values) >= 2 else None
    return HomeSeries(device_id=device_id if device_id is not None else -1,
                      weekly_home=weekly, baseline_home=baseline,
                      november_home=november)


# ---------------------------------------------------------------------------
# columnar weekly homes
# ---------------------------------------------------------------------------

@dataclass
class WeeklyHomes:
    """Resolved (device, week) home assignments, sorted by device then week."""

    device: np.ndarray       # uint64
    week: np.ndarray         # int64 Monday day index
    comuna_code: np.ndarray  # int32 into ``comuna_ids``
    comuna_ids: list[str]

    def __len__(self) -> int:
        return self.device.size

    def devices(self) -> np.ndarray:
        return np.unique(self.device)

    def series_for(self, device_id: int, window: StudyWindow) -> HomeSeries:
        sel = self.device == np.uint64(device_id)
        weekly: dict[int, Optional[str]] = {m: None for m in window.week_mondays}
        for w, c in zip(self.week[sel].tolist(), self.comuna_code[sel].tolist()):
            weekly[w] = self.comuna_ids[c]
        baseline = weekly.get(window.baseline_monday)
        values = [weekly[m] for m in window.november_mondays if weekly.get(m)]
        november = mode_with_tiebreak(values) if len(values) >= 2 else None
        return HomeSeries(device_id=device_id, weekly_home=weekly,
                          baseline_home=baseline, november_home=november)


def _reduce_counts(device, week, antenna, comuna, count):
    """Sum counts of equal (device, week, antenna) triples."""
    order = np.lexsort((antenna, week, device))
    device, week, antenna = device[order], week[order], antenna[order]
    comuna, count = comuna[order], count[order]
    new = np.empty(device.size, dtype=bool)
    new[0] = True
    new[1:] = ((device[1:] != device[:-1]) | (week[1:] != week[:-1])
               | (antenna[1:] != antenna[:-1]))
    idx = np.flatnonzero(new)
    sums = np.add.reduceat(count, idx)
    return device[idx], week[idx], antenna[idx], comuna[idx], sums


class WeeklyHomeAccumulator:
    """Streaming reduction of night events into weekly home assignments.

    Batches may arrive in any order and any partitioning; the result is
    identical because the reduction is a commutative count merge.
    """

    def __init__(self, window: StudyWindow, registry: AntennaRegistry,
                 min_events: int = DEFAULT_MIN_EVENTS):
        self.window = window
        self.registry = registry
        self.min_events = int(min_events)
        self._parts: list[tuple] = []

    def add_batch(self, batch: XdrBatch) -> None:
        keep, night_day = night_mask_arrays(batch.ts_utc, self.window)
        if not keep.any():
            return
        device = batch.device[keep]
        antenna = batch.antenna[keep]
        comuna = batch.comuna_code[keep]
        nd = night_day[keep]
        week = (nd - (nd + 3) % 7).astype(np.int64)
        d, w, a, c, n = _reduce_counts(device, week, antenna, comuna,
                                       np.ones(device.size, dtype=np.int64))
        self._parts.append((d, w, a, c, n))

    def merge(self, other: "WeeklyHomeAccumulator") -> None:
        self._parts.extend(other._parts)

    def finalize(self) -> WeeklyHomes:
        if not self._parts:
            empty = np.array([], dtype=np.int64)
            return WeeklyHomes(device=empty.astype(np.uint64), week=empty,
                               comuna_code=empty.astype(np.int32),
                               comuna_ids=list(self.registry.comuna_ids))
        device = np.concatenate([p[0] for p in self._parts])
        week = np.concatenate([p[1] for p in self._parts])
        antenna = np.concatenate([p[2] for p in self._parts])
        comuna = np.concatenate([p[3] for p in self._parts])
        count = np.concatenate([p[4] for p in self._parts])
        device, week, antenna, comuna, count = _reduce_counts(
            device, week, antenna, comuna, count)

        # pick per (device, week): largest count, ties to smallest antenna id;
        # the count sort key is flipped so lexsort keeps antenna order inside ties
        order = np.lexsort((antenna, -count, week, device))
        device, week, antenna = device[order], week[order], antenna[order]
        comuna, count = comuna[order], count[order]
        first = np.empty(device.size, dtype=bool)
        first[0] = True
        first[1:] = (device[1:] != device[:-1]) | (week[1:] != week[:-1])
        group = np.flatnonzero(first)
        totals = np.add.reduceat(count, group)
        enough = totals >= self.min_events
        sel = group[enough]
        return WeeklyHomes(device=device[sel], week=week[sel],
                           comuna_code=comuna[sel],
                           comuna_ids=list(self.registry.comuna_ids))


def weekly_homes_from_batches(batches: Iterable[XdrBatch], window: StudyWindow,
                              registry: AntennaRegistry,
                              min_events: int = DEFAULT_MIN_EVENTS) -> WeeklyHomes:
    acc = WeeklyHomeAccumulator(window, registry, min_events)
    for batch in batches:
        acc.add_batch(batch)
    return acc.finalize()


# ---------------------------------------------------------------------------
# baseline and November summary
# ---------------------------------------------------------------------------

@dataclass
class HomeSummary:
    """Per-device baseline (March) and November-mode homes; -1 means absent."""

    device: np.ndarray         # uint64, unique and sorted
    baseline_code: np.ndarray  # int32
    november_code: np.ndarray  # int32
    comuna_ids: list[str]


def summarize_homes(weekly: WeeklyHomes, window: StudyWindow) -> HomeSummary:
    devices = np.unique(weekly.device)
    n = devices.size

    def week_codes(monday: int) -> np.ndarray:
        codes = np.full(n, -1, dtype=np.int32)
        sel = weekly.week == monday
        if sel.any():
            pos = np.searchsorted(devices, weekly.device[sel])
            codes[pos] = weekly.comuna_code[sel]
        return codes

    baseline = week_codes(window.baseline_monday)

    nov = np.stack([week_codes(m) for m in window.november_mondays])  # (4, n)
    k = nov.shape[0]
    present = (nov >= 0).sum(axis=0)
    counts = np.zeros((k, n), dtype=np.int32)
    last = np.zeros((k, n), dtype=np.int32)
    for j in range(k):
        for i in range(k):
            eq = nov[i] == nov[j]
            counts[j] += eq
            last[j] = np.where(eq, i, last[j])
    score = np.where(nov >= 0, counts * 8 + last, -1)
    best_slot = np.argmax(score, axis=0)
    november = nov[best_slot, np.arange(n)]
    november = np.where(present >= 2, november, -1).astype(np.int32)

    return HomeSummary(device=devices, baseline_code=baseline,
                       november_code=november, comuna_ids=list(weekly.comuna_ids))


# ---------------------------------------------------------------------------
# audit CSV
# ---------------------------------------------------------------------------

def write_homes_csv(path, weekly: WeeklyHomes) -> None:
    import pandas as pd

    week_start = [date_of(int(w)).isoformat() for w in weekly.week]
    comuna = [weekly.comuna_ids[c] for c in weekly.comuna_code]
    df = pd.DataFrame({"device_id": weekly.device, "week_start": week_start,
                       "comuna_id": comuna})
    df.to_csv(path, index=False, lineterminator="\n")


def read_homes_csv(path, comunas: ComunaTable) -> WeeklyHomes:
    import datetime as dt

    import pandas as pd

    df = pd.read_csv(path, dtype={"device_id": np.uint64, "week_start": str,
                                  "comuna_id": str})
    if list(df.columns) != HOMES_CSV_HEADER.split(","):
        raise SchemaError(f"{path}: expected header {HOMES_CSV_HEADER!r}")
    unknown = set(df["comuna_id"]) - set(comunas.ids)
    if unknown:
        raise ValidationError(f"{path}: unknown comunas {sorted(unknown)[:5]}")
    week = np.array([day_index(dt.date.fromisoformat(s)) for s in df["week_start"]],
                    dtype=np.int64)
    codes = np.array([comunas.code_of(c) for c in df["comuna_id"]], dtype=np.int32)
    device = df["device_id"].to_numpy()
    order = np.lexsort((week, device))
    return WeeklyHomes(device=device[order], week=week[order],
                       comuna_code=codes[order], comuna_ids=list(comunas.ids))
