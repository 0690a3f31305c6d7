"""Daily mobility indices per comuna and their baseline-relative change.

A trip is each consecutive same-day event pair of one device on two
different antennas; it is internal when both antennas sit in one comuna
and external otherwise.  Trips and activity are attributed to the
device's current-week home comuna, so the indices describe residents.
The index is trips per active device; the total index is defined as the
sum of the internal and external indices, which makes the decomposition
exact by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import SECONDS_PER_DAY, SECONDS_PER_HOUR, StudyWindow, XdrEvent
from .home_inference import WeeklyHomes
from .ingest import AntennaRegistry, QuarantineSchedule, XdrBatch


# ---------------------------------------------------------------------------
# scalar device-day contribution
# ---------------------------------------------------------------------------

def count_trips(events: Sequence[XdrEvent], registry: AntennaRegistry,
                home_comuna: str) -> tuple[int, int, bool]:
    """(internal trips, external trips, active flag) for one device-day.

    ``events`` must be the device's time-sorted events of a single local
    day; ``home_comuna`` is where the contribution will be attributed and
    does not enter the counting itself.
    """
    internal = external = 0
    prev_antenna = None
    prev_comuna = None
    for ev in events:
        comuna = registry.comuna_of(ev.antenna_id)
        if prev_antenna is not None and ev.antenna_id != prev_antenna:
            if comuna == prev_comuna:
                internal += 1
            else:
                external += 1
        prev_antenna = ev.antenna_id
        prev_comuna = comuna
    return internal, external, len(events) > 0


# ---------------------------------------------------------------------------
# columnar device-day counting
# ---------------------------------------------------------------------------

@dataclass
class TripTable:
    """Per (comuna, day) trip and activity counts, sorted by comuna then day."""

    comuna_code: np.ndarray  # int32
    day: np.ndarray          # int64 local day index
    internal: np.ndarray     # int64
    external: np.ndarray     # int64
    active: np.ndarray       # int64 devices with >= 1 event, homed here this week
    comuna_ids: list[str]


def _group_sum(keys: np.ndarray, *values: np.ndarray):
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    if k.size == 0:
        return k, tuple(v[order] for v in values)
    new = np.empty(k.size, dtype=bool)
    new[0] = True
    new[1:] = k[1:] != k[:-1]
    idx = np.flatnonzero(new)
    return k[idx], tuple(np.add.reduceat(v[order], idx) for v in values)


def trip_table_from_batches(batches: Iterable[XdrBatch], window: StudyWindow,
                            homes: WeeklyHomes) -> TripTable:
    """Count trips and active devices for a whole run.

    Events are materialized and sorted by (device, time); this holds the
    run's columns in memory, which is the intended desk-scale trade-off.
    """
    devs, tss, ants, coms = [], [], [], []
    for b in batches:
        devs.append(b.device)
        tss.append(b.ts_utc)
        ants.append(b.antenna)
        coms.append(b.comuna_code)
    comuna_ids = list(homes.comuna_ids)
    if not devs:
        empty = np.array([], dtype=np.int64)
        return TripTable(empty.astype(np.int32), empty, empty, empty, empty, comuna_ids)

    device = np.concatenate(devs)
    ts = np.concatenate(tss)
    antenna = np.concatenate(ants)
    comuna = np.concatenate(coms)

    order = np.lexsort((ts, device))
    device, ts, antenna, comuna = device[order], ts[order], antenna[order], comuna[order]
    day = (ts + window.tz_offset * SECONDS_PER_HOUR) // SECONDS_PER_DAY
    week = day - (day + 3) % 7

    # join the device-week home assignment
    dev_unique = np.unique(device)
    dev_idx = np.searchsorted(dev_unique, device)
    weeks_all = np.arange(min(window.week_mondays), max(window.week_mondays) + 7, 7)
    week_idx = (week - weeks_all[0]) // 7
    n_weeks = weeks_all.size

    home_lut = np.full(dev_unique.size * n_weeks, -1, dtype=np.int32)
    h_dev_idx = np.searchsorted(dev_unique, homes.device)
    have = (h_dev_idx < dev_unique.size)
    have &= dev_unique[np.minimum(h_dev_idx, dev_unique.size - 1)] == homes.device
    h_week_idx = (homes.week - weeks_all[0]) // 7
    ok = have & (h_week_idx >= 0) & (h_week_idx < n_weeks)
    home_lut[h_dev_idx[ok] * n_weeks + h_week_idx[ok]] = homes.comuna_code[ok]
    home = home_lut[dev_idx * n_weeks + np.clip(week_idx, 0, n_weeks - 1)]
    home[(week_idx < 0) | (week_idx >= n_weeks)] = -1

    # consecutive same-device same-day pairs on different antennas are trips
    same = (device[1:] == device[:-1]) & (day[1:] == day[:-1])
    moved = same & (antenna[1:] != antenna[:-1])
    attributed = moved & (home[1:] >= 0)
    internal = attributed & (comuna[1:] == comuna[:-1])
    external = attributed & ~(comuna[1:] == comuna[:-1])

    day_span = window.end_day - window.start_day + 1
    n_com = len(comuna_ids)

    def cell_key(h, d):
        return h.astype(np.int64) * day_span + (d - window.start_day)

    trip_keys = cell_key(home[1:], day[1:])
    k_int, (v_int,) = _group_sum(trip_keys[internal],
                                 np.ones(int(internal.sum()), dtype=np.int64))
    k_ext, (v_ext,) = _group_sum(trip_keys[external],
                                 np.ones(int(external.sum()), dtype=np.int64))

    # active devices: distinct (device, day) with any event and a resolved home
    dd_new = np.empty(device.size, dtype=bool)
    dd_new[0] = True
    dd_new[1:] = ~same
    act = dd_new & (home >= 0)
    k_act, (v_act,) = _group_sum(cell_key(home[act], day[act]),
                                 np.ones(int(act.sum()), dtype=np.int64))

    cells = np.union1d(np.union1d(k_int, k_ext), k_act)
    internal_c = np.zeros(cells.size, dtype=np.int64)
    external_c = np.zeros(cells.size, dtype=np.int64)
    active_c = np.zeros(cells.size, dtype=np.int64)
    internal_c[np.searchsorted(cells, k_int)] = v_int
    external_c[np.searchsorted(cells, k_ext)] = v_ext
    active_c[np.searchsorted(cells, k_act)] = v_act

    return TripTable(comuna_code=(cells // day_span).astype(np.int32),
                     day=cells % day_span + window.start_day,
                     internal=internal_c, external=external_c, active=active_c,
                     comuna_ids=comuna_ids)


# ---------------------------------------------------------------------------
# index series
# ---------------------------------------------------------------------------

@dataclass
class IndexSeries:
    """Daily indices and baseline-relative changes of one comuna.

    Arrays cover every day of the window; NaN marks days without active
    devices.  ``no_baseline`` is set when no baseline day had activity,
    in which case every change value is NaN.
    """

    comuna_id: str
    days: np.ndarray
    im_internal: np.ndarray
    im_external: np.ndarray
    im_total: np.ndarray
    change_internal: np.ndarray
    change_external: np.ndarray
    change_total: np.ndarray
    baseline_mean_internal: float
    baseline_mean_external: float
    baseline_mean_total: float
    no_baseline: bool
    mean_reduction: float


def _change(index: np.ndarray, baseline_mean: float) -> np.ndarray:
    if not np.isfinite(baseline_mean) or baseline_mean == 0.0:
        return np.full(index.size, np.nan)
    return 100.0 * (index - baseline_mean) / baseline_mean


def build_index_series(trips: TripTable, window: StudyWindow) -> dict[str, IndexSeries]:
    """Assemble per-comuna daily index series over the study window."""
    days = np.arange(window.start_day, window.end_day + 1, dtype=np.int64)
    n_days = days.size
    base_lo = window.baseline_monday - window.start_day
    base_sel = slice(base_lo, base_lo + 7)

    out: dict[str, IndexSeries] = {}
    for code in np.unique(trips.comuna_code):
        sel = trips.comuna_code == code
        pos = (trips.day[sel] - window.start_day).astype(np.int64)
        active = np.zeros(n_days)
        internal = np.zeros(n_days)
        external = np.zeros(n_days)
        active[pos] = trips.active[sel]
        internal[pos] = trips.internal[sel]
        external[pos] = trips.external[sel]

        with np.errstate(divide="ignore", invalid="ignore"):
            im_i = np.where(active > 0, internal / np.maximum(active, 1), np.nan)
            im_e = np.where(active > 0, external / np.maximum(active, 1), np.nan)
        im_t = im_i + im_e

        base_days = ~np.isnan(im_t[base_sel])
        no_baseline = not base_days.any()
        if no_baseline:
            bm_i = bm_e = bm_t = math.nan
        else:
            bm_i = float(np.nanmean(im_i[base_sel]))
            bm_e = float(np.nanmean(im_e[base_sel]))
            bm_t = float(np.nanmean(im_t[base_sel]))

        ch_i = _change(im_i, bm_i)
        ch_e = _change(im_e, bm_e)
        ch_t = _change(im_t, bm_t)
        defined = ~np.isnan(ch_t)
        mean_reduction = float(np.mean(-ch_t[defined])) if defined.any() else math.nan

        out[trips.comuna_ids[int(code)]] = IndexSeries(
            comuna_id=trips.comuna_ids[int(code)], days=days,
            im_internal=im_i, im_external=im_e, im_total=im_t,
            change_internal=ch_i, change_external=ch_e, change_total=ch_t,
            baseline_mean_internal=bm_i, baseline_mean_external=bm_e,
            baseline_mean_total=bm_t, no_baseline=no_baseline,
            mean_reduction=mean_reduction)
    return out


@dataclass
class QuarantineStrata:
    """Mean total-index change split into lockdown and free days."""

    comuna_id: str
    quarantine_mean_change: Optional[float]
    free_mean_change: Optional[float]
    days_quarantine: int
    days_free: int


def stratify_by_quarantine(series: Mapping[str, IndexSeries],
                           schedule: QuarantineSchedule) -> dict[str, QuarantineStrata]:
    """Split each comuna's change series by its lockdown calendar.

    Day counts include only days with a defined change value, so the
    day-count weighted strata recompose the overall mean change.
    """
    out: dict[str, QuarantineStrata] = {}
    for comuna_id, s in series.items():
        q_mask = schedule.day_mask(comuna_id, int(s.days[0]), int(s.days[-1]))
        defined = ~np.isnan(s.change_total)
        q = defined & q_mask
        f = defined & ~q_mask
        out[comuna_id] = QuarantineStrata(
            comuna_id=comuna_id,
            quarantine_mean_change=float(s.change_total[q].mean()) if q.any() else None,
            free_mean_change=float(s.change_total[f].mean()) if f.any() else None,
            days_quarantine=int(q.sum()),
            days_free=int(f.sum()))
    return out
