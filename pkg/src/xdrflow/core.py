"""Domain types, calendar arithmetic, and two pure numeric helpers.

Conventions used throughout the package:

* timestamps are epoch seconds UTC; a single signed ``tz_offset`` (hours)
  converts to local time, with no DST modeling;
* days are integer indices counted from 1970-01-01 in local time;
* weeks are Monday-aligned local-time weeks, identified by the day index
  of their Monday.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

from .errors import EmptySeries, ValidationError

EARTH_RADIUS_KM = 6371.0088
SECONDS_PER_DAY = 86_400
SECONDS_PER_HOUR = 3_600

_EPOCH_ORDINAL = dt.date(1970, 1, 1).toordinal()


# ---------------------------------------------------------------------------
# calendar arithmetic on integer day indices
# ---------------------------------------------------------------------------

def day_index(date: dt.date) -> int:
    """Days elapsed since 1970-01-01 for a calendar date."""
    return date.toordinal() - _EPOCH_ORDINAL


def date_of(day: int) -> dt.date:
    """Inverse of :func:`day_index`."""
    return dt.date.fromordinal(day + _EPOCH_ORDINAL)


def weekday_of(day: int) -> int:
    """Weekday of a day index, Monday=0 .. Sunday=6 (1970-01-01 was a Thursday)."""
    return (day + 3) % 7


def monday_of(day: int) -> int:
    """Day index of the Monday starting the week that contains ``day``."""
    return day - weekday_of(day)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XdrEvent:
    """One anonymized device-to-antenna interaction."""

    device_id: int
    timestamp: int  # epoch seconds UTC
    antenna_id: int


@dataclass(frozen=True)
class Antenna:
    antenna_id: int
    lat: float
    lon: float
    comuna_id: str

    def validate(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"antenna {self.antenna_id}: latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"antenna {self.antenna_id}: longitude {self.lon} out of range")


@dataclass(frozen=True)
class ComunaProfile:
    """Administrative unit with its socioeconomic and geographic attributes."""

    comuna_id: str
    name: str
    region_id: str
    in_scl: bool
    income_decile: float
    poverty_pct: float
    rurality_pct: float
    population: float
    area_km2: float
    icvu: Optional[float]
    centroid_lat: float
    centroid_lon: float

    @property
    def density(self) -> float:
        return self.population / self.area_km2

    def validate(self) -> None:
        cid = self.comuna_id
        if not 1.0 <= self.income_decile <= 10.0:
            raise ValidationError(f"comuna {cid}: income decile {self.income_decile} outside [1, 10]")
        if not 0.0 <= self.poverty_pct <= 100.0:
            raise ValidationError(f"comuna {cid}: poverty {self.poverty_pct} outside [0, 100]")
        if not 0.0 <= self.rurality_pct <= 1.0:
            raise ValidationError(f"comuna {cid}: rurality {self.rurality_pct} outside [0, 1]")
        if not self.population > 0:
            raise ValidationError(f"comuna {cid}: population must be positive")
        if not self.area_km2 > 0:
            raise ValidationError(f"comuna {cid}: area must be positive")
        if not math.isfinite(self.density):
            raise ValidationError(f"comuna {cid}: density is not finite")
        if not -90.0 <= self.centroid_lat <= 90.0:
            raise ValidationError(f"comuna {cid}: centroid latitude out of range")
        if not -180.0 <= self.centroid_lon <= 180.0:
            raise ValidationError(f"comuna {cid}: centroid longitude out of range")


@dataclass(frozen=True)
class StudyWindow:
    """The Mar 1 .. Nov 30 observation window of one study year.

    ``baseline_monday_override`` replaces the default baseline week (the
    second Monday-aligned week whose Monday falls in March) when set; it
    must be a Monday inside the window.
    """

    year: int
    tz_offset: int = -4  # hours added to UTC to obtain local time
    baseline_monday_override: Optional[dt.date] = None

    # -- day-index bounds (local calendar) ---------------------------------

    @cached_property
    def start_day(self) -> int:
        return day_index(dt.date(self.year, 3, 1))

    @cached_property
    def end_day(self) -> int:
        return day_index(dt.date(self.year, 11, 30))

    @property
    def n_days(self) -> int:
        return self.end_day - self.start_day + 1

    # -- UTC instant bounds -------------------------------------------------

    @cached_property
    def start_utc(self) -> int:
        """Epoch second at which local Mar 1 00:00 begins."""
        return self.start_day * SECONDS_PER_DAY - self.tz_offset * SECONDS_PER_HOUR

    @cached_property
    def end_utc(self) -> int:
        """Exclusive epoch-second bound: the instant local Dec 1 00:00 begins."""
        return (self.end_day + 1) * SECONDS_PER_DAY - self.tz_offset * SECONDS_PER_HOUR

    def contains_utc(self, ts: int) -> bool:
        return self.start_utc <= ts < self.end_utc

    def local_seconds(self, ts_utc: int) -> int:
        return ts_utc + self.tz_offset * SECONDS_PER_HOUR

    def local_day(self, ts_utc: int) -> int:
        return self.local_seconds(ts_utc) // SECONDS_PER_DAY

    # -- week grid -----------------------------------------------------------

    @cached_property
    def week_mondays(self) -> tuple[int, ...]:
        """Mondays of every week that intersects the window, in order."""
        first = monday_of(self.start_day)
        return tuple(range(first, self.end_day + 1, 7))

    @cached_property
    def baseline_monday(self) -> int:
        if self.baseline_monday_override is not None:
            d = day_index(self.baseline_monday_override)
            if weekday_of(d) != 0:
                raise ValidationError("baseline week override must be a Monday")
            if not self.start_day <= d <= self.end_day:
                raise ValidationError("baseline week override outside the study window")
            return d
        march_mondays = [m for m in self.week_mondays
                         if m >= self.start_day and date_of(m).month == 3]
        return march_mondays[1]

    @cached_property
    def november_mondays(self) -> tuple[int, ...]:
        """The first four Mondays falling in November.

        November always contains at least four Mondays; when it has five,
        the week started by the fifth would cross into December and is not
        part of the end-of-window residence estimate.
        """
        mondays = [m for m in self.week_mondays if date_of(m).month == 11]
        return tuple(mondays[:4])

    def validate(self) -> None:
        if not self.start_day <= self.baseline_monday <= self.end_day:
            raise ValidationError("baseline week outside the study window")
        if len(self.november_mondays) != 4:
            raise ValidationError("expected exactly four November weeks")


# ---------------------------------------------------------------------------
# pure helpers
# ---------------------------------------------------------------------------

def mode_with_tiebreak(values: Sequence) -> object:
    """Most frequent value of a sequence ordered in time.

    Frequency ties resolve toward the value whose latest occurrence is most
    recent, so the result reflects end-of-sequence state.
    """
    counts: dict = {}
    last: dict = {}
    n = 0
    for i, v in enumerate(values):
        counts[v] = counts.get(v, 0) + 1
        last[v] = i
        n += 1
    if n == 0:
        raise EmptySeries("mode of an empty sequence")
    return max(counts, key=lambda v: (counts[v], last[v]))


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km on a sphere of radius 6371.0088 km."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def haversine_matrix(lats1, lons1, lats2, lons2):
    """Pairwise great-circle distances (km) between two coordinate lists."""
    import numpy as np

    la1 = np.radians(np.asarray(lats1, dtype=np.float64))[:, None]
    lo1 = np.radians(np.asarray(lons1, dtype=np.float64))[:, None]
    la2 = np.radians(np.asarray(lats2, dtype=np.float64))[None, :]
    lo2 = np.radians(np.asarray(lons2, dtype=np.float64))[None, :]
    a = np.sin((la2 - la1) / 2.0) ** 2 + np.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(a)))
