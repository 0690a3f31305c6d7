import datetime as dt

import pytest

from xdrflow.core import Antenna, ComunaProfile, StudyWindow, day_index
from xdrflow.ingest import AntennaRegistry, ComunaTable


def make_comuna(cid, region="R00", in_scl=False, decile=5.0, poverty=20.0,
                rurality=0.1, population=50_000.0, area=100.0, icvu=55.0,
                lat=-33.5, lon=-70.6):
    return ComunaProfile(comuna_id=cid, name=f"name-{cid}", region_id=region,
                         in_scl=in_scl, income_decile=decile, poverty_pct=poverty,
                         rurality_pct=rurality, population=population,
                         area_km2=area, icvu=icvu, centroid_lat=lat,
                         centroid_lon=lon)


@pytest.fixture
def window() -> StudyWindow:
    w = StudyWindow(year=2020, tz_offset=-4)
    w.validate()
    return w


@pytest.fixture
def small_comunas() -> ComunaTable:
    return ComunaTable([
        make_comuna("C1", region="R-M", in_scl=True, decile=8.0, lat=-33.4, lon=-70.6),
        make_comuna("C2", region="R-M", in_scl=True, decile=3.0, lat=-33.6, lon=-70.7),
        make_comuna("V1", region="R-V", decile=5.0, rurality=0.4, lat=-33.0, lon=-71.6),
        make_comuna("V2", region="R-V", decile=4.0, rurality=0.6, icvu=None,
                    lat=-32.8, lon=-71.2),
        make_comuna("S1", region="R-S", decile=2.0, rurality=0.8, icvu=None,
                    lat=-38.7, lon=-72.6),
    ])


@pytest.fixture
def small_registry(small_comunas) -> AntennaRegistry:
    antennas = [
        Antenna(antenna_id=10, lat=-33.4, lon=-70.6, comuna_id="C1"),
        Antenna(antenna_id=11, lat=-33.41, lon=-70.61, comuna_id="C1"),
        Antenna(antenna_id=20, lat=-33.6, lon=-70.7, comuna_id="C2"),
        Antenna(antenna_id=30, lat=-33.0, lon=-71.6, comuna_id="V1"),
        Antenna(antenna_id=40, lat=-32.8, lon=-71.2, comuna_id="V2"),
        Antenna(antenna_id=50, lat=-38.7, lon=-72.6, comuna_id="S1"),
    ]
    return AntennaRegistry(antennas, small_comunas)


def local_ts(window: StudyWindow, date: dt.date, hour: int, minute: int = 0) -> int:
    """Epoch seconds UTC of a local wall-clock instant."""
    local = day_index(date) * 86_400 + hour * 3_600 + minute * 60
    return local - window.tz_offset * 3_600
