"""Internal migration and daily mobility analytics from XDR event streams."""

__version__ = "0.1.0"

from .core import (Antenna, ComunaProfile, StudyWindow, XdrEvent, haversine_km,
                   mode_with_tiebreak)
from .errors import XdrflowError
from .ingest import (AntennaRegistry, ComunaTable, IngestStats,
                     QuarantineSchedule, parse_xdr)
from .home_inference import HomeSeries, build_home_series, weekly_home
from .migration import MigrationRecord, OdMatrix, build_od, classify
from .synth import ScenarioConfig, generate_world

__all__ = [
    "__version__", "Antenna", "ComunaProfile", "StudyWindow", "XdrEvent",
    "haversine_km", "mode_with_tiebreak", "XdrflowError", "AntennaRegistry",
    "ComunaTable", "IngestStats", "QuarantineSchedule", "parse_xdr",
    "HomeSeries", "build_home_series", "weekly_home", "MigrationRecord",
    "OdMatrix", "build_od", "classify", "ScenarioConfig", "generate_world",
]
