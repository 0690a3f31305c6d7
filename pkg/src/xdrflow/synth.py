"""Synthetic worlds with ground truth for end-to-end pipeline checks.

A world is a Chile-shaped caricature: one capital region holding the
flagged comunas plus a chain of outlying regions, each comuna carrying
drawn socioeconomic attributes and a contiguous block of antenna ids.
Agents sleep at a fixed home antenna, walk a planned number of trips per
day, and a configured share relocates to another region at a drawn week
boundary, with destination odds proportional to population over
distance.  Every stream is reproducible: world attributes come from one
seeded generator, event noise from per-block children of the same seed,
and all remaining emission is arithmetic in the agent id and day, so a
scenario is byte-identical across runs and thread counts.

Planned trip counts are realized exactly in aggregate: fractional parts
rotate through agents by residue classes, so a comuna-day's total trips
match intensity times residents to within a residue cycle.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import (SECONDS_PER_DAY, SECONDS_PER_HOUR, Antenna, ComunaProfile,
                   StudyWindow, date_of, monday_of)
from .errors import ValidationError
from .ingest import (AntennaRegistry, ComunaTable, write_antennas_csv,
                     write_comunas_csv, write_quarantines_csv, write_xdr_binary,
                     write_xdr_csv)

AGENT_BLOCK = 512
GROUND_TRUTH_HEADER = "agent_id,origin_comuna,destination_comuna,migrated"

_ANCHOR_SEC = 30_600            # 08:30, keeps every agent active every day
_EVENING_SECS = (81_000, 83_160, 85_320)   # 22:30 onward
_MORNING_SECS = (4_500, 8_100, 11_700)     # 01:15 onward, next date
_TRIP_START_SEC = 34_200        # 09:30
_TRIP_SPAN_SEC = 32_400         # trips spread until 18:30


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of one synthetic scenario; rates are fractions in [0, 1]."""

    seed: int
    n_comunas: int = 40
    n_agents: int = 2000
    migration_rate: float = 0.10
    income_migration_coupling: float = 0.0
    quarantine_drop: float = 0.0
    noise: float = 0.0
    events_per_night: float = 2.0
    year: int = 2020
    tz_offset: int = -4
    n_regions: int = 8
    scl_fraction: float = 0.6
    base_trips: float = 4.0
    quarantine_coverage: float = 0.5

    def validate(self) -> None:
        for name in ("migration_rate", "income_migration_coupling",
                     "quarantine_drop", "noise", "scl_fraction",
                     "quarantine_coverage"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if self.n_agents < 1:
            raise ValidationError("need at least one agent")
        if self.n_regions < 2:
            raise ValidationError("need the capital plus at least one other region")
        if self.n_comunas < 2 * self.n_regions:
            raise ValidationError("need at least two comunas per region")
        if not 0.0 <= self.events_per_night <= 6.0:
            raise ValidationError("events_per_night must lie in [0, 6]")
        if not 0.0 <= self.base_trips <= 8.0:
            raise ValidationError("base_trips must lie in [0, 8]")
        lockdown_trips = self.base_trips * (1.0 - self.quarantine_drop)
        if 0.0 < lockdown_trips < 2.0 or 0.0 < self.base_trips < 2.0:
            raise ValidationError(
                "planned trips per day must be 0 or at least 2 so that a "
                "home-anchored walk can realize the count exactly")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scenario fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _rotation(frac: float) -> tuple[int, int]:
    """Smallest residue cycle (q, num) with num/q ~= frac."""
    for q in range(1, 65):
        if abs(frac * q - round(frac * q)) < 1e-9:
            return q, int(round(frac * q))
    return 128, int(round(frac * 128))


@dataclass
class GroundTruth:
    """Planted facts the pipeline is expected to recover."""

    agent_id: np.ndarray          # uint64
    origin_code: np.ndarray       # int32
    destination_code: np.ndarray  # int32 (== origin when not migrated)
    migrated: np.ndarray          # bool
    switch_monday: np.ndarray     # int64 day index, -1 when not migrated
    comuna_ids: list[str]
    quarantine_rows: list[tuple[str, dt.date, dt.date]]
    base_trips: float
    quarantine_drop: float

    def true_home_code(self, week_monday: int) -> np.ndarray:
        moved = self.migrated & (self.switch_monday >= 0) & (week_monday >= self.switch_monday)
        return np.where(moved, self.destination_code, self.origin_code).astype(np.int32)

    def planted_migrants(self) -> int:
        return int(self.migrated.sum())

    def planned_intensity(self, quarantined: bool) -> float:
        return self.base_trips * (1.0 - self.quarantine_drop) if quarantined else self.base_trips


@dataclass
class SynthWorld:
    config: ScenarioConfig
    window: StudyWindow
    comunas: ComunaTable
    antennas: list[Antenna]
    registry: AntennaRegistry
    truth: GroundTruth
    # emission tables
    ant_base: np.ndarray    # first antenna id per comuna code
    ant_count: np.ndarray   # antennas per comuna code
    near1: np.ndarray       # nearest other comuna per comuna code
    near2: np.ndarray
    qmat: np.ndarray        # bool (n_comunas, n_days)
    noise_children: list

    @property
    def n_blocks(self) -> int:
        return (self.config.n_agents + AGENT_BLOCK - 1) // AGENT_BLOCK


def generate_world(config: ScenarioConfig) -> SynthWorld:
    """Deterministic world build; identical output for identical config."""
    config.validate()
    window = StudyWindow(year=config.year, tz_offset=config.tz_offset)
    window.validate()

    ss = np.random.SeedSequence(config.seed)
    n_blocks = (config.n_agents + AGENT_BLOCK - 1) // AGENT_BLOCK
    children = ss.spawn(1 + n_blocks)
    rng = np.random.Generator(np.random.Philox(children[0]))

    n_com = config.n_comunas
    n_reg = config.n_regions
    n_scl = max(4, round(0.3 * n_com))

    region_of = np.empty(n_com, dtype=np.int32)
    region_of[:n_scl] = 0
    region_of[n_scl:] = 1 + (np.arange(n_com - n_scl) % (n_reg - 1))

    reg_lat = -20.0 - 3.5 * np.arange(n_reg) + rng.uniform(-0.3, 0.3, n_reg)
    reg_lon = -70.5 + rng.uniform(-0.8, 0.8, n_reg)
    cen_lat = reg_lat[region_of] + rng.uniform(-0.6, 0.6, n_com)
    cen_lon = reg_lon[region_of] + rng.uniform(-0.6, 0.6, n_com)

    decile = rng.uniform(1.0, 10.0, n_com)
    poverty = np.clip(45.0 - 3.8 * decile + rng.normal(0.0, 4.0, n_com), 1.0, 70.0)
    rurality = np.where(region_of == 0,
                        rng.beta(1.0, 15.0, n_com),
                        rng.beta(1.6, 2.8, n_com))
    population = np.where(region_of == 0,
                          rng.lognormal(math.log(150_000.0), 0.5, n_com),
                          rng.lognormal(math.log(60_000.0), 0.7, n_com))
    area = rng.lognormal(math.log(80.0), 0.6, n_com)
    icvu_noise = rng.normal(0.0, 2.0, n_com)

    profiles = []
    ant_base = np.empty(n_com, dtype=np.int64)
    ant_count = np.empty(n_com, dtype=np.int64)
    antennas: list[Antenna] = []
    next_ant = 1000
    for c in range(n_com):
        cid = f"C{c:03d}"
        icvu = float(40.0 + 2.2 * decile[c] + icvu_noise[c]) if rurality[c] < 0.35 else None
        profiles.append(ComunaProfile(
            comuna_id=cid, name=f"Synthetic {c:03d}", region_id=f"R{region_of[c]:02d}",
            in_scl=bool(region_of[c] == 0), income_decile=float(decile[c]),
            poverty_pct=float(poverty[c]), rurality_pct=float(rurality[c]),
            population=float(round(population[c])), area_km2=float(area[c]),
            icvu=icvu, centroid_lat=float(cen_lat[c]), centroid_lon=float(cen_lon[c])))
        count = 2 + (c % 2)
        ant_base[c] = next_ant
        ant_count[c] = count
        for k in range(count):
            antennas.append(Antenna(
                antenna_id=next_ant + k,
                lat=float(cen_lat[c] + 0.01 * (k + 1)),
                lon=float(cen_lon[c] - 0.01 * (k + 1)),
                comuna_id=cid))
        next_ant += count
    comunas = ComunaTable(profiles)
    registry = AntennaRegistry(antennas, comunas)

    # nearest other comunas carry the external legs of daily walks
    dlat = cen_lat[:, None] - cen_lat[None, :]
    dlon = cen_lon[:, None] - cen_lon[None, :]
    d2 = dlat * dlat + dlon * dlon
    np.fill_diagonal(d2, np.inf)
    near_order = np.argsort(d2, axis=1)
    near1 = near_order[:, 0].astype(np.int32)
    near2 = near_order[:, 1].astype(np.int32)

    # agents: home comuna odds proportional to population, split capital/rest
    n_agents = config.n_agents
    n_in = int(round(config.scl_fraction * n_agents))
    scl_codes = np.arange(n_scl)
    out_codes = np.arange(n_scl, n_com)
    w_in = population[scl_codes] / population[scl_codes].sum()
    w_out = population[out_codes] / population[out_codes].sum()
    origin = np.empty(n_agents, dtype=np.int32)
    origin[:n_in] = rng.choice(scl_codes, size=n_in, p=w_in)
    origin[n_in:] = rng.choice(out_codes, size=n_agents - n_in, p=w_out)

    # migration decision couples the origin's income decile when configured
    p_mig = config.migration_rate * (
        1.0 + config.income_migration_coupling * (decile[origin] - 5.5) / 4.5)
    p_mig = np.clip(p_mig, 0.0, 1.0)
    migrated = rng.random(n_agents) < p_mig

    # destinations: another region, odds ~ population / centroid distance
    destination = origin.copy()
    dist = np.sqrt(d2)
    for c in range(n_com):
        movers = np.flatnonzero(migrated & (origin == c))
        if movers.size == 0:
            continue
        allowed = region_of != region_of[c]
        w = np.where(allowed, population / np.maximum(dist[c], 1e-6), 0.0)
        w /= w.sum()
        destination[movers] = rng.choice(n_com, size=movers.size, p=w)

    first_switch = window.baseline_monday + 14
    last_switch = window.november_mondays[0] - 7
    switch_choices = np.arange(first_switch, last_switch + 1, 7, dtype=np.int64)
    switch = np.full(n_agents, -1, dtype=np.int64)
    movers = np.flatnonzero(migrated)
    if movers.size:
        switch[movers] = rng.choice(switch_choices, size=movers.size)

    # comuna-level lockdown spells, clear of the baseline week
    q_rows: list[tuple[str, dt.date, dt.date]] = []
    spell_lo = window.start_day + 31           # April onward
    spell_hi = window.end_day - 61             # end by late September
    chosen = rng.random(n_com) < config.quarantine_coverage
    for c in range(n_com):
        if not chosen[c]:
            continue
        for _ in range(int(rng.integers(1, 3))):
            start = int(rng.integers(spell_lo, spell_hi - 56))
            length = int(rng.integers(21, 57))
            q_rows.append((f"C{c:03d}", date_of(start), date_of(start + length - 1)))

    n_days = window.n_days
    qmat = np.zeros((n_com, n_days), dtype=bool)
    for cid, s, e in q_rows:
        c = comunas.code_of(cid)
        lo = max(0, (s.toordinal() - date_of(window.start_day).toordinal()))
        hi = min(n_days - 1, (e.toordinal() - date_of(window.start_day).toordinal()))
        if lo <= hi:
            qmat[c, lo:hi + 1] = True

    truth = GroundTruth(
        agent_id=(np.arange(n_agents, dtype=np.uint64) + 1),
        origin_code=origin, destination_code=destination,
        migrated=migrated, switch_monday=switch,
        comuna_ids=list(comunas.ids), quarantine_rows=q_rows,
        base_trips=config.base_trips, quarantine_drop=config.quarantine_drop)

    return SynthWorld(config=config, window=window, comunas=comunas,
                      antennas=antennas, registry=registry, truth=truth,
                      ant_base=ant_base, ant_count=ant_count,
                      near1=near1, near2=near2, qmat=qmat,
                      noise_children=list(children[1:]))


# ---------------------------------------------------------------------------
# event emission
# ---------------------------------------------------------------------------

def emit_block(world: SynthWorld, block: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(device, ts_utc, antenna) arrays of one agent block, sorted."""
    cfg = world.config
    win = world.window
    truth = world.truth
    lo = block * AGENT_BLOCK
    hi = min(cfg.n_agents, lo + AGENT_BLOCK)
    ids = truth.agent_id[lo:hi].astype(np.int64)[:, None]        # (B, 1)
    origin = truth.origin_code[lo:hi][:, None]
    dest = truth.destination_code[lo:hi][:, None]
    moved = truth.migrated[lo:hi][:, None]
    switch = truth.switch_monday[lo:hi][:, None]

    days = np.arange(win.start_day, win.end_day + 1, dtype=np.int64)[None, :]  # (1, D)
    mondays = days - (days + 3) % 7
    home = np.where(moved & (switch >= 0) & (mondays >= switch), dest, origin)  # (B, D)

    a_base = world.ant_base[home]
    a_count = world.ant_count[home]
    h_slot = ids % a_count
    home_ant = a_base + h_slot
    other_ant = a_base + (h_slot + 1) % a_count
    n1_ant = world.ant_base[world.near1[home]]
    n2_ant = world.ant_base[world.near2[home]]

    day_pos = (days - win.start_day)
    quarantined = world.qmat[home, np.broadcast_to(day_pos, home.shape)]

    def realized(intensity: float) -> np.ndarray:
        fl = math.floor(intensity + 1e-9)
        q, num = _rotation(intensity - fl)
        return fl + (((ids + days) % q) < num)

    t_free = realized(cfg.base_trips)
    t_lock = realized(cfg.base_trips * (1.0 - cfg.quarantine_drop))
    trips = np.where(quarantined, t_lock, t_free)

    k_night = realized(cfg.events_per_night)
    k_eve = (k_night + 1) // 2
    k_mor = k_night // 2

    dev_parts, ts_parts, ant_parts = [], [], []

    def emit(cell_mask: np.ndarray, date_grid: np.ndarray, sec, antenna_grid: np.ndarray):
        sel = np.where(cell_mask)
        if sel[0].size == 0:
            return
        dev_parts.append(np.broadcast_to(ids, cell_mask.shape)[sel].astype(np.uint64))
        local = date_grid[sel] * SECONDS_PER_DAY + (sec[sel] if isinstance(sec, np.ndarray) else sec)
        ts_parts.append(local - cfg.tz_offset * SECONDS_PER_HOUR)
        ant_parts.append(antenna_grid[sel].astype(np.uint32))

    date_grid = np.broadcast_to(days, home.shape)

    # home anchor keeps every agent active and roots the daily walk
    emit(np.ones_like(home, dtype=bool), date_grid, _ANCHOR_SEC, home_ant)

    # evening and next-morning night events at the night's home antenna
    for j, sec in enumerate(_EVENING_SECS):
        emit(k_eve > j, date_grid, sec, home_ant)
    for j, sec in enumerate(_MORNING_SECS):
        emit((k_mor > j) & (date_grid < win.end_day), date_grid + 1, sec, home_ant)

    # daily walk: in-comuna legs first, then legs across the two nearest comunas
    all_internal = (trips == 2) & (((ids + days) % 2) == 0)
    j_eff = np.where(trips == 2, np.where(all_internal, trips, 0),
                     np.where(trips >= 3, np.minimum(trips - 2, trips // 2), 0))
    max_inter = int(trips.max(initial=0)) - 1
    for i in range(max(0, max_inter)):
        cell = (trips - 1) > i
        in_com = i < j_eff
        ant = np.where(in_com,
                       np.where(i % 2 == 0, other_ant, home_ant),
                       np.where((i - j_eff) % 2 == 0, n1_ant, n2_ant))
        sec = _TRIP_START_SEC + (i * _TRIP_SPAN_SEC) // np.maximum(trips - 1, 1)
        emit(cell, date_grid, np.broadcast_to(sec, cell.shape), ant)

    device = np.concatenate(dev_parts)
    ts = np.concatenate(ts_parts)
    antenna = np.concatenate(ant_parts)

    if cfg.noise > 0.0:
        rng = np.random.Generator(np.random.Philox(world.noise_children[block]))
        hit = rng.random(device.size) < cfg.noise
        n_hit = int(hit.sum())
        if n_hit:
            all_ids = np.array(sorted(a.antenna_id for a in world.antennas),
                               dtype=np.uint32)
            # events carry the walk antenna; noise replaces it with any
            # antenna other than the device's current home antenna
            week = (ts + cfg.tz_offset * SECONDS_PER_HOUR) // SECONDS_PER_DAY
            week = week - (week + 3) % 7
            dev_i = (device - 1).astype(np.int64)
            moved_e = truth.migrated[dev_i] & (truth.switch_monday[dev_i] >= 0) \
                & (week >= truth.switch_monday[dev_i])
            home_e = np.where(moved_e, truth.destination_code[dev_i],
                              truth.origin_code[dev_i])
            h_ant = world.ant_base[home_e] + (device.astype(np.int64) % world.ant_count[home_e])
            h_idx = np.searchsorted(all_ids, h_ant.astype(np.uint32))
            r = rng.integers(0, all_ids.size - 1, size=n_hit)
            repl = r + (r >= h_idx[hit])
            antenna = antenna.copy()
            antenna[hit] = all_ids[repl]

    order = np.lexsort((ts, device))
    return device[order], ts[order], antenna[order]


def emit_event_blocks(world: SynthWorld) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    for b in range(world.n_blocks):
        yield emit_block(world, b)


def write_ground_truth_csv(path, truth: GroundTruth) -> None:
    with open(path, "w") as fh:
        fh.write(GROUND_TRUTH_HEADER + "\n")
        for i in range(truth.agent_id.size):
            fh.write(f"{truth.agent_id[i]},{truth.comuna_ids[truth.origin_code[i]]},"
                     f"{truth.comuna_ids[truth.destination_code[i]]},"
                     f"{'true' if truth.migrated[i] else 'false'}\n")


def emit_events(world: SynthWorld, out_dir, fmt: str = "csv",
                blocks: Optional[Iterator] = None) -> dict:
    """Write the full input bundle of a scenario; returns file paths."""
    if fmt not in ("csv", "bin"):
        raise ValidationError(f"unknown output format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    xdr_path = out / ("xdr.csv" if fmt == "csv" else "xdr.bin")
    stream = blocks if blocks is not None else emit_event_blocks(world)
    if fmt == "csv":
        write_xdr_csv(xdr_path, stream)
    else:
        write_xdr_binary(xdr_path, world.window, stream)
    write_comunas_csv(out / "comunas.csv", world.comunas)
    write_antennas_csv(out / "antennas.csv", world.antennas)
    write_quarantines_csv(out / "quarantines.csv", world.truth.quarantine_rows)
    write_ground_truth_csv(out / "ground_truth.csv", world.truth)
    world.config.to_json(out / "scenario.json")
    return {"xdr": str(xdr_path), "comunas": str(out / "comunas.csv"),
            "antennas": str(out / "antennas.csv"),
            "quarantines": str(out / "quarantines.csv"),
            "ground_truth": str(out / "ground_truth.csv"),
            "scenario": str(out / "scenario.json")}
