"""File-based pipeline stages and their run manifests.

Each stage reads the previous stage's artifacts, writes its own tables
into a fresh directory, and records a manifest with input digests and a
stage digest.  The stage digest covers configuration and input digests
only, never timings, so reruns over identical inputs produce
byte-identical data files.  Data tables never embed run metadata; JSON
outputs carry the stage digest, CSV outputs are listed with their own
digests in the manifest.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import json
import math
import time
from functools import partial
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .core import StudyWindow, date_of
from .errors import PipelineOrderError, SchemaError, ValidationError
from .home_inference import (DEFAULT_MIN_EVENTS, WeeklyHomeAccumulator,
                             read_homes_csv, summarize_homes, write_homes_csv)
from .ingest import (ComunaTable, IngestStats, XdrReader, ensure_drop_rate,
                     load_antennas, load_comunas, load_quarantines,
                     write_xdr_binary, write_xdr_csv)
from .migration import (MigrationRecord, OdMatrix, aggregate_regions,
                        align_matrices, build_od, census_validation,
                        classify_summary, density_weighted_destination,
                        destination_divergence, emigration_pct, gravity_rank,
                        hosting_impact, icvu_tradeoff, matrix_difference,
                        net_rates_by_comuna, rurality_shift, zscore_row_filter)
from .mobility_index import (build_index_series, stratify_by_quarantine,
                             trip_table_from_batches)
from .parallel import pmap_ordered
from .stats import ols, quintile_share, top_quintile_ids, welch_t
from .synth import ScenarioConfig, emit_block, emit_events, generate_world

RECORDS_CSV_HEADER = ("device_id,origin_comuna,destination_comuna,"
                      "origin_region,destination_region,migrated")
CENSUS_CSV_HEADER = "level,direction,label,flow"
CENSUS_LEVELS = ("regions_scl", "comunas_scl", "country_sclcomunas",
                 "comunas_sclcomunas")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ManifestBuilder:
    def __init__(self, stage: str, config: Mapping):
        self.stage = stage
        self.config = dict(config)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.stats: Optional[dict] = None
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = file_digest(path)

    def time_mark(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 6)
        self._t0 = now

    @property
    def digest(self) -> str:
        core = {"stage": self.stage, "config": self.config, "inputs": self.inputs,
                "version": __version__}
        return hashlib.sha256(
            json.dumps(core, sort_keys=True).encode()).hexdigest()

    def write(self, out_dir) -> str:
        out = Path(out_dir)
        for p in sorted(out.iterdir()):
            if p.is_file() and p.name != "manifest.json":
                self.outputs[p.name] = file_digest(p)
        doc = {"stage": self.stage, "manifest_digest": self.digest,
               "config": self.config, "inputs": self.inputs,
               "outputs": self.outputs, "version": __version__,
               "stats": self.stats, "timings": self.timings}
        with open(out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return self.digest


def read_manifest(stage_dir, required_command: str) -> dict:
    path = Path(stage_dir) / "manifest.json"
    if not path.exists():
        raise PipelineOrderError(
            f"{stage_dir} has no manifest; run `xdrflow {required_command}` first",
            required_command=required_command)
    with open(path) as fh:
        return json.load(fh)


def _require(path, required_command: str):
    if not Path(path).exists():
        raise PipelineOrderError(
            f"missing {path}; run `xdrflow {required_command}` first",
            required_command=required_command)
    return path


def _window_from_args(year: int, tz_offset: int,
                      baseline_week: Optional[str] = None) -> StudyWindow:
    override = dt.date.fromisoformat(baseline_week) if baseline_week else None
    win = StudyWindow(year=year, tz_offset=tz_offset,
                      baseline_monday_override=override)
    win.validate()
    return win


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(float(value))
    return str(value)


def _write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# synth stage
# ---------------------------------------------------------------------------

def run_synth(config: ScenarioConfig, out_dir, fmt: str = "csv",
              threads: int = 1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = ManifestBuilder("synth", dataclasses.asdict(config) | {"format": fmt})
    world = generate_world(config)
    man.time_mark("generate_world")
    blocks = pmap_ordered(partial(emit_block, world), list(range(world.n_blocks)),
                          threads)
    paths = emit_events(world, out, fmt=fmt, blocks=iter(blocks))
    man.time_mark("emit_events")
    man.stats = {"n_agents": config.n_agents,
                 "planted_migrants": world.truth.planted_migrants()}
    man.write(out)
    return paths


# ---------------------------------------------------------------------------
# homes stage
# ---------------------------------------------------------------------------

def run_homes(xdr_path, antennas_path, out_dir, year: int, tz_offset: int = -4,
              min_night_events: int = DEFAULT_MIN_EVENTS,
              baseline_week: Optional[str] = None,
              comunas_path=None, max_drop_fraction: float = 0.10,
              threads: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    window = _window_from_args(year, tz_offset, baseline_week)
    man = ManifestBuilder("homes", {
        "year": year, "tz_offset": tz_offset, "min_night_events": min_night_events,
        "baseline_week": baseline_week, "max_drop_fraction": max_drop_fraction})
    man.add_input("xdr", _require(xdr_path, "synth"))
    man.add_input("antennas", _require(antennas_path, "synth"))
    comunas = None
    if comunas_path is not None:
        man.add_input("comunas", comunas_path)
        comunas = load_comunas(comunas_path)
    registry = load_antennas(antennas_path, comunas)
    man.time_mark("load_references")

    reader = XdrReader(xdr_path, window, registry)
    acc = WeeklyHomeAccumulator(window, registry, min_night_events)
    for batch in reader.batches():
        acc.add_batch(batch)
    ensure_drop_rate(reader.stats, max_drop_fraction)
    weekly = acc.finalize()
    man.time_mark("infer_homes")

    write_homes_csv(out / "homes.csv", weekly)
    man.stats = reader.stats.to_dict() | {"weekly_assignments": len(weekly)}
    man.time_mark("write")
    man.write(out)
    return out / "homes.csv"


# ---------------------------------------------------------------------------
# migrate stage
# ---------------------------------------------------------------------------

def run_migrate(homes_path, comunas_path, out_dir, year: int,
                tz_offset: int = -4, baseline_week: Optional[str] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    window = _window_from_args(year, tz_offset, baseline_week)
    man = ManifestBuilder("migrate", {"year": year, "tz_offset": tz_offset,
                                      "baseline_week": baseline_week})
    man.add_input("homes", _require(homes_path, "homes"))
    man.add_input("comunas", comunas_path)
    comunas = load_comunas(comunas_path)
    weekly = read_homes_csv(homes_path, comunas)
    summary = summarize_homes(weekly, window)
    records = classify_summary(summary, comunas)
    man.time_mark("classify")

    _write_csv(out / "records.csv", RECORDS_CSV_HEADER.split(","),
               ((r.device_id, r.origin_comuna, r.destination_comuna,
                 r.origin_region, r.destination_region,
                 "true" if r.migrated else "false") for r in records))
    man.stats = {"devices_seen": int(summary.device.size),
                 "devices_classified": len(records),
                 "devices_excluded": int(summary.device.size) - len(records),
                 "migrated": sum(1 for r in records if r.migrated)}
    man.time_mark("write")
    man.write(out)
    return out / "records.csv"


def read_records_csv(path) -> list[MigrationRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RECORDS_CSV_HEADER.split(","):
            raise SchemaError(f"{path}: unexpected records header {header}")
        return [MigrationRecord(device_id=int(r[0]), origin_comuna=r[1],
                                destination_comuna=r[2], origin_region=r[3],
                                destination_region=r[4], migrated=r[5] == "true")
                for r in reader]


# ---------------------------------------------------------------------------
# indices stage
# ---------------------------------------------------------------------------

def run_indices(xdr_path, antennas_path, homes_path, quarantines_path,
                comunas_path, out_dir, year: int, tz_offset: int = -4,
                baseline_week: Optional[str] = None,
                max_drop_fraction: float = 0.10, threads: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    window = _window_from_args(year, tz_offset, baseline_week)
    man = ManifestBuilder("indices", {"year": year, "tz_offset": tz_offset,
                                      "baseline_week": baseline_week})
    man.add_input("xdr", _require(xdr_path, "synth"))
    man.add_input("antennas", antennas_path)
    man.add_input("homes", _require(homes_path, "homes"))
    man.add_input("quarantines", quarantines_path)
    man.add_input("comunas", comunas_path)
    comunas = load_comunas(comunas_path)
    registry = load_antennas(antennas_path, comunas)
    schedule = load_quarantines(quarantines_path)
    weekly = read_homes_csv(homes_path, comunas)
    man.time_mark("load_references")

    reader = XdrReader(xdr_path, window, registry)
    trips = trip_table_from_batches(reader.batches(), window, weekly)
    ensure_drop_rate(reader.stats, max_drop_fraction)
    series = build_index_series(trips, window)
    strata = stratify_by_quarantine(series, schedule)
    man.time_mark("count_trips")

    daily_rows = []
    for comuna_id in sorted(series):
        s = series[comuna_id]
        for i, day in enumerate(s.days.tolist()):
            if np.isnan(s.im_total[i]):
                continue
            daily_rows.append((comuna_id, date_of(day).isoformat(),
                               s.im_internal[i], s.im_external[i], s.im_total[i],
                               s.change_internal[i], s.change_external[i],
                               s.change_total[i]))
    _write_csv(out / "index_daily.csv",
               ["comuna", "date", "im_internal", "im_external", "im_total",
                "change_internal", "change_external", "change_total"], daily_rows)

    summary_rows = []
    for comuna_id in sorted(series):
        s = series[comuna_id]
        st = strata[comuna_id]
        summary_rows.append((comuna_id, s.mean_reduction,
                             st.quarantine_mean_change, st.free_mean_change,
                             st.days_quarantine, st.days_free))
    _write_csv(out / "index_summary.csv",
               ["comuna", "mean_reduction", "quarantine_mean", "free_mean",
                "days_q", "days_free"], summary_rows)
    man.stats = reader.stats.to_dict() | {
        "comunas_with_series": len(series),
        "no_baseline": sorted(c for c, s in series.items() if s.no_baseline)}
    man.time_mark("write")
    man.write(out)
    return out / "index_summary.csv"


# ---------------------------------------------------------------------------
# analyze stage
# ---------------------------------------------------------------------------

def _od_rows(year: int, direction: str, od: OdMatrix, values: np.ndarray):
    for i, o in enumerate(od.origins):
        for j, d in enumerate(od.destinations):
            v = values[i, j]
            if v:
                yield (year, direction, o, d, v)


def _emigration_pct_by_origin(od: OdMatrix) -> dict[str, float]:
    pct = emigration_pct(od)
    return {o: float(pct[i].sum()) for i, o in enumerate(od.origins)}


def _model_census_flows(em: OdMatrix, im: OdMatrix, comunas: ComunaTable) -> dict:
    """Model-side flow tables at the four census comparison granularities."""
    region_of = {p.comuna_id: p.region_id for p in comunas}

    def by(od: OdMatrix, axis: str, label_fn) -> dict[str, float]:
        out: dict[str, float] = {}
        for i, o in enumerate(od.origins):
            for j, d in enumerate(od.destinations):
                if od.counts[i, j]:
                    key = label_fn(o, d)
                    out[key] = out.get(key, 0.0) + float(od.counts[i, j])
        return out

    return {
        "regions_scl": {
            "emigration": by(em, "dest", lambda o, d: region_of[d]),
            "immigration": by(im, "origin", lambda o, d: region_of[o])},
        "comunas_scl": {
            "emigration": by(em, "dest", lambda o, d: d),
            "immigration": by(im, "origin", lambda o, d: o)},
        "country_sclcomunas": {
            "emigration": by(em, "origin", lambda o, d: o),
            "immigration": by(im, "dest", lambda o, d: d)},
        "comunas_sclcomunas": {
            "emigration": by(em, "pair", lambda o, d: f"{o}|{d}"),
            "immigration": by(im, "pair", lambda o, d: f"{o}|{d}")},
    }


def read_census_csv(path) -> dict:
    """Census flows keyed level -> direction -> label -> value."""
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CENSUS_CSV_HEADER.split(","):
            raise SchemaError(f"{path}: expected header {CENSUS_CSV_HEADER!r}")
        for row in reader:
            if len(row) != 4:
                raise SchemaError(f"{path}: census row with {len(row)} fields")
            level, direction, label, flow = row
            if level not in CENSUS_LEVELS:
                raise ValidationError(f"{path}: unknown census level {level!r}")
            out.setdefault(level, {}).setdefault(direction, {})[label] = float(flow)
    return out


def run_analyze(migration_dirs: Mapping[int, Path], comunas_path, out_dir,
                census_path=None, indices_dir=None) -> Path:
    """Cross-year flow analytics over one or more migrate-stage outputs.

    The earliest year acts as the comparison baseline for the divergence,
    rurality-shift, difference-matrix, and hosting-change outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not migration_dirs:
        raise PipelineOrderError("no migration outputs given; run `xdrflow migrate`",
                                 required_command="migrate")
    years = sorted(migration_dirs)
    base_year = years[0]
    man = ManifestBuilder("analyze", {
        "years": years, "base_year": base_year,
        "census": census_path is not None, "indices": indices_dir is not None})
    man.add_input("comunas", comunas_path)
    comunas = load_comunas(comunas_path)
    records: dict[int, list[MigrationRecord]] = {}
    for year in years:
        d = Path(migration_dirs[year])
        path = d / "records.csv"
        _require(path, "migrate")
        read_manifest(d, "migrate")
        man.add_input(f"records_{year}", path)
        records[year] = read_records_csv(path)

    centroids = {p.comuna_id: (p.centroid_lat, p.centroid_lon) for p in comunas}
    scl_agg = aggregate_regions(comunas)[comunas.scl_region]
    scl_centroid = (scl_agg.centroid_lat, scl_agg.centroid_lon)

    em: dict[int, OdMatrix] = {}
    im: dict[int, OdMatrix] = {}
    em_reg: dict[int, OdMatrix] = {}
    for year in years:
        em[year] = build_od(records[year], "emigration", "comuna", comunas)
        im[year] = build_od(records[year], "immigration", "comuna", comunas)
        em_reg[year] = build_od(records[year], "emigration", "region", comunas)

    od_count_rows, od_pct_rows = [], []
    for year in years:
        for direction, od in (("emigration", em[year]), ("immigration", im[year])):
            od_count_rows.extend(_od_rows(year, direction, od, od.counts))
            od_pct_rows.extend(_od_rows(year, direction, od, emigration_pct(od)))
    _write_csv(out / "od_counts.csv",
               ["year", "direction", "origin", "destination", "count"], od_count_rows)
    _write_csv(out / "od_pct.csv",
               ["year", "direction", "origin", "destination", "pct"], od_pct_rows)

    summary: dict = {"years": years, "base_year": base_year}

    # emigration share of each capital comuna against its income decile
    summary["emigration_vs_decile"] = {}
    for year in years:
        shares = _emigration_pct_by_origin(em[year])
        if len(shares) < 3:
            continue
        xs = [comunas[c].income_decile for c in sorted(shares)]
        ys = [shares[c] for c in sorted(shares)]
        summary["emigration_vs_decile"][str(year)] = ols(xs, ys).to_dict()

    # net migration rate per capital comuna, device flows expanded to persons
    net_rows = []
    summary["net_migration_rate"] = {}
    for year in years:
        rates = net_rates_by_comuna(em[year], im[year], comunas)
        for c in sorted(rates):
            inflow, outflow, rate = rates[c]
            net_rows.append((year, c, inflow, outflow, rate))
        summary["net_migration_rate"][str(year)] = {c: v[2] for c, v in rates.items()}
    _write_csv(out / "net_rates.csv",
               ["year", "comuna", "immigrants_persons", "emigrants_persons",
                "net_rate_pct"], net_rows)

    # cross-year destination analyses against the base year; only origins
    # observed in both years are comparable
    div_rows, rur_rows, diff_rows = [], [], []
    summary["destination_divergence_km"] = {}
    summary["rurality_shift"] = {}
    for year in years[1:]:
        a, b = align_matrices(em[base_year], em[year], origins="intersection")
        pct_a, pct_b = emigration_pct(a), emigration_pct(b)
        div, skipped = destination_divergence(pct_b, pct_a, a.origins,
                                              a.destinations, centroids)
        summary["destination_divergence_km"][str(year)] = dict(sorted(div.items()))
        for o in sorted(div):
            div_rows.append((year, o, div[o]))
        shift = rurality_shift(pct_b, pct_a, a.origins, a.destinations, comunas)
        summary["rurality_shift"][str(year)] = dict(sorted(shift.items()))
        for o in sorted(shift):
            rur_rows.append((year, o, shift[o]))
        diff = matrix_difference(pct_a, pct_b)
        kept, z = zscore_row_filter(diff, a.origins)
        for i, o in enumerate(a.origins):
            for j, d in enumerate(a.destinations):
                if diff[i, j] != 0.0:
                    diff_rows.append((year, o, d, diff[i, j], z[i, j],
                                      "true" if o in kept else "false"))
    _write_csv(out / "divergence.csv", ["year", "origin", "divergence_km"], div_rows)
    _write_csv(out / "rurality_shift.csv", ["year", "origin", "delta_rurality"],
               rur_rows)
    _write_csv(out / "od_diff.csv",
               ["year", "origin", "destination", "diff_pct", "zscore", "row_kept"],
               diff_rows)

    # density and quality-of-life weighted destination profiles
    dens_rows, icvu_rows = [], []
    summary["density_regression"] = {}
    summary["icvu_tradeoff"] = {}
    for year in years:
        pct = emigration_pct(em[year])
        dens = density_weighted_destination(pct, em[year].origins,
                                            em[year].destinations, comunas)
        for o in sorted(dens):
            dens_rows.append((year, o, dens[o]))
        common = sorted(dens)
        if len(common) >= 3:
            fit = ols([comunas[c].poverty_pct for c in common],
                      [dens[c] for c in common])
            summary["density_regression"][str(year)] = fit.to_dict()
        trade, _ = icvu_tradeoff(pct, em[year].origins, em[year].destinations,
                                 comunas)
        summary["icvu_tradeoff"][str(year)] = dict(sorted(trade.items()))
        for o in sorted(trade):
            icvu_rows.append((year, o, trade[o]))
    _write_csv(out / "density_weighted.csv",
               ["year", "origin", "dest_density_per_km2"], dens_rows)
    _write_csv(out / "icvu_tradeoff.csv", ["year", "origin", "icvu_tradeoff"],
               icvu_rows)

    # gravity ranking and hosting impact at region level
    gravity_rows, hosting_rows = [], []
    summary["gravity"] = {}
    summary["hosting_impact"] = {}
    regions = aggregate_regions(comunas)
    outside = [r for rid, r in sorted(regions.items()) if rid != comunas.scl_region]
    hosting_by_year: dict[int, dict[str, float]] = {}
    for year in years:
        inflow_devices = {}
        for j, region in enumerate(em_reg[year].destinations):
            inflow_devices[region] = float(em_reg[year].counts[:, j].sum())
        ranked = gravity_rank(outside, scl_centroid, inflow_devices)
        summary["gravity"][str(year)] = [dataclasses.asdict(f) for f in ranked]
        for f in ranked:
            gravity_rows.append((year, f.region_id, f.population, f.gravity_score,
                                 f.inflow_from_scl))
        hosting = hosting_impact(em_reg[year], comunas)
        hosting_by_year[year] = hosting
        summary["hosting_impact"][str(year)] = dict(sorted(hosting.items()))
    for year in years:
        for region in sorted(hosting_by_year[year]):
            diff_col = (hosting_by_year[year][region]
                        - hosting_by_year[base_year].get(region, 0.0)
                        if year != base_year else None)
            hosting_rows.append((year, region, hosting_by_year[year][region],
                                 diff_col))
    _write_csv(out / "gravity.csv",
               ["year", "region", "population", "gravity_score", "inflow_devices"],
               gravity_rows)
    _write_csv(out / "hosting.csv",
               ["year", "region", "hosting_pct", "diff_vs_base"], hosting_rows)

    # daily-mobility analyses when an indices stage is supplied
    if indices_dir is not None:
        idx_path = _require(Path(indices_dir) / "index_summary.csv", "indices")
        man.add_input("index_summary", idx_path)
        reductions: dict[str, float] = {}
        with open(idx_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row[1] and row[0] in comunas and comunas[row[0]].in_scl:
                    reductions[row[0]] = float(row[1])
        deciles = {c: comunas[c].income_decile for c in reductions}
        if len(reductions) >= 5:
            common = sorted(reductions)
            fit = ols([deciles[c] for c in common], [reductions[c] for c in common])
            summary["daily_mobility_vs_decile"] = fit.to_dict()
            summary["quintile_share_mobility"] = quintile_share(reductions, deciles)
            top = set(top_quintile_ids(deciles))
            t, p = welch_t([reductions[c] for c in common if c in top],
                           [reductions[c] for c in common if c not in top])
            summary["welch_top20_vs_bottom80"] = {"t": t, "p_value": p}

    # census comparison when a census table is supplied
    if census_path is not None:
        man.add_input("census", census_path)
        census = read_census_csv(census_path)
        model = _model_census_flows(em[base_year], im[base_year], comunas)
        validation = {}
        for level in CENSUS_LEVELS:
            if level in census:
                validation[level] = census_validation(model[level], census[level],
                                                      level)
        summary["census_validation"] = validation
        with open(out / "census_validation.json", "w") as fh:
            json.dump({"manifest_digest": man.digest, "validation": validation},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")

    summary["manifest_digest"] = man.digest
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    man.time_mark("analyze")
    man.write(out)
    return out / "summary.json"


# ---------------------------------------------------------------------------
# report stage
# ---------------------------------------------------------------------------

def run_report(analysis_dir, out_path) -> Path:
    summary_path = _require(Path(analysis_dir) / "summary.json", "analyze")
    with open(summary_path) as fh:
        summary = json.load(fh)
    lines = ["# Migration and mobility report", ""]
    lines.append(f"Analysis digest: `{summary['manifest_digest']}`")
    lines.append(f"Years: {summary['years']} (baseline {summary['base_year']})")
    lines.append("")
    lines.append("## Emigration share vs income decile")
    for year, fit in sorted(summary["emigration_vs_decile"].items()):
        lines.append(f"- {year}: slope {fit['slope']:.4f}, r2 {fit['r2']:.4f}, "
                     f"p {fit['p_value']:.3g}")
    if "daily_mobility_vs_decile" in summary:
        fit = summary["daily_mobility_vs_decile"]
        lines.append("")
        lines.append("## Daily mobility reduction vs income decile")
        lines.append(f"- slope {fit['slope']:.4f}, r {fit['r']:.3f}, r2 {fit['r2']:.4f}")
        lines.append(f"- top-quintile share of total change: "
                     f"{summary['quintile_share_mobility']:.2f}%")
        w = summary["welch_top20_vs_bottom80"]
        lines.append(f"- Welch test top 20% vs rest: t {w['t']:.3f}, p {w['p_value']:.3g}")
    if summary.get("destination_divergence_km"):
        lines.append("")
        lines.append("## Destination divergence vs baseline year (km)")
        for year, div in sorted(summary["destination_divergence_km"].items()):
            vals = list(div.values())
            if vals:
                lines.append(f"- {year}: mean {float(np.mean(vals)):.2f}, "
                             f"max {float(np.max(vals)):.2f}")
    if summary.get("hosting_impact"):
        lines.append("")
        lines.append("## Hosting impact (percent of region population)")
        for year, hosting in sorted(summary["hosting_impact"].items()):
            top3 = sorted(hosting.items(), key=lambda kv: -kv[1])[:3]
            txt = ", ".join(f"{r}: {v:.2f}%" for r, v in top3)
            lines.append(f"- {year}: {txt}")
    if summary.get("census_validation"):
        lines.append("")
        lines.append("## Census validation")
        for level, rep in sorted(summary["census_validation"].items()):
            for direction, res in sorted(rep["directions"].items()):
                lines.append(f"- {level}/{direction}: r({res['df']}) = {res['r']:.3f}, "
                             f"p = {res['p_value']:.3g}")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return out


# ---------------------------------------------------------------------------
# format conversion
# ---------------------------------------------------------------------------

def run_convert(in_path, out_path, out_format: str, year: int,
                tz_offset: int = -4, antennas_path=None,
                comunas_path=None) -> IngestStats:
    """Re-encode an XDR file; the registry defines which antennas are valid."""
    window = _window_from_args(year, tz_offset)
    if antennas_path is None:
        raise ValidationError("convert needs the antenna table to validate events")
    comunas = load_comunas(comunas_path) if comunas_path else None
    registry = load_antennas(antennas_path, comunas)
    reader = XdrReader(in_path, window, registry)

    def arrays():
        for b in reader.batches():
            yield b.device, b.ts_utc, b.antenna

    if out_format == "csv":
        write_xdr_csv(out_path, arrays())
    elif out_format == "bin":
        write_xdr_binary(out_path, window, arrays())
    else:
        raise ValidationError(f"unknown format {out_format!r}")
    return reader.stats
