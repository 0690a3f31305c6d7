"""Long-term relocation classification and the geographic flow analytics.

Relocation is judged at the region level: a device migrated when the
mode of its four November weekly homes sits in a different region than
its March (baseline-week) home.  Origin-destination matrices stay at
comuna granularity with rows as origins, and every percentage in this
module is per hundred devices of the origin's March base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import haversine_km, haversine_matrix
from .errors import (DegenerateGeometry, DegenerateOrigin, InsufficientData,
                     ValidationError)
from .home_inference import HomeSeries, HomeSummary
from .ingest import ComunaTable
from .stats import pearson
from .transport import wasserstein_exact


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MigrationRecord:
    device_id: int
    origin_comuna: str
    destination_comuna: str
    origin_region: str
    destination_region: str
    migrated: bool


def classify(series: HomeSeries, comunas: ComunaTable) -> Optional[MigrationRecord]:
    """Relocation record for one device, or None when a home is unresolved."""
    if series.baseline_home is None or series.november_home is None:
        return None
    for cid in (series.baseline_home, series.november_home):
        if cid not in comunas:
            raise ValidationError(f"unknown comuna {cid} in home series")
    o = comunas[series.baseline_home]
    d = comunas[series.november_home]
    return MigrationRecord(device_id=series.device_id,
                           origin_comuna=o.comuna_id, destination_comuna=d.comuna_id,
                           origin_region=o.region_id, destination_region=d.region_id,
                           migrated=o.region_id != d.region_id)


def classify_summary(summary: HomeSummary, comunas: ComunaTable) -> list[MigrationRecord]:
    """Vectorized classification of a whole home summary.

    Devices with an unresolved baseline or November home are excluded;
    the caller can count them as summary rows minus returned records.
    """
    if summary.comuna_ids != comunas.ids:
        raise ValidationError("home summary and comuna table use different code spaces")
    region_ids = comunas.region_ids
    region_code = comunas.region_codes()
    ok = (summary.baseline_code >= 0) & (summary.november_code >= 0)
    records = []
    for dev, b, n in zip(summary.device[ok].tolist(),
                         summary.baseline_code[ok].tolist(),
                         summary.november_code[ok].tolist()):
        ro, rd = int(region_code[b]), int(region_code[n])
        records.append(MigrationRecord(
            device_id=dev, origin_comuna=comunas.ids[b], destination_comuna=comunas.ids[n],
            origin_region=region_ids[ro], destination_region=region_ids[rd],
            migrated=ro != rd))
    return records


# ---------------------------------------------------------------------------
# origin-destination matrices
# ---------------------------------------------------------------------------

@dataclass
class OdMatrix:
    """Counts of migrated devices from each origin row to each destination."""

    origins: list[str]
    destinations: list[str]
    counts: np.ndarray            # int64 (n_origins, n_destinations)
    origin_base: dict[str, int]   # March device base per origin

    def validate(self) -> None:
        if len(set(self.origins)) != len(self.origins):
            raise ValidationError("duplicate origin labels")
        if len(set(self.destinations)) != len(self.destinations):
            raise ValidationError("duplicate destination labels")
        for i, o in enumerate(self.origins):
            if self.counts[i].sum() > self.origin_base.get(o, 0):
                raise ValidationError(f"origin {o}: more migrants than its device base")

    def row(self, origin: str) -> np.ndarray:
        return self.counts[self.origins.index(origin)]

    def total(self) -> int:
        return int(self.counts.sum())


def build_od(records: Sequence[MigrationRecord], direction: str, level: str,
             comunas: ComunaTable) -> OdMatrix:
    """Count migrated devices by origin and destination.

    ``direction='emigration'`` keeps devices leaving the capital (origin
    comuna inside it); ``'immigration'`` keeps devices based outside the
    metropolitan region whose November home is a capital comuna.  The
    ``level`` ('comuna' or 'region') sets the granularity of the
    non-capital side; the capital side is always per comuna.  The origin
    base counts every classified device homed at the origin in March,
    migrated or not.
    """
    if direction not in ("emigration", "immigration"):
        raise ValidationError(f"unknown direction {direction!r}")
    if level not in ("comuna", "region"):
        raise ValidationError(f"unknown level {level!r}")
    scl = comunas.scl_region
    if scl is None:
        raise ValidationError("no capital region flagged in the comuna table")

    def far_label(comuna_id: str, region_id: str) -> str:
        return comuna_id if level == "comuna" else region_id

    base: dict[str, int] = {}
    flows: dict[tuple[str, str], int] = {}
    for r in records:
        if direction == "emigration":
            if r.origin_region != scl:
                continue
            origin = r.origin_comuna
            base[origin] = base.get(origin, 0) + 1
            if not r.migrated:
                continue
            dest = far_label(r.destination_comuna, r.destination_region)
        else:
            if r.origin_region == scl:
                continue
            origin = far_label(r.origin_comuna, r.origin_region)
            base[origin] = base.get(origin, 0) + 1
            if r.destination_region != scl:
                continue
            dest = r.destination_comuna
        flows[(origin, dest)] = flows.get((origin, dest), 0) + 1

    origins = sorted(base)
    destinations = sorted({d for (_, d) in flows})
    counts = np.zeros((len(origins), len(destinations)), dtype=np.int64)
    o_ix = {o: i for i, o in enumerate(origins)}
    d_ix = {d: j for j, d in enumerate(destinations)}
    for (o, d), n in flows.items():
        counts[o_ix[o], d_ix[d]] = n
    od = OdMatrix(origins=origins, destinations=destinations, counts=counts,
                  origin_base=base)
    od.validate()
    return od


def emigration_pct(od: OdMatrix) -> np.ndarray:
    """Cell (x, y) as percent of origin x's March device base."""
    base = np.array([od.origin_base.get(o, 0) for o in od.origins], dtype=np.float64)
    if (base <= 0).any():
        bad = [o for o, b in zip(od.origins, base) if b <= 0]
        raise DegenerateOrigin(f"zero March base for origins {bad[:5]}")
    return 100.0 * od.counts / base[:, None]


def align_matrices(a: OdMatrix, b: OdMatrix,
                   origins: str = "union") -> tuple[OdMatrix, OdMatrix]:
    """Bring two matrices onto shared labels, padding columns with zeros.

    Destinations always take the union.  Origins take the union by
    default; cross-year comparisons should pass ``origins='intersection'``
    so that every kept row has an observed device base in both matrices
    (origins seen in only one year are not comparable and are dropped).
    """
    if origins == "union":
        rows = sorted(set(a.origins) | set(b.origins))
    elif origins == "intersection":
        rows = sorted(set(a.origins) & set(b.origins))
    else:
        raise ValidationError(f"unknown origin alignment {origins!r}")
    dests = sorted(set(a.destinations) | set(b.destinations))

    def expand(m: OdMatrix) -> OdMatrix:
        counts = np.zeros((len(rows), len(dests)), dtype=m.counts.dtype)
        o_pos = {o: i for i, o in enumerate(m.origins)}
        d_pos = [dests.index(d) for d in m.destinations]
        for i, o in enumerate(rows):
            if o in o_pos:
                counts[i, d_pos] = m.counts[o_pos[o]]
        base = {o: m.origin_base.get(o, 0) for o in rows}
        return OdMatrix(origins=list(rows), destinations=list(dests),
                        counts=counts, origin_base=base)

    return expand(a), expand(b)


def matrix_difference(a_pct: np.ndarray, b_pct: np.ndarray) -> np.ndarray:
    """Cell-wise b - a for two aligned percentage matrices."""
    a = np.asarray(a_pct, dtype=np.float64)
    b = np.asarray(b_pct, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("difference over matrices with unequal shapes")
    return b - a


def zscore_row_filter(diff: np.ndarray, row_labels: Sequence[str],
                      threshold: float = 1.96) -> tuple[list[str], np.ndarray]:
    """Rows holding at least one cell with a global z-score above threshold.

    The standardization is global: one mean and one standard deviation
    over every cell of the difference matrix, and the comparison is
    signed (z > threshold, not |z|).
    """
    diff = np.asarray(diff, dtype=np.float64)
    std = float(diff.std())
    if std == 0.0:
        return [], np.zeros_like(diff)
    z = (diff - diff.mean()) / std
    keep = np.flatnonzero((z > threshold).any(axis=1))
    return [row_labels[i] for i in keep], z


# ---------------------------------------------------------------------------
# scalar flow metrics
# ---------------------------------------------------------------------------

def net_migration_rate(immigrants: float, emigrants: float, population: float) -> float:
    """Percent net inflow relative to population; inflow is positive."""
    if population <= 0:
        raise ValidationError("population must be positive")
    return 100.0 * (immigrants - emigrants) / population


# ---------------------------------------------------------------------------
# destination-composition analytics
# ---------------------------------------------------------------------------

def _row_distribution(matrix: np.ndarray, i: int) -> Optional[np.ndarray]:
    row = np.asarray(matrix[i], dtype=np.float64)
    total = row.sum()
    if total <= 0:
        return None
    return row / total


def destination_divergence(od_pct: np.ndarray, od_base_pct: np.ndarray,
                           origins: Sequence[str], destinations: Sequence[str],
                           centroids: Mapping[str, tuple[float, float]],
                           ) -> tuple[dict[str, float], list[str]]:
    """Exact 1-Wasserstein distance between destination choices per origin.

    Both matrices must share row and column labels (align first).  The
    ground metric is the great-circle distance between destination
    centroids, so the value is in kilometers.  Origins with zero mass in
    either matrix are skipped and reported.
    """
    od_pct = np.asarray(od_pct, dtype=np.float64)
    od_base_pct = np.asarray(od_base_pct, dtype=np.float64)
    if od_pct.shape != od_base_pct.shape or od_pct.shape != (len(origins), len(destinations)):
        raise ValidationError("divergence inputs must be aligned")
    lats = [centroids[d][0] for d in destinations]
    lons = [centroids[d][1] for d in destinations]
    cost = haversine_matrix(lats, lons, lats, lons)

    out: dict[str, float] = {}
    skipped: list[str] = []
    for i, origin in enumerate(origins):
        p = _row_distribution(od_pct, i)
        q = _row_distribution(od_base_pct, i)
        if p is None or q is None:
            skipped.append(origin)
            continue
        out[origin] = wasserstein_exact(p, q, cost)
    return out, skipped


def rurality_shift(od_pct: np.ndarray, od_base_pct: np.ndarray,
                   origins: Sequence[str], destinations: Sequence[str],
                   comunas: ComunaTable) -> dict[str, float]:
    """Change in emigrant-weighted mean destination rurality per origin.

    For each origin x and year T, R_T(x) averages destination rurality
    r(y) with weights m_T(x, y) / M_T(x); the shift is R_T - R_T0.
    Origins without mass in either year are skipped.
    """
    r = np.array([comunas[d].rurality_pct for d in destinations], dtype=np.float64)
    out: dict[str, float] = {}
    for i, origin in enumerate(origins):
        p = _row_distribution(od_pct, i)
        q = _row_distribution(od_base_pct, i)
        if p is None or q is None:
            continue
        out[origin] = float(p @ r - q @ r)
    return out


def density_weighted_destination(od_pct: np.ndarray, origins: Sequence[str],
                                 destinations: Sequence[str],
                                 comunas: ComunaTable) -> dict[str, float]:
    """Emigrant-share-weighted mean destination population density per origin."""
    dens = np.array([comunas[d].density for d in destinations], dtype=np.float64)
    if not np.all(np.isfinite(dens)):
        raise ValidationError("non-finite destination density")
    out: dict[str, float] = {}
    for i, origin in enumerate(origins):
        p = _row_distribution(od_pct, i)
        if p is None:
            continue
        out[origin] = float(p @ dens)
    return out


def icvu_tradeoff(od_pct: np.ndarray, origins: Sequence[str],
                  destinations: Sequence[str],
                  comunas: ComunaTable) -> tuple[dict[str, float], list[str]]:
    """Weighted mean quality-of-life difference (destination minus origin).

    Only origin-destination pairs where both scores exist contribute;
    weights are renormalized over the covered destinations.  Origins
    without a score, or with no covered destination mass, are skipped.
    """
    icvu_dest = np.array([math.nan if comunas[d].icvu is None else comunas[d].icvu
                          for d in destinations], dtype=np.float64)
    covered = ~np.isnan(icvu_dest)
    out: dict[str, float] = {}
    skipped: list[str] = []
    for i, origin in enumerate(origins):
        icvu_o = comunas[origin].icvu if origin in comunas else None
        if icvu_o is None:
            skipped.append(origin)
            continue
        w = np.asarray(od_pct[i], dtype=np.float64) * covered
        total = w.sum()
        if total <= 0:
            skipped.append(origin)
            continue
        diffs = np.where(covered, icvu_dest - icvu_o, 0.0)
        out[origin] = float((w / total) @ diffs)
    return out, skipped


# ---------------------------------------------------------------------------
# region-level analytics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionFlow:
    region_id: str
    inflow_from_scl: float
    population: float
    gravity_score: float


@dataclass(frozen=True)
class RegionAggregate:
    region_id: str
    population: float
    centroid_lat: float
    centroid_lon: float


def aggregate_regions(comunas: ComunaTable) -> dict[str, RegionAggregate]:
    """Population totals and population-weighted centroids per region."""
    out: dict[str, RegionAggregate] = {}
    for region in comunas.region_ids:
        members = comunas.in_region(region)
        pop = sum(p.population for p in members)
        lat = sum(p.centroid_lat * p.population for p in members) / pop
        lon = sum(p.centroid_lon * p.population for p in members) / pop
        out[region] = RegionAggregate(region_id=region, population=pop,
                                      centroid_lat=lat, centroid_lon=lon)
    return out


def gravity_rank(regions: Iterable[RegionAggregate],
                 scl_centroid: tuple[float, float],
                 inflows: Optional[Mapping[str, float]] = None) -> list[RegionFlow]:
    """Regions ranked by population over distance to the capital.

    The capital region itself must not be in ``regions``.  Ties order by
    region id so runs are reproducible.
    """
    flows = []
    for reg in regions:
        dist = haversine_km(reg.centroid_lat, reg.centroid_lon,
                            scl_centroid[0], scl_centroid[1])
        if dist == 0.0:
            raise DegenerateGeometry(f"region {reg.region_id} sits on the capital centroid")
        flows.append(RegionFlow(region_id=reg.region_id,
                                inflow_from_scl=float((inflows or {}).get(reg.region_id, 0.0)),
                                population=reg.population,
                                gravity_score=reg.population / dist))
    flows.sort(key=lambda f: (-f.gravity_score, f.region_id))
    return flows


def expansion_factors(od: OdMatrix, comunas: ComunaTable) -> dict[str, float]:
    """Device-to-person factor per origin: comuna population / March base."""
    out = {}
    for origin in od.origins:
        base = od.origin_base.get(origin, 0)
        if base <= 0:
            raise DegenerateOrigin(f"zero March base for origin {origin}")
        out[origin] = comunas[origin].population / base
    return out


def net_rates_by_comuna(em: OdMatrix, im: OdMatrix,
                        comunas: ComunaTable) -> dict[str, tuple[float, float, float]]:
    """(inflow persons, outflow persons, net rate) per capital comuna.

    Device flows expand to persons with each origin's population-to-base
    factor; the rate normalizes by the comuna's own population.
    """
    f_em = expansion_factors(em, comunas)
    f_im = expansion_factors(im, comunas)
    inflow: dict[str, float] = {c: 0.0 for c in comunas.scl_ids}
    for i, origin in enumerate(im.origins):
        for j, dest in enumerate(im.destinations):
            if im.counts[i, j]:
                inflow[dest] = inflow.get(dest, 0.0) + im.counts[i, j] * f_im[origin]
    out: dict[str, tuple[float, float, float]] = {}
    for c in sorted(comunas.scl_ids):
        outflow = float(em.row(c).sum()) * f_em[c] if c in em.origins else 0.0
        rate = net_migration_rate(inflow.get(c, 0.0), outflow, comunas[c].population)
        out[c] = (float(inflow.get(c, 0.0)), float(outflow), float(rate))
    return out


def hosting_impact(od_region: OdMatrix, comunas: ComunaTable) -> dict[str, float]:
    """Percent of each destination region's population formed by arrivals.

    ``od_region`` must be an emigration matrix at region destination
    level; device flows are expanded to persons with each origin's
    population-to-base factor before dividing by the region population.
    """
    factors = expansion_factors(od_region, comunas)
    regions = aggregate_regions(comunas)
    out: dict[str, float] = {}
    for j, region in enumerate(od_region.destinations):
        if region not in regions:
            raise ValidationError(f"unknown destination region {region}")
        pop = regions[region].population
        if pop <= 0:
            raise ValidationError(f"region {region} has no population")
        persons = sum(od_region.counts[i, j] * factors[o]
                      for i, o in enumerate(od_region.origins))
        out[region] = float(100.0 * persons / pop)
    return out


# ---------------------------------------------------------------------------
# census validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    r: float
    df: int
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return {"r": self.r, "df": self.df, "p_value": self.p_value, "n": self.n}


def census_validation(model_flows: Mapping[str, Mapping[str, float]],
                      census_flows: Mapping[str, Mapping[str, float]],
                      level: str) -> dict:
    """Pearson correlation between model and census flows per direction.

    Inputs map direction ('immigration' / 'emigration') to label -> flow
    tables; only labels present on both sides pair up.  Fewer than three
    aligned pairs is an error.
    """
    report: dict = {"level": level, "directions": {}}
    for direction, model in model_flows.items():
        census = census_flows.get(direction, {})
        labels = sorted(set(model) & set(census))
        if len(labels) < 3:
            raise InsufficientData(
                f"{level}/{direction}: only {len(labels)} aligned flow pairs")
        x = [float(model[l]) for l in labels]
        y = [float(census[l]) for l in labels]
        r, p = pearson(x, y)
        report["directions"][direction] = CorrelationResult(
            r=r, df=len(labels) - 2, p_value=p, n=len(labels)).to_dict()
    return report
