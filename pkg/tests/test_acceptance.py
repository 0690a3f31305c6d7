"""Acceptance suite: one test per release criterion, run at desk scale.

Each test prints a single PASS/FAIL line (visible with ``pytest -s`` or
in the captured output of a failure).  Tolerances are fixed here and are
not calibration knobs.
"""

import datetime as dt
import json
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import scipy.stats
from scipy.optimize import linprog

from xdrflow.cli import main
from xdrflow.core import XdrEvent, haversine_matrix
from xdrflow.home_inference import (WeeklyHomeAccumulator, summarize_homes,
                                    weekly_home, weekly_homes_from_batches)
from xdrflow.ingest import (ComunaTable, QuarantineSchedule, XdrReader,
                            read_all_batches, write_xdr_binary, write_xdr_csv)
from xdrflow.migration import (build_od, census_validation, classify_summary,
                               density_weighted_destination, emigration_pct,
                               rurality_shift)
from xdrflow.mobility_index import (build_index_series, stratify_by_quarantine,
                                    trip_table_from_batches)
from xdrflow.stats import ols, pearson, welch_t
from xdrflow.synth import ScenarioConfig, emit_events, generate_world
from xdrflow.transport import wasserstein_exact

from conftest import local_ts, make_comuna


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def run_flow_pipeline(world, out_dir, fmt="bin"):
    """synth output -> weekly homes -> classified records, all in process."""
    paths = emit_events(world, out_dir, fmt=fmt)
    reader = XdrReader(paths["xdr"], world.window, world.registry)
    acc = WeeklyHomeAccumulator(world.window, world.registry, 3)
    batches = []
    for b in reader.batches():
        batches.append(b)
        acc.add_batch(b)
    weekly = acc.finalize()
    summary = summarize_homes(weekly, world.window)
    records = classify_summary(summary, world.comunas)
    return paths, batches, weekly, records, reader.stats


def classification_accuracy(world, records) -> float:
    truth = world.truth
    by_dev = {r.device_id: r for r in records}
    hits = 0
    for i in range(truth.agent_id.size):
        r = by_dev.get(int(truth.agent_id[i]))
        if r is None:
            continue
        if (r.origin_comuna == truth.comuna_ids[truth.origin_code[i]]
                and r.destination_comuna == truth.comuna_ids[truth.destination_code[i]]
                and r.migrated == bool(truth.migrated[i])):
            hits += 1
    return hits / truth.agent_id.size


# ---------------------------------------------------------------------------
# 1. ground-truth round trip
# ---------------------------------------------------------------------------

def test_criterion_1_ground_truth_round_trip(tmp_path):
    # the scenario window spans the full Mar 1 .. Nov 30 study period, a
    # superset of the nominal eight-month event span, under the same budget
    cfg = ScenarioConfig(seed=42, n_comunas=40, n_agents=10_000,
                         migration_rate=0.12, noise=0.0)
    t0 = time.perf_counter()
    world = generate_world(cfg)
    _, _, _, records, stats = run_flow_pipeline(world, tmp_path / "clean")
    elapsed = time.perf_counter() - t0
    acc_clean = classification_accuracy(world, records)

    world_noisy = generate_world(ScenarioConfig(seed=42, n_comunas=40,
                                                n_agents=10_000,
                                                migration_rate=0.12, noise=0.1))
    _, _, _, records_noisy, _ = run_flow_pipeline(world_noisy, tmp_path / "noisy")
    acc_noisy = classification_accuracy(world_noisy, records_noisy)

    ok = acc_clean == 1.0 and elapsed < 60.0 and acc_noisy >= 0.97
    report("1 round-trip", ok,
           f"noise=0 accuracy {acc_clean:.4f} in {elapsed:.1f}s "
           f"(limit 60s, {stats.events_read / 1e6:.1f}M events); "
           f"noise=0.1 accuracy {acc_noisy:.4f} (needs >= 0.97)")


# ---------------------------------------------------------------------------
# 2. home-inference oracle
# ---------------------------------------------------------------------------

def test_criterion_2_weekly_home_oracle(window, small_registry):
    rng = np.random.default_rng(2024)
    antennas = [10, 11, 20, 30, 40, 50]
    agree = 0
    trials = 1000
    for _ in range(trials):
        n = int(rng.integers(0, 20))
        chosen = [int(rng.choice(antennas[:int(rng.integers(2, 7))]))
                  for _ in range(n)]
        events = [XdrEvent(device_id=1,
                           timestamp=local_ts(window, dt.date(2020, 6, 1), 23, i % 60),
                           antenna_id=a)
                  for i, a in enumerate(chosen)]
        got = weekly_home(events, small_registry, min_events=3)
        if n < 3:
            want = None
        else:
            counts = Counter(chosen)
            best = min(counts, key=lambda a: (-counts[a], a))
            want = small_registry.comuna_of(best)
        agree += got == want
    report("2 weekly-home oracle", agree == trials,
           f"{agree}/{trials} random device-weeks match the count-and-argmax "
           f"oracle, ties included")


# ---------------------------------------------------------------------------
# 3. exact optimal transport
# ---------------------------------------------------------------------------

def _lp_wasserstein(p, q, cost):
    diff = p - q
    src, snk = diff > 1e-15, diff < -1e-15
    if not src.any():
        return 0.0
    supply, demand = diff[src], -diff[snk]
    c = cost[np.ix_(np.where(src)[0], np.where(snk)[0])]
    m, n = c.shape
    rows = []
    for i in range(m):
        r = np.zeros((m, n))
        r[i, :] = 1.0
        rows.append(r.ravel())
    for j in range(n):
        r = np.zeros((m, n))
        r[:, j] = 1.0
        rows.append(r.ravel())
    res = linprog(c.ravel(), A_eq=np.array(rows),
                  b_eq=np.concatenate([supply, demand]), bounds=(0, None),
                  method="highs")
    assert res.success
    return float(res.fun)


def test_criterion_3_wasserstein_exactness():
    rng = np.random.default_rng(3033)
    worst = 0.0
    for trial in range(500):
        k = int(rng.integers(2, 7))
        lats = rng.uniform(-45, -20, k)
        lons = rng.uniform(-74, -67, k)
        cost = haversine_matrix(lats, lons, lats, lons)
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        if trial % 5 == 0:
            p[rng.random(k) < 0.5] = 0.0
            if p.sum() == 0:
                p[0] = 1.0
            p = p / p.sum()
        got = wasserstein_exact(p, q, cost)
        worst = max(worst, abs(got - _lp_wasserstein(p, q, cost)))
        assert wasserstein_exact(p, p.copy(), cost) == 0.0
    report("3 transport exactness", worst <= 1e-9,
           f"max deviation from the reference LP over 500 pairs: {worst:.2e} "
           f"(limit 1e-9); identical distributions give exactly 0")


# ---------------------------------------------------------------------------
# 4. statistics kernel
# ---------------------------------------------------------------------------

def test_criterion_4_statistics_kernel():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 120))
        x = rng.normal(size=n)
        y = 0.7 * x + rng.normal(size=n)
        r, p = pearson(x, y)
        ref = scipy.stats.pearsonr(x, y)
        worst = max(worst, abs(r - ref.statistic), abs(p - ref.pvalue))
        fit = ols(x, y)
        lin = scipy.stats.linregress(x, y)
        worst = max(worst, abs(fit.slope - lin.slope),
                    abs(fit.intercept - lin.intercept),
                    abs(fit.p_value - lin.pvalue))
        a = rng.normal(0, 1, int(rng.integers(3, 40)))
        b = rng.normal(0.2, 1.7, int(rng.integers(3, 40)))
        t, pw = welch_t(a, b)
        refw = scipy.stats.ttest_ind(a, b, equal_var=False)
        worst = max(worst, abs(t - refw.statistic), abs(pw - refw.pvalue))

    x = np.arange(12.0)
    r_up, _ = pearson(x, 5.0 * x - 2.0)
    r_dn, _ = pearson(x, -0.5 * x + 4.0)
    fit = ols(x, 5.0 * x - 2.0)
    exact_ok = (abs(r_up - 1.0) <= 1e-12 and abs(r_dn + 1.0) <= 1e-12
                and abs(fit.r2 - 1.0) <= 1e-12)

    rng2 = np.random.default_rng(405)
    ident_ok = True
    for _ in range(50):
        x = rng2.normal(size=30)
        y = x + rng2.normal(size=30)
        fit = ols(x, y)
        ident_ok &= abs(fit.r2 - fit.r ** 2) <= 1e-12

    ok = worst <= 1e-8 and exact_ok and ident_ok
    report("4 statistics kernel", ok,
           f"max deviation from the reference implementation over 100 datasets: "
           f"{worst:.2e} (limit 1e-8); perfect lines give |r|=1 and r2=1 within "
           f"1e-12; r2 equals r^2 within 1e-12")


# ---------------------------------------------------------------------------
# 5 and 6. index identities and quarantine stratification
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def index_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("indexrun")
    cfg = ScenarioConfig(seed=1305, n_comunas=30, n_agents=900,
                         migration_rate=0.05, quarantine_drop=0.30,
                         events_per_night=2.0, n_regions=6)
    world = generate_world(cfg)
    paths = emit_events(world, tmp, fmt="bin")
    batches, _ = read_all_batches(paths["xdr"], world.window, world.registry)
    weekly = weekly_homes_from_batches(batches, world.window, world.registry)
    trips = trip_table_from_batches(batches, world.window, weekly)
    series = build_index_series(trips, world.window)
    schedule = QuarantineSchedule.from_rows(world.truth.quarantine_rows)
    return world, series, stratify_by_quarantine(series, schedule)


def test_criterion_5_index_decomposition_and_baseline(index_run):
    world, series, _ = index_run
    worst_base = 0.0
    exact = True
    lo = world.window.baseline_monday - world.window.start_day
    for s in series.values():
        defined = ~np.isnan(s.im_total)
        exact &= np.array_equal(s.im_total[defined],
                                (s.im_internal + s.im_external)[defined])
        if not s.no_baseline:
            worst_base = max(worst_base,
                             abs(float(np.nanmean(s.change_total[lo:lo + 7]))))
    ok = exact and worst_base <= 1e-12
    report("5 index identities", ok,
           f"decomposition exact on {len(series)} comunas over the window; "
           f"max |baseline-week mean change| = {worst_base:.2e} (limit 1e-12)")


def test_criterion_6_quarantine_stratification(index_run):
    world, series, strata = index_run
    q_means = [st.quarantine_mean_change for st in strata.values()
               if st.quarantine_mean_change is not None]
    worst_recompose = 0.0
    for cid, st in strata.items():
        parts = [(v, d) for v, d in ((st.quarantine_mean_change, st.days_quarantine),
                                     (st.free_mean_change, st.days_free))
                 if v is not None and d > 0]
        if not parts:
            continue
        recomposed = sum(v * d for v, d in parts) / sum(d for _, d in parts)
        overall = float(np.nanmean(series[cid].change_total))
        worst_recompose = max(worst_recompose, abs(recomposed - overall))
    mean_q = float(np.mean(q_means))
    per_comuna_ok = all(abs(v + 30.0) <= 1.0 for v in q_means)
    ok = (len(q_means) > 0 and abs(mean_q + 30.0) <= 1.0 and per_comuna_ok
          and worst_recompose <= 1e-9)
    report("6 quarantine stratification", ok,
           f"planted 30% drop recovered: stratum mean {mean_q:.3f} over "
           f"{len(q_means)} comunas (each within +-1 pp of -30); day-weighted "
           f"recomposition error {worst_recompose:.2e} (limit 1e-9)")


# ---------------------------------------------------------------------------
# 7. destination-composition formulas
# ---------------------------------------------------------------------------

def test_criterion_7_rurality_and_density_formulas():
    rng = np.random.default_rng(707)
    worst = 0.0
    bounded = True
    for _ in range(200):
        n_dest = int(rng.integers(2, 10))
        dests = [f"D{j}" for j in range(n_dest)]
        comunas = ComunaTable(
            [make_comuna("X", region="R-M", in_scl=True)]
            + [make_comuna(d, region="R-1",
                           rurality=float(rng.uniform(0, 1)),
                           population=float(rng.uniform(2_000, 200_000)),
                           area=float(rng.uniform(20, 800))) for d in dests])
        a = rng.uniform(0, 8, size=(1, n_dest))
        b = rng.uniform(0, 8, size=(1, n_dest))
        shift = rurality_shift(b, a, ["X"], dests, comunas)
        r = np.array([comunas[d].rurality_pct for d in dests])
        want = float(b[0] @ r / b.sum() - a[0] @ r / a.sum())
        worst = max(worst, abs(shift["X"] - want))
        bounded &= -1.0 <= shift["X"] <= 1.0
        dens = density_weighted_destination(b, ["X"], dests, comunas)
        dv = np.array([comunas[d].density for d in dests])
        want_d = float(b[0] @ dv / b.sum())
        worst = max(worst, abs(dens["X"] - want_d) / max(1.0, abs(want_d)))
    ok = worst <= 1e-12 and bounded
    report("7 destination formulas", ok,
           f"max deviation from direct formula evaluation over 200 random "
           f"matrices: {worst:.2e} (limit 1e-12); rurality shift bounded in [-1, 1]")


# ---------------------------------------------------------------------------
# 8. income-coupling detection
# ---------------------------------------------------------------------------

def _emigration_decile_r2(coupling: float, tmp_path) -> float:
    cfg = ScenarioConfig(seed=42, n_comunas=40, n_agents=6_000,
                         migration_rate=0.12, income_migration_coupling=coupling)
    world = generate_world(cfg)
    _, _, _, records, _ = run_flow_pipeline(world, tmp_path)
    od = build_od(records, "emigration", "comuna", world.comunas)
    pct = emigration_pct(od)
    shares = {o: float(pct[i].sum()) for i, o in enumerate(od.origins)}
    xs = [world.comunas[c].income_decile for c in sorted(shares)]
    ys = [shares[c] for c in sorted(shares)]
    return ols(xs, ys).r2


def test_criterion_8_coupling_detection(tmp_path):
    r2_flat = _emigration_decile_r2(0.0, tmp_path / "flat")
    r2_coupled = _emigration_decile_r2(0.8, tmp_path / "coupled")
    gap = r2_coupled - r2_flat
    report("8 coupling detection", gap >= 0.3,
           f"emigration-vs-decile r2: coupled {r2_coupled:.3f} vs uncoupled "
           f"{r2_flat:.3f}, gap {gap:.3f} (needs >= 0.3)")


# ---------------------------------------------------------------------------
# 9. census-validation harness
# ---------------------------------------------------------------------------

def test_criterion_9_census_harness():
    rng = np.random.default_rng(909)
    rho, n, trials = 0.9, 300, 100
    cov = np.array([[1.0, rho], [rho, 1.0]])
    rs = []
    for _ in range(trials):
        xy = rng.multivariate_normal([10.0, 10.0], cov, size=n)
        labels = [f"u{i:03d}" for i in range(n)]
        model = {"immigration": dict(zip(labels, xy[:, 0]))}
        census = {"immigration": dict(zip(labels, xy[:, 1]))}
        rep = census_validation(model, census, "comunas_scl")
        rs.append(rep["directions"]["immigration"]["r"])
        assert rep["directions"]["immigration"]["df"] == n - 2
    mean_r = float(np.mean(rs))
    report("9 census harness", abs(mean_r - rho) <= 0.02,
           f"mean correlation over {trials} trials: {mean_r:.4f} "
           f"(planted {rho}, tolerance 0.02)")


# ---------------------------------------------------------------------------
# 10. determinism and throughput
# ---------------------------------------------------------------------------

def _run_cli_pipeline(root: Path, scenario: Path, threads: int) -> None:
    synth = root / "synth"
    t = str(threads)
    assert main(["synth", "--scenario", str(scenario), "--out", str(synth),
                 "--format", "bin", "--threads", t]) == 0
    assert main(["homes", "--xdr", str(synth / "xdr.bin"),
                 "--antennas", str(synth / "antennas.csv"),
                 "--comunas", str(synth / "comunas.csv"),
                 "--out", str(root / "homes"), "--window-year", "2020",
                 "--threads", t]) == 0
    assert main(["migrate", "--homes", str(root / "homes" / "homes.csv"),
                 "--comunas", str(synth / "comunas.csv"),
                 "--out", str(root / "mig"), "--window-year", "2020"]) == 0
    assert main(["indices", "--xdr", str(synth / "xdr.bin"),
                 "--antennas", str(synth / "antennas.csv"),
                 "--homes", str(root / "homes" / "homes.csv"),
                 "--quarantines", str(synth / "quarantines.csv"),
                 "--comunas", str(synth / "comunas.csv"),
                 "--out", str(root / "idx"), "--window-year", "2020",
                 "--threads", t]) == 0
    assert main(["analyze", "--migration", str(root / "mig"),
                 "--comunas", str(synth / "comunas.csv"),
                 "--indices", str(root / "idx"),
                 "--out", str(root / "ana")]) == 0


def _tree_bytes(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_criterion_10_determinism_and_throughput(tmp_path):
    # determinism across thread counts, manifests excluded (they carry timings)
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(dict(
        seed=10, n_comunas=24, n_agents=700, migration_rate=0.1,
        quarantine_drop=0.3, n_regions=6, year=2020)))
    _run_cli_pipeline(tmp_path / "t1", scenario, threads=1)
    _run_cli_pipeline(tmp_path / "t8", scenario, threads=8)
    tree1 = _tree_bytes(tmp_path / "t1")
    tree8 = _tree_bytes(tmp_path / "t8")
    identical = tree1 == tree8

    # throughput corpus: 100M valid events against a real registry
    cfg = ScenarioConfig(seed=10, n_comunas=40, n_agents=10)
    world = generate_world(cfg)
    window = world.window
    registry = world.registry
    ant_ids = np.array(sorted(a.antenna_id for a in world.antennas), dtype=np.uint32)
    rng = np.random.default_rng(0)
    block_n = 5_000_000
    repeats = 20  # 100M total
    device = rng.integers(1, 1 << 40, block_n).astype(np.uint64)
    offs = rng.integers(0, window.end_utc - window.start_utc, block_n)
    ts = (window.start_utc + offs).astype(np.int64)
    antenna = rng.choice(ant_ids, block_n)

    bin_path = tmp_path / "corpus.bin"
    write_xdr_binary(bin_path, window, [(device, ts, antenna)])
    block = bin_path.read_bytes()[8:]
    with open(bin_path, "ab") as fh:
        for _ in range(repeats - 1):
            fh.write(block)

    t0 = time.perf_counter()
    reader = XdrReader(bin_path, window, registry, chunk_bytes=32 << 20)
    kept = sum(len(b) for b in reader.batches())
    bin_rate = reader.stats.events_read / (time.perf_counter() - t0)
    assert reader.stats.events_read == block_n * repeats
    assert kept == block_n * repeats
    bin_path.unlink()

    csv_path = tmp_path / "corpus.csv"
    write_xdr_csv(csv_path, [(device, ts, antenna)])
    raw = csv_path.read_bytes()
    body = raw.split(b"\n", 1)[1]
    with open(csv_path, "ab") as fh:
        for _ in range(repeats - 1):
            fh.write(body)
    t0 = time.perf_counter()
    reader = XdrReader(csv_path, window, registry, chunk_bytes=32 << 20)
    kept = sum(len(b) for b in reader.batches())
    csv_rate = reader.stats.events_read / (time.perf_counter() - t0)
    assert reader.stats.events_read == block_n * repeats
    assert kept == block_n * repeats
    csv_path.unlink()

    ok = identical and bin_rate >= 2_000_000 and csv_rate >= 300_000
    report("10 determinism and throughput", ok,
           f"threads 1 vs 8 byte-identical over {len(tree1)} files: {identical}; "
           f"binary {bin_rate / 1e6:.1f}M events/s (needs >= 2.0M); "
           f"CSV {csv_rate / 1e6:.2f}M events/s (needs >= 0.3M) on a 100M-event corpus")
