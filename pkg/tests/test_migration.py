import numpy as np
import pytest

from xdrflow.core import haversine_km
from xdrflow.errors import (DegenerateGeometry, DegenerateOrigin,
                            InsufficientData, ValidationError)
from xdrflow.home_inference import HomeSeries
from xdrflow.ingest import ComunaTable
from xdrflow.migration import (MigrationRecord, OdMatrix, RegionAggregate,
                               aggregate_regions, align_matrices, build_od,
                               census_validation, classify,
                               density_weighted_destination,
                               destination_divergence, emigration_pct,
                               expansion_factors, gravity_rank, hosting_impact,
                               icvu_tradeoff, matrix_difference,
                               net_migration_rate, rurality_shift,
                               zscore_row_filter)

from conftest import make_comuna


def series(device, baseline, november):
    return HomeSeries(device_id=device, weekly_home={}, baseline_home=baseline,
                      november_home=november)


def rec(device, origin, dest, comunas):
    o, d = comunas[origin], comunas[dest]
    return MigrationRecord(device_id=device, origin_comuna=origin,
                           destination_comuna=dest, origin_region=o.region_id,
                           destination_region=d.region_id,
                           migrated=o.region_id != d.region_id)


class TestClassify:
    def test_intra_region_move_is_not_migration(self, small_comunas):
        r = classify(series(1, "C1", "C2"), small_comunas)
        assert r is not None and not r.migrated

    def test_cross_region_move_is_migration(self, small_comunas):
        r = classify(series(1, "C1", "V1"), small_comunas)
        assert r.migrated
        assert r.origin_region == "R-M" and r.destination_region == "R-V"

    def test_missing_home_gives_none(self, small_comunas):
        assert classify(series(1, None, "V1"), small_comunas) is None
        assert classify(series(1, "C1", None), small_comunas) is None

    def test_unknown_comuna_raises(self, small_comunas):
        with pytest.raises(ValidationError):
            classify(series(1, "C1", "NOPE"), small_comunas)


class TestBuildOd:
    def test_basic_counts(self, small_comunas):
        records = [rec(1, "C1", "V1", small_comunas),
                   rec(2, "C1", "V1", small_comunas),
                   rec(3, "C1", "V2", small_comunas),
                   rec(4, "C1", "C1", small_comunas),
                   rec(5, "C2", "C2", small_comunas)]
        od = build_od(records, "emigration", "comuna", small_comunas)
        assert od.origins == ["C1", "C2"]
        assert od.destinations == ["V1", "V2"]
        assert od.row("C1").tolist() == [2, 1]
        assert od.origin_base == {"C1": 4, "C2": 1}

    def test_no_migrations_yields_zero_matrix_with_bases(self, small_comunas):
        records = [rec(1, "C1", "C2", small_comunas), rec(2, "C2", "C2", small_comunas)]
        od = build_od(records, "emigration", "comuna", small_comunas)
        assert od.total() == 0
        assert od.origin_base == {"C1": 1, "C2": 1}

    def test_immigration_counts_outside_origins_into_capital(self, small_comunas):
        records = [rec(1, "V1", "C1", small_comunas),
                   rec(2, "V1", "C2", small_comunas),
                   rec(3, "S1", "C1", small_comunas),
                   rec(4, "V2", "V2", small_comunas),
                   rec(5, "C1", "V1", small_comunas)]  # emigrant, not immigration
        od = build_od(records, "immigration", "comuna", small_comunas)
        assert od.origins == ["S1", "V1", "V2"]
        assert od.destinations == ["C1", "C2"]
        assert od.counts.sum() == 3
        assert od.origin_base == {"V1": 2, "S1": 1, "V2": 1}

    def test_region_level_destinations(self, small_comunas):
        records = [rec(1, "C1", "V1", small_comunas),
                   rec(2, "C1", "S1", small_comunas),
                   rec(3, "C1", "C1", small_comunas)]
        od = build_od(records, "emigration", "region", small_comunas)
        assert od.destinations == ["R-S", "R-V"]
        assert od.row("C1").tolist() == [1, 1]

    def test_flow_conservation_on_random_records(self, small_comunas):
        rng = np.random.default_rng(10)
        ids = list(small_comunas.ids)
        records = []
        for device in range(500):
            o = str(rng.choice(ids))
            d = str(rng.choice(ids))
            records.append(rec(device, o, d, small_comunas))
        od = build_od(records, "emigration", "comuna", small_comunas)
        migrated_scl = [r for r in records
                        if r.origin_region == "R-M" and r.migrated]
        assert od.total() == len(migrated_scl)
        # group-by-count oracle
        want = {}
        for r in migrated_scl:
            want[(r.origin_comuna, r.destination_comuna)] = \
                want.get((r.origin_comuna, r.destination_comuna), 0) + 1
        for (o, d), n in want.items():
            assert od.counts[od.origins.index(o), od.destinations.index(d)] == n

    def test_bad_direction(self, small_comunas):
        with pytest.raises(ValidationError):
            build_od([], "sideways", "comuna", small_comunas)


class TestEmigrationPct:
    def test_basic_cell(self):
        od = OdMatrix(origins=["A"], destinations=["X"],
                      counts=np.array([[5]]), origin_base={"A": 1000})
        assert emigration_pct(od)[0, 0] == pytest.approx(0.5)

    def test_zero_row(self):
        od = OdMatrix(origins=["A"], destinations=["X"],
                      counts=np.array([[0]]), origin_base={"A": 10})
        assert emigration_pct(od)[0, 0] == 0.0

    def test_zero_base_raises(self):
        od = OdMatrix(origins=["A"], destinations=["X"],
                      counts=np.array([[0]]), origin_base={"A": 0})
        with pytest.raises(DegenerateOrigin):
            emigration_pct(od)

    def test_row_sums_match_direct_summation_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            m, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
            counts = rng.integers(0, 50, size=(m, n))
            base = {f"o{i}": int(counts[i].sum() + rng.integers(1, 100))
                    for i in range(m)}
            od = OdMatrix(origins=[f"o{i}" for i in range(m)],
                          destinations=[f"d{j}" for j in range(n)],
                          counts=counts, origin_base=base)
            pct = emigration_pct(od)
            for i in range(m):
                want = 100.0 * counts[i].sum() / base[f"o{i}"]
                assert pct[i].sum() == pytest.approx(want, abs=1e-9)
                assert pct[i].sum() <= 100.0 + 1e-9


class TestNetMigrationRate:
    def test_pandemic_year_balance_is_negative(self):
        # 125K arrivals against 160K departures: a 35K net outflow
        assert 125_000 - 160_000 == -35_000
        rate = net_migration_rate(125_000, 160_000, 6_000_000)
        assert rate < 0

    def test_balance_gives_zero(self):
        assert net_migration_rate(5_000, 5_000, 100_000) == 0.0

    def test_direct_formula(self):
        rate = net_migration_rate(130_000, 95_000, 6_000_000)
        assert rate == pytest.approx(100.0 * 35_000 / 6_000_000, abs=1e-12)
        assert rate == pytest.approx(0.58333333, abs=1e-6)

    def test_nonpositive_population_raises(self):
        with pytest.raises(ValidationError):
            net_migration_rate(1, 1, 0)


class TestMatrixDifferenceAndZScore:
    def test_identical_matrices_keep_nothing(self):
        a = np.ones((3, 4))
        kept, z = zscore_row_filter(matrix_difference(a, a), ["r0", "r1", "r2"])
        assert kept == []
        assert np.all(z == 0.0)

    def test_single_hot_cell_keeps_its_row(self):
        a = np.zeros((4, 5))
        b = np.zeros((4, 5))
        b[2, 3] = 10.0
        kept, z = zscore_row_filter(matrix_difference(a, b),
                                    ["r0", "r1", "r2", "r3"])
        assert kept == ["r2"]
        assert z[2, 3] > 1.96

    def test_random_matrices_match_two_pass_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(40):
            m, n = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            a = rng.normal(size=(m, n))
            b = rng.normal(size=(m, n))
            labels = [f"r{i}" for i in range(m)]
            diff = matrix_difference(a, b)
            kept, z = zscore_row_filter(diff, labels, threshold=1.0)
            mean = (b - a).mean()
            std = (b - a).std()
            want = [labels[i] for i in range(m)
                    if any((b - a)[i, j] - mean > 1.0 * std for j in range(n))]
            assert kept == want

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValidationError):
            matrix_difference(np.zeros((2, 2)), np.zeros((2, 3)))


class TestDestinationDivergence:
    CENTROIDS = {"P": (-33.0, -70.0), "Q": (-36.5, -72.0), "R": (-30.0, -71.0)}

    def test_identical_distributions_give_zero(self):
        pct = np.array([[30.0, 20.0, 0.0]])
        out, skipped = destination_divergence(pct, pct.copy(), ["X"],
                                              ["P", "Q", "R"], self.CENTROIDS)
        assert out["X"] == 0.0
        assert skipped == []

    def test_full_shift_between_two_points(self):
        a = np.array([[10.0, 0.0, 0.0]])
        b = np.array([[0.0, 5.0, 0.0]])
        out, _ = destination_divergence(b, a, ["X"], ["P", "Q", "R"], self.CENTROIDS)
        want = haversine_km(*self.CENTROIDS["P"], *self.CENTROIDS["Q"])
        assert out["X"] == pytest.approx(want, abs=1e-9)

    def test_zero_mass_origin_skipped(self):
        a = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out, skipped = destination_divergence(b, a, ["X", "Y"],
                                              ["P", "Q", "R"], self.CENTROIDS)
        assert "Y" in skipped and "Y" not in out

    def test_symmetric_in_distribution_arguments(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 10, size=(3, 3))
        b = rng.uniform(0, 10, size=(3, 3))
        labels = ["X", "Y", "Z"]
        out1, _ = destination_divergence(a, b, labels, ["P", "Q", "R"], self.CENTROIDS)
        out2, _ = destination_divergence(b, a, labels, ["P", "Q", "R"], self.CENTROIDS)
        for k in out1:
            assert out1[k] == pytest.approx(out2[k], abs=1e-9)


class TestRuralityShift:
    def _table(self):
        return ComunaTable([
            make_comuna("X", region="R-M", in_scl=True),
            make_comuna("A", region="R-1", rurality=0.2),
            make_comuna("B", region="R-1", rurality=0.4),
        ])

    def test_identical_composition_gives_zero(self):
        comunas = self._table()
        pct = np.array([[7.0, 3.0]])
        out = rurality_shift(pct, pct.copy(), ["X"], ["A", "B"], comunas)
        assert out["X"] == pytest.approx(0.0, abs=1e-15)

    def test_two_term_hand_evaluation(self):
        comunas = self._table()
        year_t = np.array([[50.0, 50.0]])   # mean rurality 0.3
        year_t0 = np.array([[100.0, 0.0]])  # mean rurality 0.2
        out = rurality_shift(year_t, year_t0, ["X"], ["A", "B"], comunas)
        assert out["X"] == pytest.approx(0.1, abs=1e-12)

    def test_random_flows_match_double_loop_oracle(self):
        rng = np.random.default_rng(21)
        comunas = ComunaTable(
            [make_comuna("X", region="R-M", in_scl=True)]
            + [make_comuna(f"D{j}", region="R-1", rurality=float(rng.uniform(0, 1)))
               for j in range(6)])
        dests = [f"D{j}" for j in range(6)]
        for _ in range(200):
            a = rng.uniform(0, 5, size=(1, 6))
            b = rng.uniform(0, 5, size=(1, 6))
            out = rurality_shift(b, a, ["X"], dests, comunas)
            rt = sum(b[0, j] * comunas[dests[j]].rurality_pct for j in range(6)) / b.sum()
            r0 = sum(a[0, j] * comunas[dests[j]].rurality_pct for j in range(6)) / a.sum()
            assert out["X"] == pytest.approx(rt - r0, abs=1e-12)
            assert -1.0 <= out["X"] <= 1.0


class TestDensityWeighted:
    def test_single_destination(self):
        comunas = ComunaTable([make_comuna("X", region="R-M", in_scl=True),
                               make_comuna("A", region="R-1",
                                           population=12_000, area=100.0)])
        out = density_weighted_destination(np.array([[4.0]]), ["X"], ["A"], comunas)
        assert out["X"] == pytest.approx(120.0)

    def test_equal_mass_two_destinations(self):
        comunas = ComunaTable([
            make_comuna("X", region="R-M", in_scl=True),
            make_comuna("A", region="R-1", population=10_000, area=100.0),
            make_comuna("B", region="R-1", population=30_000, area=100.0)])
        out = density_weighted_destination(np.array([[2.0, 2.0]]), ["X"],
                                           ["A", "B"], comunas)
        assert out["X"] == pytest.approx(200.0)

    def test_random_flows_match_direct_evaluation(self):
        rng = np.random.default_rng(31)
        comunas = ComunaTable(
            [make_comuna("X", region="R-M", in_scl=True)]
            + [make_comuna(f"D{j}", region="R-1",
                           population=float(rng.uniform(1_000, 90_000)),
                           area=float(rng.uniform(10, 500)))
               for j in range(5)])
        dests = [f"D{j}" for j in range(5)]
        for _ in range(200):
            w = rng.uniform(0, 3, size=(1, 5))
            out = density_weighted_destination(w, ["X"], dests, comunas)
            want = sum(w[0, j] * comunas[dests[j]].density for j in range(5)) / w.sum()
            assert out["X"] == pytest.approx(want, abs=1e-12 * max(1.0, want))


class TestIcvuTradeoff:
    def _table(self):
        return ComunaTable([
            make_comuna("X", region="R-M", in_scl=True, icvu=70.0),
            make_comuna("A", region="R-1", icvu=60.0),
            make_comuna("B", region="R-1", icvu=80.0),
            make_comuna("N", region="R-1", icvu=None),
        ])

    def test_equal_scores_give_zero(self):
        comunas = ComunaTable([
            make_comuna("X", region="R-M", in_scl=True, icvu=70.0),
            make_comuna("A", region="R-1", icvu=70.0)])
        out, _ = icvu_tradeoff(np.array([[5.0]]), ["X"], ["A"], comunas)
        assert out["X"] == pytest.approx(0.0)

    def test_symmetric_masses_cancel(self):
        out, _ = icvu_tradeoff(np.array([[2.0, 2.0, 0.0]]), ["X"],
                               ["A", "B", "N"], self._table())
        assert out["X"] == pytest.approx(0.0)  # -10 and +10, equal weight

    def test_uncovered_destination_weight_renormalized(self):
        out, _ = icvu_tradeoff(np.array([[1.0, 0.0, 9.0]]), ["X"],
                               ["A", "B", "N"], self._table())
        assert out["X"] == pytest.approx(-10.0)  # N drops out entirely

    def test_origin_without_score_is_skipped(self):
        comunas = ComunaTable([
            make_comuna("X", region="R-M", in_scl=True, icvu=None),
            make_comuna("A", region="R-1", icvu=60.0)])
        out, skipped = icvu_tradeoff(np.array([[5.0]]), ["X"], ["A"], comunas)
        assert out == {} and skipped == ["X"]

    def test_random_covered_subsets_match_renormalized_oracle(self):
        rng = np.random.default_rng(41)
        comunas = self._table()
        for _ in range(100):
            w = rng.uniform(0, 4, size=(1, 3))
            out, skipped = icvu_tradeoff(w, ["X"], ["A", "B", "N"], comunas)
            cw = {"A": w[0, 0], "B": w[0, 1]}
            total = sum(cw.values())
            if total == 0:
                assert skipped == ["X"]
                continue
            want = (cw["A"] * (60.0 - 70.0) + cw["B"] * (80.0 - 70.0)) / total
            assert out["X"] == pytest.approx(want, abs=1e-12)


class TestGravityRank:
    def test_nearer_region_ranks_first_at_equal_population(self):
        regions = [RegionAggregate("far", 1000.0, -40.0, -70.0),
                   RegionAggregate("near", 1000.0, -35.0, -70.0)]
        ranked = gravity_rank(regions, (-33.0, -70.0))
        assert [r.region_id for r in ranked] == ["near", "far"]

    def test_ranking_invariant_under_population_scaling(self):
        rng = np.random.default_rng(51)
        regions = [RegionAggregate(f"r{i}", float(rng.uniform(100, 9_000)),
                                   float(rng.uniform(-50, -20)),
                                   float(rng.uniform(-75, -66)))
                   for i in range(10)]
        base = [r.region_id for r in gravity_rank(regions, (-33.0, -70.6))]
        scaled = [RegionAggregate(r.region_id, 7.0 * r.population,
                                  r.centroid_lat, r.centroid_lon) for r in regions]
        assert [r.region_id for r in gravity_rank(scaled, (-33.0, -70.6))] == base

    def test_matches_naive_sort_oracle(self):
        rng = np.random.default_rng(61)
        for _ in range(30):
            regions = [RegionAggregate(f"r{i}", float(rng.uniform(1, 100)),
                                       float(rng.uniform(-55, -18)),
                                       float(rng.uniform(-75, -66)))
                       for i in range(8)]
            scl = (-33.4, -70.6)
            ranked = gravity_rank(regions, scl)
            scores = {r.region_id: r.population / haversine_km(
                r.centroid_lat, r.centroid_lon, *scl) for r in regions}
            want = sorted(scores, key=lambda k: (-scores[k], k))
            assert [r.region_id for r in ranked] == want

    def test_zero_distance_raises(self):
        with pytest.raises(DegenerateGeometry):
            gravity_rank([RegionAggregate("here", 1.0, -33.0, -70.0)], (-33.0, -70.0))


class TestHostingImpact:
    def _comunas(self):
        return ComunaTable([
            make_comuna("X", region="R-M", in_scl=True, population=100_000),
            make_comuna("A", region="R-1", population=100_000),
            make_comuna("B", region="R-1", population=50_000),
        ])

    def test_known_percentage(self):
        comunas = self._comunas()
        # 13 devices from X, base 1000 -> factor 100 -> 1300 persons into a
        # region of 150000 persons
        od = OdMatrix(origins=["X"], destinations=["R-1"],
                      counts=np.array([[13]]), origin_base={"X": 1000})
        out = hosting_impact(od, comunas)
        assert out["R-1"] == pytest.approx(100.0 * 1300 / 150_000)

    def test_anchor_value_1_3_percent(self):
        comunas = self._comunas()
        od = OdMatrix(origins=["X"], destinations=["R-1"],
                      counts=np.array([[1950]]),
                      origin_base={"X": 100_000})  # factor 1.0 -> 1950 persons
        assert hosting_impact(od, comunas)["R-1"] == pytest.approx(1.3)

    def test_zero_inflow(self):
        comunas = self._comunas()
        od = OdMatrix(origins=["X"], destinations=["R-1"],
                      counts=np.array([[0]]), origin_base={"X": 10})
        assert hosting_impact(od, comunas)["R-1"] == 0.0

    def test_random_flows_match_direct_ratio_oracle(self):
        rng = np.random.default_rng(71)
        comunas = self._comunas()
        for _ in range(100):
            n = int(rng.integers(0, 40))
            base = int(rng.integers(max(n, 1), 100))
            od = OdMatrix(origins=["X"], destinations=["R-1"],
                          counts=np.array([[n]]), origin_base={"X": base})
            factor = 100_000 / base
            want = 100.0 * n * factor / 150_000
            assert hosting_impact(od, comunas)["R-1"] == pytest.approx(want, abs=1e-9)

    def test_expansion_factor_invariance_of_percentages(self):
        # scaling device flows and bases together leaves percent outputs alone
        comunas = self._comunas()
        od1 = OdMatrix(origins=["X"], destinations=["R-1"],
                       counts=np.array([[20]]), origin_base={"X": 500})
        od5 = OdMatrix(origins=["X"], destinations=["R-1"],
                       counts=np.array([[100]]), origin_base={"X": 2500})
        assert hosting_impact(od1, comunas)["R-1"] == pytest.approx(
            hosting_impact(od5, comunas)["R-1"], abs=1e-12)
        pct1 = emigration_pct(od1)
        pct5 = emigration_pct(od5)
        assert pct1[0, 0] == pytest.approx(pct5[0, 0], abs=1e-12)


class TestAggregateRegions:
    def test_population_weighted_centroid(self, small_comunas):
        regions = aggregate_regions(small_comunas)
        rm = regions["R-M"]
        pops = [small_comunas["C1"].population, small_comunas["C2"].population]
        want_lat = (small_comunas["C1"].centroid_lat * pops[0]
                    + small_comunas["C2"].centroid_lat * pops[1]) / sum(pops)
        assert rm.centroid_lat == pytest.approx(want_lat)
        assert rm.population == pytest.approx(sum(pops))


class TestAlignMatrices:
    def test_union_padding(self):
        a = OdMatrix(origins=["A"], destinations=["X"],
                     counts=np.array([[3]]), origin_base={"A": 10})
        b = OdMatrix(origins=["A", "B"], destinations=["Y"],
                     counts=np.array([[2], [1]]), origin_base={"A": 10, "B": 5})
        ea, eb = align_matrices(a, b)
        assert ea.origins == eb.origins == ["A", "B"]
        assert ea.destinations == eb.destinations == ["X", "Y"]
        assert ea.counts.tolist() == [[3, 0], [0, 0]]
        assert eb.counts.tolist() == [[0, 2], [0, 1]]

    def test_intersection_drops_one_sided_origins(self):
        # an origin observed in only one year has no base in the other and
        # cannot carry a percentage there
        a = OdMatrix(origins=["A"], destinations=["X"],
                     counts=np.array([[3]]), origin_base={"A": 10})
        b = OdMatrix(origins=["A", "B"], destinations=["Y"],
                     counts=np.array([[2], [1]]), origin_base={"A": 10, "B": 5})
        ea, eb = align_matrices(a, b, origins="intersection")
        assert ea.origins == eb.origins == ["A"]
        pct_a, pct_b = emigration_pct(ea), emigration_pct(eb)
        assert pct_a[0].tolist() == [30.0, 0.0]
        assert pct_b[0].tolist() == [0.0, 20.0]


class TestCensusValidation:
    def test_equal_tables_give_perfect_correlation(self):
        flows = {"immigration": {"a": 1.0, "b": 4.0, "c": 2.0, "d": 9.0},
                 "emigration": {"a": 3.0, "b": 1.0, "c": 5.0, "d": 2.0}}
        report = census_validation(flows, flows, "regions_scl")
        for direction in ("immigration", "emigration"):
            res = report["directions"][direction]
            assert abs(res["r"] - 1.0) <= 1e-12
            assert res["df"] == 2

    def test_anti_aligned_tables(self):
        model = {"immigration": {"a": 1.0, "b": 2.0, "c": 3.0}}
        census = {"immigration": {k: -v for k, v in model["immigration"].items()}}
        report = census_validation(model, census, "regions_scl")
        assert abs(report["directions"]["immigration"]["r"] + 1.0) <= 1e-12

    def test_insufficient_pairs(self):
        model = {"immigration": {"a": 1.0, "b": 2.0}}
        with pytest.raises(InsufficientData):
            census_validation(model, model, "regions_scl")

    def test_only_shared_labels_pair_up(self):
        model = {"immigration": {"a": 1.0, "b": 2.0, "c": 3.0, "zz": 9.0}}
        census = {"immigration": {"a": 2.0, "b": 4.0, "c": 6.0, "yy": 1.0}}
        report = census_validation(model, census, "comunas_scl")
        assert report["directions"]["immigration"]["n"] == 3
        assert abs(report["directions"]["immigration"]["r"] - 1.0) <= 1e-12


class TestExpansionFactors:
    def test_zero_base_raises(self, small_comunas):
        od = OdMatrix(origins=["C1"], destinations=["V1"],
                      counts=np.array([[0]]), origin_base={"C1": 0})
        with pytest.raises(DegenerateOrigin):
            expansion_factors(od, small_comunas)
