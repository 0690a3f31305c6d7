#!/usr/bin/env python3
"""Two-year demo: a calm baseline year against a lockdown-shaped year.

Generates paired synthetic scenarios that share one geography (same world
seed), pushes both through the full pipeline, and runs the cross-year
analysis: emigration-vs-income regressions, destination divergence,
rurality shift, gravity ranking, hosting impact, and the daily-mobility
stratification for the lockdown year.

Usage: python scripts/run_demo.py [--out demo_out] [--agents 2000]
"""

import argparse
import json
import sys
from pathlib import Path

from xdrflow.cli import main as xdrflow


def run(args: list[str]) -> None:
    rc = xdrflow([str(a) for a in args])
    if rc != 0:
        sys.exit(rc)


def stage_year(root: Path, scenario: dict, with_indices: bool) -> dict:
    year = scenario["year"]
    ydir = root / str(year)
    (ydir / "scenario.json").parent.mkdir(parents=True, exist_ok=True)
    (ydir / "scenario.json").write_text(json.dumps(scenario, indent=2))
    synth = ydir / "synth"
    run(["synth", "--scenario", ydir / "scenario.json", "--out", synth,
         "--format", "bin"])
    run(["homes", "--xdr", synth / "xdr.bin", "--antennas", synth / "antennas.csv",
         "--comunas", synth / "comunas.csv", "--out", ydir / "homes",
         "--window-year", year])
    run(["migrate", "--homes", ydir / "homes" / "homes.csv",
         "--comunas", synth / "comunas.csv", "--out", ydir / "migrate",
         "--window-year", year])
    if with_indices:
        run(["indices", "--xdr", synth / "xdr.bin",
             "--antennas", synth / "antennas.csv",
             "--homes", ydir / "homes" / "homes.csv",
             "--quarantines", synth / "quarantines.csv",
             "--comunas", synth / "comunas.csv", "--out", ydir / "indices",
             "--window-year", year])
    return {"synth": synth, "migrate": ydir / "migrate",
            "indices": ydir / "indices" if with_indices else None}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--agents", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=99)
    opts = ap.parse_args()
    root = Path(opts.out)

    shared = dict(seed=opts.seed, n_comunas=40, n_agents=opts.agents, n_regions=8)
    baseline = shared | dict(year=2017, migration_rate=0.08,
                             income_migration_coupling=0.0, quarantine_drop=0.0)
    pandemic = shared | dict(year=2020, migration_rate=0.16,
                             income_migration_coupling=0.7, quarantine_drop=0.30)

    y17 = stage_year(root, baseline, with_indices=False)
    y20 = stage_year(root, pandemic, with_indices=True)

    run(["analyze",
         "--migration", f"2017={y17['migrate']}",
         "--migration", f"2020={y20['migrate']}",
         "--comunas", y20["synth"] / "comunas.csv",
         "--indices", y20["indices"],
         "--out", root / "analysis"])
    run(["report", "--analysis", root / "analysis", "--out", root / "report.md"])

    summary = json.loads((root / "analysis" / "summary.json").read_text())
    print()
    print("emigration-vs-decile r2 by year:")
    for year, fit in sorted(summary["emigration_vs_decile"].items()):
        print(f"  {year}: r2={fit['r2']:.3f} slope={fit['slope']:.3f}")
    if "quintile_share_mobility" in summary:
        print(f"top-quintile share of mobility change: "
              f"{summary['quintile_share_mobility']:.1f}%")
    print(f"full report: {root / 'report.md'}")


if __name__ == "__main__":
    main()
