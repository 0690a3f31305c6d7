"""Command-line pipeline: synth -> homes -> migrate / indices -> analyze -> report.

Every flag can also come from a JSON config file (--config); explicit
flags win over file values.  Exit codes: 0 ok, 2 validation problem,
3 pipeline stage order, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import IoError, PipelineOrderError, XdrflowError
from .pipeline import (run_analyze, run_convert, run_homes, run_indices,
                       run_migrate, run_report, run_synth)
from .synth import ScenarioConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PIPELINE_ORDER = 3
EXIT_IO = 4


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the optional JSON config file."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        file_values = json.load(fh)
    for key, value in file_values.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _window_kwargs(args) -> dict:
    return {"year": int(args.window_year),
            "tz_offset": int(args.tz_offset if args.tz_offset is not None else -4),
            "baseline_week": args.baseline_week}


def _add_window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-year", type=int, default=None,
                   help="study year (window runs Mar 1 to Nov 30)")
    p.add_argument("--tz-offset", type=int, default=None,
                   help="hours added to UTC for local time (default -4)")
    p.add_argument("--baseline-week", default=None,
                   help="override baseline week by its Monday (ISO date)")


def _require_year(args) -> None:
    if args.window_year is None:
        raise XdrflowError("--window-year is required (flag or config file)")


def cmd_synth(args) -> int:
    cfg = ScenarioConfig.from_json(args.scenario)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(args.seed))
        cfg.validate()
    paths = run_synth(cfg, args.out, fmt=args.format or "csv",
                      threads=int(args.threads or 1))
    print(json.dumps(paths, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_homes(args) -> int:
    _require_year(args)
    out = run_homes(args.xdr, args.antennas, args.out,
                    comunas_path=args.comunas,
                    min_night_events=int(args.min_night_events or 3),
                    max_drop_fraction=float(args.max_drop or 0.10),
                    threads=int(args.threads or 1), **_window_kwargs(args))
    print(out)
    return EXIT_OK


def cmd_migrate(args) -> int:
    _require_year(args)
    out = run_migrate(args.homes, args.comunas, args.out, **_window_kwargs(args))
    print(out)
    return EXIT_OK


def cmd_indices(args) -> int:
    _require_year(args)
    out = run_indices(args.xdr, args.antennas, args.homes, args.quarantines,
                      args.comunas, args.out,
                      max_drop_fraction=float(args.max_drop or 0.10),
                      threads=int(args.threads or 1), **_window_kwargs(args))
    print(out)
    return EXIT_OK


def _parse_migration_args(values: list[str]) -> dict[int, Path]:
    out: dict[int, Path] = {}
    for value in values:
        if "=" in value:
            year_s, path_s = value.split("=", 1)
            year = int(year_s)
        else:
            path_s = value
            manifest = Path(path_s) / "manifest.json"
            if not manifest.exists():
                raise PipelineOrderError(
                    f"{path_s} has no manifest; run `xdrflow migrate` first "
                    f"or pass YEAR=DIR", required_command="migrate")
            with open(manifest) as fh:
                year = int(json.load(fh)["config"]["year"])
        if year in out:
            raise XdrflowError(f"duplicate migration year {year}")
        out[year] = Path(path_s)
    return out


def cmd_analyze(args) -> int:
    dirs = _parse_migration_args(args.migration or [])
    out = run_analyze(dirs, args.comunas, args.out,
                      census_path=args.census, indices_dir=args.indices)
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    out = run_report(args.analysis, args.out)
    print(out)
    return EXIT_OK


def cmd_convert(args) -> int:
    _require_year(args)
    kw = _window_kwargs(args)
    kw.pop("baseline_week")
    stats = run_convert(args.infile, args.out, args.format or "csv",
                        antennas_path=args.antennas, comunas_path=args.comunas, **kw)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xdrflow",
        description="Reconstruct internal migration and daily mobility "
                    "from anonymized cellular event logs.")
    parser.add_argument("--config", default=None,
                        help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario bundle")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default=None)
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("homes", help="infer weekly home comunas")
    p.add_argument("--xdr", required=True)
    p.add_argument("--antennas", required=True)
    p.add_argument("--comunas", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--min-night-events", type=int, default=None)
    p.add_argument("--max-drop", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    _add_window_flags(p)
    p.set_defaults(func=cmd_homes)

    p = sub.add_parser("migrate", help="classify long-term relocations")
    p.add_argument("--homes", required=True)
    p.add_argument("--comunas", required=True)
    p.add_argument("--out", required=True)
    _add_window_flags(p)
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("indices", help="daily mobility index series")
    p.add_argument("--xdr", required=True)
    p.add_argument("--antennas", required=True)
    p.add_argument("--homes", required=True)
    p.add_argument("--quarantines", required=True)
    p.add_argument("--comunas", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-drop", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    _add_window_flags(p)
    p.set_defaults(func=cmd_indices)

    p = sub.add_parser("analyze", help="flow analytics over migrate outputs")
    p.add_argument("--migration", action="append", required=True,
                   metavar="[YEAR=]DIR", help="migrate-stage directory, repeatable")
    p.add_argument("--comunas", required=True)
    p.add_argument("--census", default=None, help="census flow CSV for validation")
    p.add_argument("--indices", default=None, help="indices-stage directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="consolidated markdown report")
    p.add_argument("--analysis", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("convert", help="re-encode an XDR file (csv <-> bin)")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default=None)
    p.add_argument("--antennas", required=True)
    p.add_argument("--comunas", default=None)
    _add_window_flags(p)
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = _merge_config(parser.parse_args(argv))
    try:
        return args.func(args)
    except PipelineOrderError as exc:
        print(f"pipeline order error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE_ORDER
    except IoError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except XdrflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
