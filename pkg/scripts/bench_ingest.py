#!/usr/bin/env python3
"""Measure single-core XDR ingestion throughput on a synthetic corpus.

Builds a corpus of valid events by repeating one randomized block, then
times a full streaming parse (drop accounting included) for the binary
and CSV encodings.

Usage: python scripts/bench_ingest.py [--events 100000000] [--dir /tmp]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from xdrflow.ingest import XdrReader, write_xdr_binary, write_xdr_csv
from xdrflow.synth import ScenarioConfig, generate_world


def build_block(world, n):
    rng = np.random.default_rng(0)
    ant_ids = np.array(sorted(a.antenna_id for a in world.antennas), dtype=np.uint32)
    device = rng.integers(1, 1 << 40, n).astype(np.uint64)
    offs = rng.integers(0, world.window.end_utc - world.window.start_utc, n)
    ts = (world.window.start_utc + offs).astype(np.int64)
    antenna = rng.choice(ant_ids, n)
    return device, ts, antenna


def bench(path: Path, world, total_events: int) -> float:
    t0 = time.perf_counter()
    reader = XdrReader(path, world.window, world.registry, chunk_bytes=32 << 20)
    kept = sum(len(b) for b in reader.batches())
    elapsed = time.perf_counter() - t0
    assert reader.stats.events_read == total_events, reader.stats.to_dict()
    rate = reader.stats.events_read / elapsed
    print(f"{path.suffix[1:]:>4}: {reader.stats.events_read / 1e6:7.1f}M events, "
          f"{kept / 1e6:7.1f}M kept, {elapsed:6.1f}s, {rate / 1e6:6.2f}M events/s")
    return rate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--events", type=int, default=100_000_000)
    ap.add_argument("--dir", default="/tmp/xdrflow_bench")
    opts = ap.parse_args()
    out = Path(opts.dir)
    out.mkdir(parents=True, exist_ok=True)

    world = generate_world(ScenarioConfig(seed=10, n_comunas=40, n_agents=10))
    block_n = min(5_000_000, opts.events)
    repeats = max(1, opts.events // block_n)
    total = block_n * repeats
    device, ts, antenna = build_block(world, block_n)

    bin_path = out / "bench.bin"
    write_xdr_binary(bin_path, world.window, [(device, ts, antenna)])
    block = bin_path.read_bytes()[8:]
    with open(bin_path, "ab") as fh:
        for _ in range(repeats - 1):
            fh.write(block)
    print(f"binary corpus: {bin_path.stat().st_size / 1e9:.2f} GB")
    bench(bin_path, world, total)
    bin_path.unlink()

    csv_path = out / "bench.csv"
    write_xdr_csv(csv_path, [(device, ts, antenna)])
    body = csv_path.read_bytes().split(b"\n", 1)[1]
    with open(csv_path, "ab") as fh:
        for _ in range(repeats - 1):
            fh.write(body)
    print(f"CSV corpus: {csv_path.stat().st_size / 1e9:.2f} GB")
    bench(csv_path, world, total)
    csv_path.unlink()


if __name__ == "__main__":
    main()
