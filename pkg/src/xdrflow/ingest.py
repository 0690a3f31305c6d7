"""Streaming event-log readers and the static reference tables.

The XDR reader never buffers a whole file: it moves through fixed-size
byte chunks and yields columnar batches.  Two encodings are supported,
CSV for interchange and a fixed-width binary record for throughput.
Malformed rows, unknown antennas, and out-of-window timestamps are
counted and dropped, never fatal; a row that is bad in several ways is
counted once, in the first failing category of the order
malformed -> out-of-window -> unknown-antenna.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .core import Antenna, ComunaProfile, StudyWindow, XdrEvent, day_index
from .errors import IoError, SchemaError, ValidationError

XDR_CSV_HEADER = "device_id,timestamp,antenna_id"
XDR_BINARY_MAGIC = b"XDRBIN01"
COMUNA_CSV_HEADER = ("comuna_id,name,region_id,in_scl,income_decile,poverty_pct,"
                     "rurality_pct,population,area_km2,icvu,centroid_lat,centroid_lon")
ANTENNA_CSV_HEADER = "antenna_id,lat,lon,comuna_id"
QUARANTINE_CSV_HEADER = "comuna_id,start_date,end_date"

_BIN_DTYPE = np.dtype([("device", "<u8"), ("t_off", "<u4"), ("antenna", "<u4")])

Source = Union[str, Path, io.BufferedIOBase]


# ---------------------------------------------------------------------------
# ingest accounting
# ---------------------------------------------------------------------------

@dataclass
class IngestStats:
    events_read: int = 0
    events_dropped_malformed: int = 0
    events_dropped_unknown_antenna: int = 0
    events_dropped_out_of_window: int = 0

    @property
    def events_kept(self) -> int:
        return (self.events_read - self.events_dropped_malformed
                - self.events_dropped_unknown_antenna - self.events_dropped_out_of_window)

    @property
    def drop_fraction(self) -> float:
        if self.events_read == 0:
            return 0.0
        return 1.0 - self.events_kept / self.events_read

    def __add__(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(
            self.events_read + other.events_read,
            self.events_dropped_malformed + other.events_dropped_malformed,
            self.events_dropped_unknown_antenna + other.events_dropped_unknown_antenna,
            self.events_dropped_out_of_window + other.events_dropped_out_of_window,
        )

    def to_dict(self) -> dict:
        return {
            "events_read": self.events_read,
            "events_dropped_malformed": self.events_dropped_malformed,
            "events_dropped_unknown_antenna": self.events_dropped_unknown_antenna,
            "events_dropped_out_of_window": self.events_dropped_out_of_window,
            "events_kept": self.events_kept,
        }


def ensure_drop_rate(stats: IngestStats, max_fraction: float = 0.10) -> None:
    """Fail a run whose drop rate exceeds the configured ceiling."""
    if stats.events_read and stats.drop_fraction > max_fraction:
        raise ValidationError(
            f"{stats.drop_fraction:.1%} of rows dropped "
            f"(ceiling {max_fraction:.0%}): {stats.to_dict()}")


# ---------------------------------------------------------------------------
# reference tables
# ---------------------------------------------------------------------------

class ComunaTable:
    """Comuna profiles in file order, with integer codes for array joins."""

    def __init__(self, profiles: Sequence[ComunaProfile]):
        self.profiles: dict[str, ComunaProfile] = {}
        for p in profiles:
            if p.comuna_id in self.profiles:
                raise SchemaError(f"duplicate comuna_id {p.comuna_id}")
            p.validate()
            self.profiles[p.comuna_id] = p
        self.ids: list[str] = list(self.profiles)
        self._code = {cid: i for i, cid in enumerate(self.ids)}
        scl_regions = {p.region_id for p in profiles if p.in_scl}
        if len(scl_regions) > 1:
            raise ValidationError(f"capital comunas span several regions: {sorted(scl_regions)}")
        self.scl_region: Optional[str] = scl_regions.pop() if scl_regions else None

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[ComunaProfile]:
        return iter(self.profiles.values())

    def __contains__(self, comuna_id: str) -> bool:
        return comuna_id in self.profiles

    def __getitem__(self, comuna_id: str) -> ComunaProfile:
        return self.profiles[comuna_id]

    def code_of(self, comuna_id: str) -> int:
        return self._code[comuna_id]

    def id_of(self, code: int) -> str:
        return self.ids[code]

    @property
    def scl_ids(self) -> list[str]:
        return [p.comuna_id for p in self if p.in_scl]

    @property
    def region_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self:
            seen.setdefault(p.region_id, None)
        return list(seen)

    def in_region(self, region_id: str) -> list[ComunaProfile]:
        return [p for p in self if p.region_id == region_id]

    def region_codes(self) -> np.ndarray:
        """Region index (into ``region_ids``) per comuna code."""
        rix = {r: i for i, r in enumerate(self.region_ids)}
        return np.array([rix[p.region_id] for p in self], dtype=np.int32)


class AntennaRegistry:
    """Antenna lookup with vectorized antenna -> comuna resolution."""

    def __init__(self, antennas: Sequence[Antenna], comunas: Optional[ComunaTable] = None):
        self.antennas: dict[int, Antenna] = {}
        for a in antennas:
            if a.antenna_id in self.antennas:
                raise SchemaError(f"duplicate antenna_id {a.antenna_id}")
            a.validate()
            if comunas is not None and a.comuna_id not in comunas:
                raise ValidationError(
                    f"antenna {a.antenna_id} references unknown comuna {a.comuna_id}")
            self.antennas[a.antenna_id] = a
        if comunas is not None:
            self.comuna_ids = list(comunas.ids)
        else:
            seen: dict[str, None] = {}
            for a in antennas:
                seen.setdefault(a.comuna_id, None)
            self.comuna_ids = list(seen)
        code = {cid: i for i, cid in enumerate(self.comuna_ids)}
        ids = np.fromiter(self.antennas.keys(), dtype=np.uint32, count=len(self.antennas))
        order = np.argsort(ids, kind="stable")
        self._ids_sorted = ids[order]
        comuna_codes = np.array([code[a.comuna_id] for a in self.antennas.values()],
                                dtype=np.int32)
        self._comuna_sorted = comuna_codes[order]

    def __len__(self) -> int:
        return len(self.antennas)

    def __contains__(self, antenna_id: int) -> bool:
        return antenna_id in self.antennas

    def get(self, antenna_id: int) -> Optional[Antenna]:
        return self.antennas.get(antenna_id)

    def comuna_of(self, antenna_id: int) -> str:
        return self.antennas[antenna_id].comuna_id

    def resolve(self, antenna_array: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(comuna codes, known mask) for an array of antenna ids."""
        a = antenna_array.astype(np.uint32, copy=False)
        if self._ids_sorted.size == 0:
            return np.full(a.size, -1, dtype=np.int32), np.zeros(a.size, dtype=bool)
        pos = np.searchsorted(self._ids_sorted, a)
        pos_c = np.minimum(pos, self._ids_sorted.size - 1)
        known = self._ids_sorted[pos_c] == a
        codes = np.where(known, self._comuna_sorted[pos_c], -1).astype(np.int32)
        return codes, known


@dataclass
class QuarantineSchedule:
    """Inclusive per-comuna lockdown intervals, merged and sorted."""

    intervals: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    merged_overlaps: int = 0

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, dt.date, dt.date]]) -> "QuarantineSchedule":
        raw: dict[str, list[tuple[int, int]]] = {}
        for comuna, start, end in rows:
            if end < start:
                raise ValidationError(f"quarantine for {comuna} ends before it starts")
            raw.setdefault(comuna, []).append((day_index(start), day_index(end)))
        merged: dict[str, list[tuple[int, int]]] = {}
        overlaps = 0
        for comuna, ivs in raw.items():
            ivs.sort()
            out: list[tuple[int, int]] = []
            for s, e in ivs:
                if out and s <= out[-1][1]:
                    overlaps += 1
                    out[-1] = (out[-1][0], max(out[-1][1], e))
                else:
                    out.append((s, e))
            merged[comuna] = out
        return cls(intervals=merged, merged_overlaps=overlaps)

    def in_quarantine(self, comuna_id: str, when: Union[dt.date, int]) -> bool:
        day = day_index(when) if isinstance(when, dt.date) else int(when)
        ivs = self.intervals.get(comuna_id)
        if not ivs:
            return False
        i = bisect_right(ivs, (day, np.iinfo(np.int64).max)) - 1
        return i >= 0 and ivs[i][0] <= day <= ivs[i][1]

    def day_mask(self, comuna_id: str, day_start: int, day_end: int) -> np.ndarray:
        """Boolean mask over [day_start, day_end] inclusive."""
        mask = np.zeros(day_end - day_start + 1, dtype=bool)
        for s, e in self.intervals.get(comuna_id, []):
            lo = max(s, day_start)
            hi = min(e, day_end)
            if lo <= hi:
                mask[lo - day_start:hi - day_start + 1] = True
        return mask


# ---------------------------------------------------------------------------
# table loaders / writers
# ---------------------------------------------------------------------------

def _open_text(path) -> io.TextIOWrapper:
    try:
        return open(path, "r", newline="")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc


def _check_header(actual: Sequence[str], expected: str, path) -> None:
    if list(actual) != expected.split(","):
        raise SchemaError(f"{path}: expected header {expected!r}, got {','.join(actual)!r}")


def load_comunas(path) -> ComunaTable:
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty comuna table")
        _check_header(header, COMUNA_CSV_HEADER, path)
        profiles = []
        for row in reader:
            if len(row) != 12:
                raise SchemaError(f"{path}: comuna row with {len(row)} fields: {row}")
            (cid, name, region, in_scl, decile, poverty, rurality,
             pop, area, icvu, clat, clon) = row
            if in_scl.strip().lower() not in ("true", "false", "0", "1"):
                raise ValidationError(f"{path}: bad in_scl flag {in_scl!r} for {cid}")
            try:
                profiles.append(ComunaProfile(
                    comuna_id=cid, name=name, region_id=region,
                    in_scl=in_scl.strip().lower() in ("true", "1"),
                    income_decile=float(decile), poverty_pct=float(poverty),
                    rurality_pct=float(rurality), population=float(pop),
                    area_km2=float(area), icvu=float(icvu) if icvu.strip() else None,
                    centroid_lat=float(clat), centroid_lon=float(clon)))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad numeric field for {cid}: {exc}") from exc
    return ComunaTable(profiles)


def write_comunas_csv(path, profiles: Iterable[ComunaProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMUNA_CSV_HEADER.split(","))
        for p in profiles:
            w.writerow([p.comuna_id, p.name, p.region_id,
                        "true" if p.in_scl else "false",
                        repr(float(p.income_decile)), repr(float(p.poverty_pct)),
                        repr(float(p.rurality_pct)), repr(float(p.population)),
                        repr(float(p.area_km2)),
                        "" if p.icvu is None else repr(float(p.icvu)),
                        repr(float(p.centroid_lat)), repr(float(p.centroid_lon))])


def load_antennas(path, comunas: Optional[ComunaTable] = None) -> AntennaRegistry:
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty antenna table")
        _check_header(header, ANTENNA_CSV_HEADER, path)
        antennas = []
        for row in reader:
            if len(row) != 4:
                raise SchemaError(f"{path}: antenna row with {len(row)} fields: {row}")
            try:
                aid = int(row[0])
                if not 0 <= aid <= 0xFFFF_FFFF:
                    raise ValueError(f"antenna id {aid} does not fit 32 bits")
                antennas.append(Antenna(antenna_id=aid, lat=float(row[1]),
                                        lon=float(row[2]), comuna_id=row[3]))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad antenna row {row}: {exc}") from exc
    return AntennaRegistry(antennas, comunas)


def write_antennas_csv(path, antennas: Iterable[Antenna]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANTENNA_CSV_HEADER.split(","))
        for a in antennas:
            w.writerow([a.antenna_id, repr(float(a.lat)), repr(float(a.lon)),
                        a.comuna_id])


def load_quarantines(path) -> QuarantineSchedule:
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty quarantine table")
        _check_header(header, QUARANTINE_CSV_HEADER, path)
        rows = []
        for row in reader:
            if len(row) != 3:
                raise SchemaError(f"{path}: quarantine row with {len(row)} fields: {row}")
            try:
                rows.append((row[0], dt.date.fromisoformat(row[1]),
                             dt.date.fromisoformat(row[2])))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad date in {row}: {exc}") from exc
    return QuarantineSchedule.from_rows(rows)


def write_quarantines_csv(path, rows: Iterable[tuple[str, dt.date, dt.date]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUARANTINE_CSV_HEADER.split(","))
        for comuna, start, end in rows:
            w.writerow([comuna, start.isoformat(), end.isoformat()])


# ---------------------------------------------------------------------------
# XDR event streams
# ---------------------------------------------------------------------------

class XdrBatch(NamedTuple):
    """One columnar chunk of valid events, in file order."""

    device: np.ndarray       # uint64
    ts_utc: np.ndarray       # int64 epoch seconds
    antenna: np.ndarray      # uint32
    comuna_code: np.ndarray  # int32 index into the registry's comuna list

    def __len__(self) -> int:
        return self.device.size


class XdrReader:
    """Chunked XDR parser over a CSV or binary source.

    ``stats`` accumulates while batches are consumed and is complete once
    the iterator is exhausted.
    """

    def __init__(self, source: Source, window: StudyWindow, registry: AntennaRegistry,
                 chunk_bytes: int = 8 << 20):
        self.window = window
        self.registry = registry
        self.chunk_bytes = int(chunk_bytes)
        self.stats = IngestStats()
        self._source = source

    # -- plumbing ------------------------------------------------------------

    def _open(self):
        src = self._source
        if hasattr(src, "read"):
            return src, False
        try:
            return open(src, "rb"), True
        except OSError as exc:
            raise IoError(f"cannot open {src}: {exc}") from exc

    def batches(self) -> Iterator[XdrBatch]:
        fh, owned = self._open()
        try:
            head = fh.read(len(XDR_BINARY_MAGIC))
            if head == XDR_BINARY_MAGIC:
                yield from self._binary_batches(fh)
            else:
                yield from self._csv_batches(fh, head)
        finally:
            if owned:
                fh.close()

    def events(self) -> Iterator[XdrEvent]:
        for batch in self.batches():
            for d, t, a in zip(batch.device.tolist(), batch.ts_utc.tolist(),
                               batch.antenna.tolist()):
                yield XdrEvent(device_id=d, timestamp=t, antenna_id=a)

    # -- CSV -----------------------------------------------------------------

    def _csv_batches(self, fh, head: bytes) -> Iterator[XdrBatch]:
        buf = head + fh.read(max(self.chunk_bytes - len(head), 1))
        nl = buf.find(b"\n")
        while nl < 0:
            more = fh.read(self.chunk_bytes)
            if not more:
                break
            buf += more
            nl = buf.find(b"\n")
        header = buf[:nl] if nl >= 0 else buf
        if header.rstrip(b"\r").decode("utf-8", "replace") != XDR_CSV_HEADER:
            raise SchemaError(f"XDR CSV header mismatch: {header[:80]!r}")
        buf = buf[nl + 1:] if nl >= 0 else b""

        while True:
            cut = buf.rfind(b"\n")
            if cut >= 0:
                block, buf = buf[:cut + 1], buf[cut + 1:]
                batch = self._parse_csv_block(block)
                if len(batch):
                    yield batch
            chunk = fh.read(self.chunk_bytes)
            if not chunk:
                break
            buf += chunk
        if buf:
            batch = self._parse_csv_block(buf + b"\n")
            if len(batch):
                yield batch

    def _parse_csv_block(self, block: bytes) -> XdrBatch:
        nlines = block.count(b"\n")
        self.stats.events_read += nlines
        try:
            # the fast path must not see anything the column parser could
            # misread: only digit/comma/newline bytes and exactly two commas
            # per row, otherwise pandas may fold extra fields into an index
            if block.translate(None, delete=b"0123456789,\r\n") != b"":
                raise ValueError("non-numeric bytes in block")
            if block.count(b",") != 2 * nlines:
                raise ValueError("field count imbalance")
            df = pd.read_csv(io.BytesIO(block), header=None,
                             names=("device", "ts", "antenna"),
                             dtype={"device": np.uint64, "ts": np.int64, "antenna": np.int64},
                             engine="c", na_filter=False)
            if len(df) != nlines:
                raise ValueError("short parse")
            device = df["device"].to_numpy()
            ts = df["ts"].to_numpy()
            antenna = df["antenna"].to_numpy()
            bad = (antenna < 0) | (antenna > 0xFFFF_FFFF) | (ts < 0)
            if bad.any():
                self.stats.events_dropped_malformed += int(bad.sum())
                good = ~bad
                device, ts, antenna = device[good], ts[good], antenna[good]
            antenna = antenna.astype(np.uint32)
        except (ValueError, OverflowError, pd.errors.ParserError):
            device, ts, antenna = self._parse_csv_block_strict(block, nlines)
        return self._filter(device, ts, antenna)

    def _parse_csv_block_strict(self, block: bytes, nlines: int):
        """Exact per-line fallback for blocks with malformed rows."""
        ds: list[int] = []
        ts: list[int] = []
        As: list[int] = []
        malformed = 0
        for line in block.split(b"\n")[:nlines]:
            parts = line.rstrip(b"\r").split(b",")
            if len(parts) != 3:
                malformed += 1
                continue
            try:
                d = int(parts[0])
                t = int(parts[1])
                a = int(parts[2])
            except ValueError:
                malformed += 1
                continue
            if (parts[0].lstrip(b"0123456789") or parts[1].lstrip(b"0123456789")
                    or parts[2].lstrip(b"0123456789")):
                malformed += 1
                continue
            if d > 0xFFFF_FFFF_FFFF_FFFF or a > 0xFFFF_FFFF or t > 2**63 - 1:
                malformed += 1
                continue
            ds.append(d)
            ts.append(t)
            As.append(a)
        self.stats.events_dropped_malformed += malformed
        return (np.array(ds, dtype=np.uint64), np.array(ts, dtype=np.int64),
                np.array(As, dtype=np.uint32))

    # -- binary ----------------------------------------------------------------

    def _binary_batches(self, fh) -> Iterator[XdrBatch]:
        rec = _BIN_DTYPE.itemsize
        chunk_bytes = (self.chunk_bytes // rec) * rec
        window_len = self.window.end_utc - self.window.start_utc
        carry = b""
        while True:
            chunk = fh.read(chunk_bytes)
            if not chunk:
                break
            data = carry + chunk
            usable = (len(data) // rec) * rec
            carry = data[usable:]
            if not usable:
                continue
            arr = np.frombuffer(data[:usable], dtype=_BIN_DTYPE)
            self.stats.events_read += arr.size
            in_window = arr["t_off"] < window_len
            self.stats.events_dropped_out_of_window += int(arr.size - in_window.sum())
            arr = arr[in_window]
            ts = self.window.start_utc + arr["t_off"].astype(np.int64)
            batch = self._filter_known(arr["device"].copy(), ts, arr["antenna"].copy())
            if len(batch):
                yield batch
        if carry:
            self.stats.events_read += 1
            self.stats.events_dropped_malformed += 1

    # -- shared filters ---------------------------------------------------------

    def _filter(self, device, ts, antenna) -> XdrBatch:
        in_window = (ts >= self.window.start_utc) & (ts < self.window.end_utc)
        self.stats.events_dropped_out_of_window += int(ts.size - in_window.sum())
        return self._filter_known(device[in_window], ts[in_window], antenna[in_window])

    def _filter_known(self, device, ts, antenna) -> XdrBatch:
        codes, known = self.registry.resolve(antenna)
        self.stats.events_dropped_unknown_antenna += int(antenna.size - known.sum())
        return XdrBatch(device=device[known], ts_utc=ts[known],
                        antenna=antenna[known], comuna_code=codes[known])


def parse_xdr(source: Source, window: StudyWindow,
              registry: AntennaRegistry) -> tuple[Iterator[XdrEvent], IngestStats]:
    """Event stream plus its drop accounting.

    The returned stats object fills in as the stream is consumed and is
    final once the iterator is exhausted.
    """
    reader = XdrReader(source, window, registry)
    return reader.events(), reader.stats


def read_all_batches(source: Source, window: StudyWindow, registry: AntennaRegistry,
                     chunk_bytes: int = 8 << 20) -> tuple[list[XdrBatch], IngestStats]:
    reader = XdrReader(source, window, registry, chunk_bytes=chunk_bytes)
    batches = list(reader.batches())
    return batches, reader.stats


# ---------------------------------------------------------------------------
# XDR writers
# ---------------------------------------------------------------------------

def write_xdr_csv(path, arrays: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> None:
    """Write (device, ts_utc, antenna) array triples as XDR CSV."""
    with open(path, "wb") as fh:
        fh.write(XDR_CSV_HEADER.encode() + b"\n")
        for device, ts, antenna in arrays:
            df = pd.DataFrame({"d": device.astype(np.uint64),
                               "t": ts.astype(np.int64),
                               "a": antenna.astype(np.uint32)})
            df.to_csv(fh, header=False, index=False, lineterminator="\n")


def write_xdr_binary(path, window: StudyWindow,
                     arrays: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> None:
    """Write (device, ts_utc, antenna) array triples as XDR binary."""
    with open(path, "wb") as fh:
        fh.write(XDR_BINARY_MAGIC)
        for device, ts, antenna in arrays:
            off = np.asarray(ts, dtype=np.int64) - window.start_utc
            if off.size and (off.min() < 0 or off.max() > 0xFFFF_FFFF):
                raise ValidationError("timestamp offset does not fit the binary format")
            rec = np.empty(device.size, dtype=_BIN_DTYPE)
            rec["device"] = device
            rec["t_off"] = off.astype(np.uint32)
            rec["antenna"] = antenna
            fh.write(rec.tobytes())
