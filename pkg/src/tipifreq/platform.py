"""Counter sources and frequency actuators.

A :class:`PlatformPort` hands out per-interval counter deltas and accepts
frequency pairs.  A real backend would read TOR_INSERT, INST_RETIRED and the
RAPL package-energy MSRs (for example through msr-safe) and write the
core/uncore ratio limits; none is provided here.  This module ships the
trace-replay backend and a recording wrapper.

Trace files are CSV with header::

    elapsed_us,tor_local,tor_remote,instructions,energy_uj,cf_mhz,uf_mhz

``elapsed_us`` is the cumulative timestamp at the end of each interval; the
other counters are per-interval deltas.  ``cf_mhz``/``uf_mhz`` hold the pair
applied right after the interval was read; they may be blank or absent on
input.
"""

from __future__ import annotations

import abc
import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional, Union

from tipifreq.frequency import FreqPair, FrequencyGrid
from tipifreq.policy import CounterSample

TRACE_FIELDS = ("elapsed_us", "tor_local", "tor_remote", "instructions", "energy_uj", "cf_mhz", "uf_mhz")
_REQUIRED = TRACE_FIELDS[:5]


class EndOfRun(Exception):
    """The counter source has nothing more to report."""


class TraceFormatError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"trace row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class TraceRecord:
    elapsed_us: int  # cumulative
    tor_local: int
    tor_remote: int
    instructions: int
    energy_uj: float
    cf_mhz: Optional[int] = None
    uf_mhz: Optional[int] = None


class PlatformPort(abc.ABC):
    """Source of counter deltas and sink for frequency decisions."""

    core_grid: FrequencyGrid
    uncore_grid: FrequencyGrid

    @abc.abstractmethod
    def read_counters(self) -> CounterSample:
        """Deltas since the previous read; raises :class:`EndOfRun` when exhausted."""

    @abc.abstractmethod
    def apply(self, pair: FreqPair) -> None:
        """Set core and uncore frequency; applying the current pair again is a no-op."""


def _parse_row(row: dict, rownum: int) -> TraceRecord:
    try:
        values = {k: row[k] for k in _REQUIRED}
    except KeyError as exc:
        raise TraceFormatError(rownum, f"missing column {exc.args[0]}") from None
    if any(v is None or v == "" for v in values.values()):
        raise TraceFormatError(rownum, "missing value")
    try:
        rec = TraceRecord(
            elapsed_us=int(values["elapsed_us"]),
            tor_local=int(values["tor_local"]),
            tor_remote=int(values["tor_remote"]),
            instructions=int(values["instructions"]),
            energy_uj=float(values["energy_uj"]),
            cf_mhz=int(row["cf_mhz"]) if row.get("cf_mhz") not in (None, "") else None,
            uf_mhz=int(row["uf_mhz"]) if row.get("uf_mhz") not in (None, "") else None,
        )
    except ValueError as exc:
        raise TraceFormatError(rownum, str(exc)) from None
    if min(rec.tor_local, rec.tor_remote, rec.instructions, rec.elapsed_us) < 0 or rec.energy_uj < 0:
        raise TraceFormatError(rownum, "negative counter")
    return rec


def iter_trace(stream: IO[str]) -> Iterator[TraceRecord]:
    """Yield records lazily; a malformed row raises when it is reached (rows are 1-based)."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return
    missing = [f for f in _REQUIRED if f not in reader.fieldnames]
    if missing:
        raise TraceFormatError(0, f"header lacks {', '.join(missing)}")
    last = 0
    for rownum, row in enumerate(reader, start=1):
        if None in row:
            raise TraceFormatError(rownum, "too many fields")
        rec = _parse_row(row, rownum)
        if rec.elapsed_us < last:
            raise TraceFormatError(rownum, "elapsed_us went backwards")
        last = rec.elapsed_us
        yield rec


def read_trace(path: Union[str, Path]) -> list[TraceRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(iter_trace(f))


class ReplayPort(PlatformPort):
    def __init__(self, stream: IO[str], core_grid: FrequencyGrid, uncore_grid: FrequencyGrid):
        self.core_grid = core_grid
        self.uncore_grid = uncore_grid
        self._records = iter_trace(stream)
        self._stream = stream
        self._last_elapsed = 0
        self.current: Optional[TraceRecord] = None
        self.applied: list[tuple[Optional[TraceRecord], FreqPair]] = []

    def read_counters(self) -> CounterSample:
        try:
            rec = next(self._records)
        except StopIteration:
            raise EndOfRun from None
        self.current = rec
        delta = rec.elapsed_us - self._last_elapsed
        self._last_elapsed = rec.elapsed_us
        return CounterSample(rec.tor_local, rec.tor_remote, rec.instructions, rec.energy_uj, delta)

    def apply(self, pair: FreqPair) -> None:
        self.applied.append((self.current, pair))

    def mismatches(self) -> list[tuple[int, TraceRecord, FreqPair]]:
        """Rows whose recorded pair differs from what was applied during replay."""
        out = []
        for i, (rec, pair) in enumerate(self.applied):
            if rec is None or rec.cf_mhz is None or rec.uf_mhz is None:
                continue
            got = (self.core_grid.index_to_mhz(pair.cf), self.uncore_grid.index_to_mhz(pair.uf))
            if got != (rec.cf_mhz, rec.uf_mhz):
                out.append((i, rec, pair))
        return out

    def close(self) -> None:
        self._stream.close()


def replay_open(path: Union[str, Path], core_grid: FrequencyGrid, uncore_grid: FrequencyGrid) -> ReplayPort:
    return ReplayPort(open(path, newline="", encoding="utf-8"), core_grid, uncore_grid)


class TraceWriter:
    def __init__(self, sink: IO[str]):
        self._sink = sink
        self._writer = csv.writer(sink, lineterminator="\n")
        self._writer.writerow(TRACE_FIELDS)
        self.rows = 0

    def write(self, rec: TraceRecord) -> None:
        self._writer.writerow(
            [rec.elapsed_us, rec.tor_local, rec.tor_remote, rec.instructions,
             repr(float(rec.energy_uj)), rec.cf_mhz, rec.uf_mhz]
        )
        self.rows += 1


class RecordingPort(PlatformPort):
    """Pass-through port that logs every (sample, applied pair) as a trace row."""

    def __init__(self, inner: PlatformPort, sink: IO[str]):
        self.inner = inner
        self.core_grid = inner.core_grid
        self.uncore_grid = inner.uncore_grid
        self.writer = TraceWriter(sink)
        self._pending: Optional[CounterSample] = None
        self._elapsed = 0

    def read_counters(self) -> CounterSample:
        sample = self.inner.read_counters()
        self._pending = sample
        return sample

    def apply(self, pair: FreqPair) -> None:
        self.inner.apply(pair)
        s = self._pending
        if s is None:
            return
        self._pending = None
        self._elapsed += s.elapsed_us
        self.writer.write(
            TraceRecord(
                self._elapsed, s.tor_local, s.tor_remote, s.instructions, s.energy_uj,
                self.core_grid.index_to_mhz(pair.cf), self.uncore_grid.index_to_mhz(pair.uf),
            )
        )


def record_port(inner: PlatformPort, sink: IO[str]) -> RecordingPort:
    return RecordingPort(inner, sink)


class ListPort(PlatformPort):
    """Replays an in-memory list of samples; handy for tests and scripted scenarios."""

    def __init__(self, samples, core_grid: FrequencyGrid, uncore_grid: FrequencyGrid):
        self.core_grid = core_grid
        self.uncore_grid = uncore_grid
        self._it = iter(samples)
        self.applied: list[FreqPair] = []

    def read_counters(self) -> CounterSample:
        try:
            return next(self._it)
        except StopIteration:
            raise EndOfRun from None

    def apply(self, pair: FreqPair) -> None:
        self.applied.append(pair)


def trace_text(records) -> str:
    buf = io.StringIO()
    w = TraceWriter(buf)
    for r in records:
        w.write(r)
    return buf.getvalue()
