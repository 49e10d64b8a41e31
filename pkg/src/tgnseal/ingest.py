"""CDR-style CSV ingestion, cleaning, and the seeded synthetic generator.

File contracts:

* raw CDR CSV, header ``caller_id,callee_id,unix_ts,direction,duration_s``
  with ``direction`` one of ``in``/``out``;
* canonical event CSV, header ``src,dst,ts,f0,f1`` with dense decimal node
  ids, rows sorted by ``ts``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CdrFormatError, ConfigError
from .events import Event, EventStream

RAW_COLUMNS = ("caller_id", "callee_id", "unix_ts", "direction", "duration_s")
CANONICAL_COLUMNS = ("src", "dst", "ts", "f0", "f1")


@dataclass(frozen=True)
class RawCdrRecord:
    caller: str
    callee: str
    ts: float
    direction: str  # "in" or "out"
    duration_s: float


@dataclass
class ParseReport:
    """Row accounting for one parse pass."""

    total_rows: int = 0
    parsed: int = 0
    skipped: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str):
        self.total_rows += 1
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def num_skipped(self) -> int:
        return sum(self.skipped.values())


class IdMap:
    """Bijective map between external id strings and dense node ids."""

    def __init__(self):
        self._to_dense: dict[str, int] = {}
        self._to_external: list[str] = []

    def __len__(self):
        return len(self._to_external)

    def add(self, external: str) -> int:
        dense = self._to_dense.get(external)
        if dense is None:
            dense = len(self._to_external)
            self._to_dense[external] = dense
            self._to_external.append(external)
        return dense

    def to_dense(self, external: str) -> int:
        return self._to_dense[external]

    def to_external(self, dense: int) -> str:
        return self._to_external[dense]


def parse_cdr_csv(path, schema=RAW_COLUMNS) -> tuple[list[RawCdrRecord], ParseReport]:
    """Read a raw CDR CSV, skipping (and counting) malformed rows.

    A missing or wrong header raises :class:`CdrFormatError`; unreadable
    files raise the underlying :class:`OSError`.
    """
    report = ParseReport()
    records: list[RawCdrRecord] = []
    with open(path, "r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CdrFormatError(f"{path}: empty file, expected header {','.join(schema)}")
        if tuple(h.strip() for h in header) != tuple(schema):
            raise CdrFormatError(
                f"{path}: header {','.join(header)!r} does not match {','.join(schema)!r}"
            )
        for row in reader:
            if not row:
                continue
            if len(row) != len(schema):
                report.skip("wrong_field_count")
                continue
            caller, callee, ts_s, direction, dur_s = (v.strip() for v in row)
            try:
                ts = float(ts_s)
                dur = float(dur_s)
            except ValueError:
                report.skip("non_numeric")
                continue
            if not math.isfinite(ts):
                report.skip("non_finite_ts")
                continue
            if not math.isfinite(dur) or dur < 0:
                report.skip("bad_duration")
                continue
            if direction not in ("in", "out"):
                report.skip("bad_direction")
                continue
            if not caller or not callee:
                report.skip("missing_id")
                continue
            records.append(RawCdrRecord(caller, callee, ts, direction, dur))
            report.total_rows += 1
            report.parsed += 1
    return records, report


def clean_events(records: list[RawCdrRecord], idmap: IdMap | None = None) -> EventStream:
    """Canonicalize raw records into an EventStream.

    Drops self-calls and exact duplicates, densifies ids (first appearance
    in time order), sorts by (ts, arrival order), and assembles per-event
    features f0 = ln(1 + duration_s), f1 = 1 for outgoing / 0 for incoming.
    """
    seen: set[tuple] = set()
    kept: list[tuple[int, RawCdrRecord]] = []
    for arrival, r in enumerate(records):
        if r.caller == r.callee:
            continue
        key = (r.caller, r.callee, r.ts, r.direction, r.duration_s)
        if key in seen:
            continue
        seen.add(key)
        kept.append((arrival, r))

    kept.sort(key=lambda item: (item[1].ts, item[0]))
    if idmap is None:
        idmap = IdMap()
    events = []
    for idx, (_, r) in enumerate(kept):
        src = idmap.add(r.caller)
        dst = idmap.add(r.callee)
        f0 = math.log1p(r.duration_s)
        f1 = 1.0 if r.direction == "out" else 0.0
        events.append(Event(idx=idx, src=src, dst=dst, ts=r.ts, feats=(f0, f1)))
    return EventStream(events=tuple(events), num_nodes=len(idmap), feat_dim=2)


@dataclass(frozen=True)
class SynthParams:
    """Mixture weights and clocks for the synthetic call generator."""

    p_repeat: float = 0.4
    p_triad: float = 0.4
    rate: float = 1.0  # exponential inter-arrival rate, events per second
    mean_duration: float = 60.0

    def validate(self):
        if not (0 <= self.p_repeat and 0 <= self.p_triad and self.p_repeat + self.p_triad <= 1):
            raise ConfigError(f"bad mixture p_repeat={self.p_repeat} p_triad={self.p_triad}")
        if self.rate <= 0 or self.mean_duration < 0:
            raise ConfigError(f"bad clocks rate={self.rate} mean_duration={self.mean_duration}")


def generate_synthetic(
    num_nodes: int,
    num_events: int,
    params: SynthParams = SynthParams(),
    seed: int = 0,
    counters: dict[str, int] | None = None,
) -> EventStream:
    """Seeded event stream mixing partner recurrence, triadic closure, and noise.

    Per event the caller is uniform; the callee comes from repeating a past
    partner (prob ``p_repeat``), calling a neighbor-of-neighbor (``p_triad``),
    or a uniform draw otherwise. A mechanism without candidates falls back to
    uniform. When `counters` is given, the mechanism actually used for each
    event is tallied into it (keys ``repeat``/``triad``/``uniform``).
    """
    if num_nodes < 3:
        raise ConfigError("num_nodes must be >= 3")
    if num_events < 1:
        raise ConfigError("num_events must be >= 1")
    params.validate()

    rng = np.random.default_rng(seed)
    partners: list[set[int]] = [set() for _ in range(num_nodes)]
    events = []
    t = 0.0
    for idx in range(num_events):
        t += float(rng.exponential(1.0 / params.rate))
        src = int(rng.integers(num_nodes))
        u = float(rng.random())
        dst = -1
        mech = "uniform"
        if u < params.p_repeat:
            cand = sorted(partners[src])
            if cand:
                dst = int(cand[rng.integers(len(cand))])
                mech = "repeat"
        elif u < params.p_repeat + params.p_triad:
            two_hop: set[int] = set()
            for mid in partners[src]:
                two_hop |= partners[mid]
            two_hop.discard(src)
            cand = sorted(two_hop)
            if cand:
                dst = int(cand[rng.integers(len(cand))])
                mech = "triad"
        if dst < 0:
            draw = int(rng.integers(num_nodes - 1))
            dst = draw + 1 if draw >= src else draw
            mech = "uniform"
        if counters is not None:
            counters[mech] = counters.get(mech, 0) + 1
        partners[src].add(dst)
        partners[dst].add(src)
        duration = float(rng.exponential(params.mean_duration))
        direction = float(rng.integers(2))
        events.append(
            Event(idx=idx, src=src, dst=dst, ts=t, feats=(math.log1p(duration), direction))
        )
    return EventStream(events=tuple(events), num_nodes=num_nodes, feat_dim=2)


def write_event_csv(stream: EventStream, path):
    """Write the canonical `src,dst,ts,f0,f1` CSV (rows already ts-sorted)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CANONICAL_COLUMNS) + "\n")
        for e in stream.events:
            fh.write(f"{e.src},{e.dst},{e.ts!r},{e.feats[0]!r},{e.feats[1]!r}\n")


def read_event_csv(path) -> EventStream:
    """Read a canonical event CSV. num_nodes is taken as max id + 1."""
    events = []
    with open(path, "r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CdrFormatError(f"{path}: empty file, expected header {','.join(CANONICAL_COLUMNS)}")
        if tuple(h.strip() for h in header) != CANONICAL_COLUMNS:
            raise CdrFormatError(f"{path}: not a canonical event CSV")
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                src, dst, ts, f0, f1 = row
                events.append(
                    Event(idx=len(events), src=int(src), dst=int(dst), ts=float(ts),
                          feats=(float(f0), float(f1)))
                )
            except ValueError as exc:
                raise CdrFormatError(f"{path}: bad row {i + 2}: {row!r}") from exc
    num_nodes = max((max(e.src, e.dst) for e in events), default=-1) + 1
    return EventStream(events=tuple(events), num_nodes=num_nodes, feat_dim=2)
