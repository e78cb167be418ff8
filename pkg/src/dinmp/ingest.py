"""Behavior-log ingestion: key-vector aggregation, bucketing and batching."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DAY = 86400
DEFAULT_TIME_BOUNDARIES = tuple(d * DAY for d in (1, 2, 4, 7, 14, 30, 60, 90, 180))
DEFAULT_COUNT_BOUNDARIES = (2, 4, 8, 16, 32)

EVENT_HEADER = ["user_id", "key_id", "category_id", "timestamp", "event_type"]
SAMPLE_HEADER = ["user_id", "target_key", "target_category", "label", "reference_time", "other_features"]


class IngestError(ValueError):
    """Malformed input data; ``line`` is 1-based within the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class EventType(str, enum.Enum):
    CLICK = "click"
    BUY = "buy"
    CART = "cart"
    FAV = "fav"


EVENT_CODES = {t: i for i, t in enumerate(EventType)}


@dataclass(frozen=True)
class BehaviorEvent:
    user_id: int
    key_id: int
    category_id: int
    timestamp: int
    event_type: EventType = EventType.CLICK

    def __post_init__(self):
        if min(self.user_id, self.key_id, self.category_id) < 0:
            raise IngestError(f"negative id in {self}")
        if self.timestamp < 0:
            raise IngestError(f"negative timestamp in {self}")


@dataclass(frozen=True)
class KeyVectorEntry:
    key_id: int
    last_time: int
    count: int
    category_id: int


@dataclass(frozen=True)
class TimeBucketScheme:
    """Boundaries are ages in seconds before the reference time."""

    boundaries: tuple[int, ...] = DEFAULT_TIME_BOUNDARIES

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if not b:
            raise ValueError("time bucket scheme needs at least one boundary")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError(f"time boundaries must be strictly increasing: {b}")

    @property
    def n_buckets(self) -> int:
        return len(self.boundaries) + 1

    def labels(self) -> list[str]:
        edges = ["0", *(_fmt_duration(x) for x in self.boundaries)]
        out = [f"[{a},{b})" for a, b in zip(edges, edges[1:])]
        out.append(f">={edges[-1]}")
        return out


@dataclass(frozen=True)
class CountBucketScheme:
    boundaries: tuple[int, ...] = DEFAULT_COUNT_BOUNDARIES

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if not b or b[0] < 2:
            raise ValueError("count boundaries must be nonempty with first boundary >= 2")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError(f"count boundaries must be strictly increasing: {b}")

    @property
    def n_buckets(self) -> int:
        return len(self.boundaries) + 1


def _fmt_duration(seconds: int) -> str:
    if seconds % DAY == 0:
        return f"{seconds // DAY}d"
    if seconds % 3600 == 0:
        return f"{seconds // 3600}h"
    if seconds % 60 == 0:
        return f"{seconds // 60}m"
    return f"{seconds}s"


# ---------------------------------------------------------------------------
# aggregation and bucketing
# ---------------------------------------------------------------------------


def aggregate_events(
    events: Iterable[BehaviorEvent],
    reference_time: int,
    type_filter: Iterable[EventType | str] = (EventType.CLICK,),
) -> list[KeyVectorEntry]:
    """Collapse one user's raw events into key-vector entries sorted by key.

    Events at or after ``reference_time`` are dropped.  When a key shows up
    under several categories the most recent occurrence wins (later input
    order breaks timestamp ties).
    """
    wanted = {EventType(t) for t in type_filter}
    acc: dict[int, list[int]] = {}
    for ev in events:
        if EventType(ev.event_type) not in wanted or ev.timestamp >= reference_time:
            continue
        cur = acc.get(ev.key_id)
        if cur is None:
            acc[ev.key_id] = [ev.timestamp, 1, ev.category_id]
            continue
        cur[1] += 1
        if ev.timestamp >= cur[0]:
            cur[0] = ev.timestamp
            cur[2] = ev.category_id
    return [KeyVectorEntry(k, t, c, cat) for k, (t, c, cat) in sorted(acc.items())]


def assign_time_bucket(last_time, reference_time, scheme: TimeBucketScheme):
    """Bucket index = number of boundaries strictly below the age.

    Works elementwise on arrays as well as on scalars.
    """
    delta = np.asarray(reference_time, dtype=np.int64) - np.asarray(last_time, dtype=np.int64)
    if np.any(delta <= 0):
        raise IngestError("behavior at or after the reference time")
    k = np.searchsorted(np.asarray(scheme.boundaries, dtype=np.int64), delta, side="left")
    return int(k) if np.ndim(k) == 0 else k.astype(np.int64)


def assign_count_bucket(count, scheme: CountBucketScheme):
    """Bucket index = number of boundaries <= count."""
    c = np.asarray(count, dtype=np.int64)
    if np.any(c < 1):
        raise IngestError("count must be >= 1")
    k = np.searchsorted(np.asarray(scheme.boundaries, dtype=np.int64), c, side="right")
    return int(k) if np.ndim(k) == 0 else k.astype(np.int64)


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

TIME_COL, COUNT_COL, CAT_COL = 0, 1, 2


@dataclass
class SparseBatch:
    """Triplet (I, J, V) batch; sample i owns entries [row_offsets[i], row_offsets[i+1]).

    ``values`` columns are (time_bucket, count_bucket, category_id).  ``counts``
    keeps the raw occurrence counts, which the count-multiplier pooling needs.
    """

    row_offsets: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    labels: np.ndarray
    target_key: np.ndarray
    target_category: np.ndarray
    other_features: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.keys = np.asarray(self.keys, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.int64).reshape(-1, 3)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.target_key = np.asarray(self.target_key, dtype=np.int64)
        self.target_category = np.asarray(self.target_category, dtype=np.int64)
        self.other_features = np.asarray(self.other_features, dtype=np.int64)
        if self.other_features.ndim == 1:
            self.other_features = self.other_features.reshape(len(self.labels), -1)
        self.validate()

    def validate(self) -> None:
        B = self.labels.shape[0]
        N = self.keys.shape[0]
        off = self.row_offsets
        if off.shape != (B + 1,):
            raise IngestError(f"row_offsets has length {off.shape[0]}, expected {B + 1}")
        if off[0] != 0 or off[-1] != N or np.any(np.diff(off) < 0):
            raise IngestError("row_offsets must be nondecreasing from 0 to N")
        if self.values.shape[0] != N or self.counts.shape[0] != N:
            raise IngestError("keys, values and counts disagree in length")
        for name in ("target_key", "target_category"):
            if getattr(self, name).shape != (B,):
                raise IngestError(f"{name} length mismatch")
        if self.other_features.shape[0] != B:
            raise IngestError("other_features row count mismatch")

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_entries(self) -> int:
        return int(self.keys.shape[0])

    def lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def take(self, rows: np.ndarray) -> SparseBatch:
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.row_offsets[rows]
        lens = self.row_offsets[rows + 1] - starts
        idx = ragged_index(starts, lens)
        return SparseBatch(
            row_offsets=np.concatenate([[0], np.cumsum(lens)]),
            keys=self.keys[idx],
            values=self.values[idx],
            counts=self.counts[idx],
            labels=self.labels[rows],
            target_key=self.target_key[rows],
            target_category=self.target_category[rows],
            other_features=self.other_features[rows],
        )


@dataclass
class DenseBatch:
    """Fixed-length padded behavior sequences, as consumed by plain DIN."""

    keys: np.ndarray  # B x L
    categories: np.ndarray  # B x L
    lengths: np.ndarray
    labels: np.ndarray
    target_key: np.ndarray
    target_category: np.ndarray
    other_features: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    def take(self, rows: np.ndarray) -> DenseBatch:
        rows = np.asarray(rows, dtype=np.int64)
        return DenseBatch(
            self.keys[rows],
            self.categories[rows],
            self.lengths[rows],
            self.labels[rows],
            self.target_key[rows],
            self.target_category[rows],
            self.other_features[rows],
        )


@dataclass
class RaggedSequences:
    """Per-sample raw behavior sequences (oldest first) kept for the dense path."""

    offsets: np.ndarray
    keys: np.ndarray
    categories: np.ndarray

    def take(self, rows: np.ndarray) -> RaggedSequences:
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.offsets[rows]
        lens = self.offsets[rows + 1] - starts
        idx = ragged_index(starts, lens)
        return RaggedSequences(np.concatenate([[0], np.cumsum(lens)]), self.keys[idx], self.categories[idx])


def ragged_index(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Concatenation of arange(s, s + n) for each (s, n)."""
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    seg_start = np.repeat(np.cumsum(lens) - lens, lens)
    return np.repeat(starts, lens) + (np.arange(total) - seg_start)


@dataclass
class Sample:
    entries: Sequence[KeyVectorEntry]
    target_key: int
    target_category: int
    other_features: Sequence[int]
    label: int
    reference_time: int


def build_sparse_batch(
    samples: Sequence[Sample],
    time_scheme: TimeBucketScheme = TimeBucketScheme(),
    count_scheme: CountBucketScheme = CountBucketScheme(),
) -> SparseBatch:
    if not samples:
        raise IngestError("cannot build a batch from zero samples")
    widths = {len(s.other_features) for s in samples}
    if len(widths) != 1:
        raise IngestError(f"other_features widths differ across samples: {sorted(widths)}")
    lens = [len(s.entries) for s in samples]
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    keys, last, counts, cats, refs = [], [], [], [], []
    for s in samples:
        for e in s.entries:
            keys.append(e.key_id)
            last.append(e.last_time)
            counts.append(e.count)
            cats.append(e.category_id)
            refs.append(s.reference_time)
    n = len(keys)
    values = np.zeros((n, 3), dtype=np.int64)
    if n:
        values[:, TIME_COL] = assign_time_bucket(np.array(last), np.array(refs), time_scheme)
        values[:, COUNT_COL] = assign_count_bucket(np.array(counts), count_scheme)
        values[:, CAT_COL] = cats
    return SparseBatch(
        row_offsets=offsets,
        keys=np.array(keys, dtype=np.int64),
        values=values,
        counts=np.array(counts, dtype=np.int64),
        labels=[s.label for s in samples],
        target_key=[s.target_key for s in samples],
        target_category=[s.target_category for s in samples],
        other_features=np.array([list(s.other_features) for s in samples], dtype=np.int64).reshape(len(samples), -1),
    )


def dense_from_sequences(
    seqs: RaggedSequences, batch: SparseBatch, truncate_len: int
) -> DenseBatch:
    """Keep the ``truncate_len`` most recent raw events per sample, zero-padded."""
    if truncate_len < 1:
        raise ValueError("truncate_len must be >= 1")
    B = batch.n_samples
    full = np.diff(seqs.offsets)
    lens = np.minimum(full, truncate_len)
    starts = seqs.offsets[1:] - lens
    idx = ragged_index(starts, lens)
    rows = np.repeat(np.arange(B), lens)
    cols = np.arange(idx.size) - np.repeat(np.cumsum(lens) - lens, lens)
    keys = np.zeros((B, truncate_len), dtype=np.int64)
    cats = np.zeros((B, truncate_len), dtype=np.int64)
    keys[rows, cols] = seqs.keys[idx]
    cats[rows, cols] = seqs.categories[idx]
    return DenseBatch(
        keys, cats, lens.astype(np.int64), batch.labels, batch.target_key, batch.target_category, batch.other_features
    )


# ---------------------------------------------------------------------------
# bulk (vectorised) path over whole event tables
# ---------------------------------------------------------------------------


@dataclass
class EventTable:
    user_id: np.ndarray
    key_id: np.ndarray
    category_id: np.ndarray
    timestamp: np.ndarray
    event_type: np.ndarray  # codes into EVENT_CODES order

    def __len__(self) -> int:
        return int(self.user_id.shape[0])


@dataclass
class SampleTable:
    user_id: np.ndarray
    target_key: np.ndarray
    target_category: np.ndarray
    label: np.ndarray
    reference_time: np.ndarray
    other_features: np.ndarray  # B x F

    def __len__(self) -> int:
        return int(self.user_id.shape[0])


@dataclass
class Compacted:
    batch: SparseBatch
    sequences: RaggedSequences | None = None
    meta: dict = field(default_factory=dict)


def compact(
    events: EventTable,
    samples: SampleTable,
    time_scheme: TimeBucketScheme = TimeBucketScheme(),
    count_scheme: CountBucketScheme = CountBucketScheme(),
    type_filter: Iterable[EventType | str] = (EventType.CLICK,),
    max_sequence_len: int = 0,
) -> Compacted:
    """Aggregate every sample's history (user's events before its reference time).

    Equivalent to calling :func:`aggregate_events` per sample followed by
    :func:`build_sparse_batch`, without the Python-level loop.  With
    ``max_sequence_len > 0`` the most recent raw events are also kept per
    sample for the truncated-sequence model.
    """
    codes = np.array([EVENT_CODES[EventType(t)] for t in type_filter], dtype=np.int64)
    keep = np.isin(events.event_type, codes)
    u = events.user_id[keep]
    ts = events.timestamp[keep]
    key = events.key_id[keep]
    cat = events.category_id[keep]
    order = np.lexsort((ts, u))
    u, ts, key, cat = u[order], ts[order], key[order], cat[order]

    B = len(samples)
    if B == 0:
        raise IngestError("no samples")
    span = int(max(ts.max(initial=0), samples.reference_time.max(initial=0))) + 1
    combined = u * span + ts
    lo = np.searchsorted(combined, samples.user_id * span, side="left")
    hi = np.searchsorted(combined, samples.user_id * span + samples.reference_time, side="left")
    lens = hi - lo
    idx = ragged_index(lo, lens)
    sid = np.repeat(np.arange(B), lens)
    p_key, p_ts, p_cat = key[idx], ts[idx], cat[idx]

    # stable sort keeps file order inside equal (sample, key, time), so the last
    # row of a group is the most recent occurrence
    o = np.lexsort((p_ts, p_key, sid))
    g_sid, g_key, g_ts, g_cat = sid[o], p_key[o], p_ts[o], p_cat[o]
    if g_sid.size:
        new_group = np.ones(g_sid.size, dtype=bool)
        new_group[1:] = (g_sid[1:] != g_sid[:-1]) | (g_key[1:] != g_key[:-1])
        first = np.flatnonzero(new_group)
        last = np.append(first[1:], g_sid.size) - 1
    else:
        first = last = np.zeros(0, dtype=np.int64)
    e_sid = g_sid[first]
    e_key = g_key[first]
    e_count = last - first + 1
    e_last = g_ts[last]
    e_cat = g_cat[last]
    n_per = np.bincount(e_sid, minlength=B)
    values = np.zeros((e_key.size, 3), dtype=np.int64)
    if e_key.size:
        values[:, TIME_COL] = assign_time_bucket(e_last, samples.reference_time[e_sid], time_scheme)
        values[:, COUNT_COL] = assign_count_bucket(e_count, count_scheme)
        values[:, CAT_COL] = e_cat
    batch = SparseBatch(
        row_offsets=np.concatenate([[0], np.cumsum(n_per)]),
        keys=e_key,
        values=values,
        counts=e_count,
        labels=samples.label,
        target_key=samples.target_key,
        target_category=samples.target_category,
        other_features=samples.other_features,
    )
    seqs = None
    if max_sequence_len > 0:
        keep_len = np.minimum(lens, max_sequence_len)
        sidx = ragged_index(hi - keep_len, keep_len)
        seqs = RaggedSequences(np.concatenate([[0], np.cumsum(keep_len)]), key[sidx], cat[sidx])
    meta = {
        "time_boundaries": list(time_scheme.boundaries),
        "count_boundaries": list(count_scheme.boundaries),
    }
    return Compacted(batch, seqs, meta)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def dataset_stats(
    data: SparseBatch | Sequence[Sequence[KeyVectorEntry]],
    key_thresholds: Sequence[int] = (400, 500),
    behavior_thresholds: Sequence[int] = (200, 400),
    quantiles: Sequence[float] = (0.5, 0.9, 0.99),
) -> dict:
    """Per-sample behavior (raw event) and key (distinct entry) statistics."""
    if isinstance(data, SparseBatch):
        n_keys = data.lengths()
        n_beh = np.add.reduceat(data.counts, data.row_offsets[:-1]) if data.n_entries else np.zeros(data.n_samples)
        n_beh = np.where(n_keys > 0, n_beh, 0)
    else:
        n_keys = np.array([len(es) for es in data])
        n_beh = np.array([sum(e.count for e in es) for es in data])
    if n_keys.size == 0:
        raise IngestError("statistics need at least one sample")
    avg_key = float(n_keys.mean())
    avg_beh = float(n_beh.mean())
    return {
        "samples": int(n_keys.size),
        "max_behavior": int(n_beh.max()),
        "avg_behavior": avg_beh,
        "max_key": int(n_keys.max()),
        "avg_key": avg_key,
        "behavior_per_key": avg_beh / avg_key if avg_key else float("nan"),
        "key_fraction_below": {str(t): float(np.mean(n_keys < t)) for t in key_thresholds},
        "behavior_fraction_below": {str(t): float(np.mean(n_beh < t)) for t in behavior_thresholds},
        "key_quantiles": {str(q): float(np.quantile(n_keys, q)) for q in quantiles},
        "behavior_quantiles": {str(q): float(np.quantile(n_beh, q)) for q in quantiles},
    }


# ---------------------------------------------------------------------------
# CSV input
# ---------------------------------------------------------------------------


def _read_rows(path: str | Path, header: list[str]):
    path = str(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            raise IngestError("empty file", line=1, path=path) from None
        if [h.strip() for h in got] != header:
            raise IngestError(f"expected header {','.join(header)}", line=1, path=path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", line=lineno, path=path)
            yield lineno, row


def read_events(path: str | Path) -> EventTable:
    cols: list[list[int]] = [[], [], [], [], []]
    for lineno, row in _read_rows(path, EVENT_HEADER):
        try:
            vals = [int(x) for x in row[:4]]
            etype = EVENT_CODES[EventType(row[4].strip())]
        except ValueError as exc:
            raise IngestError(str(exc), line=lineno, path=str(path)) from None
        if min(vals) < 0:
            raise IngestError("ids and timestamps must be >= 0", line=lineno, path=str(path))
        for c, v in zip(cols, [*vals, etype]):
            c.append(v)
    arr = [np.array(c, dtype=np.int64) for c in cols]
    return EventTable(*arr)


def read_samples(path: str | Path) -> SampleTable:
    cols: list[list[int]] = [[], [], [], [], []]
    other: list[list[int]] = []
    for lineno, row in _read_rows(path, SAMPLE_HEADER):
        try:
            vals = [int(x) for x in row[:5]]
            feats = [int(x) for x in row[5].split(";")] if row[5].strip() else []
        except ValueError as exc:
            raise IngestError(str(exc), line=lineno, path=str(path)) from None
        if vals[3] not in (0, 1):
            raise IngestError(f"label must be 0 or 1, got {vals[3]}", line=lineno, path=str(path))
        if min(vals) < 0 or (feats and min(feats) < 0):
            raise IngestError("ids must be >= 0", line=lineno, path=str(path))
        if other and len(feats) != len(other[0]):
            raise IngestError("other_features width differs from first row", line=lineno, path=str(path))
        for c, v in zip(cols, vals):
            c.append(v)
        other.append(feats)
    width = len(other[0]) if other else 0
    arr = [np.array(c, dtype=np.int64) for c in cols]
    return SampleTable(*arr, other_features=np.array(other, dtype=np.int64).reshape(len(other), width))


def events_from_table(table: EventTable) -> list[BehaviorEvent]:
    types = list(EventType)
    return [
        BehaviorEvent(int(u), int(k), int(c), int(t), types[int(e)])
        for u, k, c, t, e in zip(table.user_id, table.key_id, table.category_id, table.timestamp, table.event_type)
    ]
