"""Time-ordered interaction log, temporal adjacency index, splits, negatives.

Everything here is immutable once built; queries are read-only and safe to
share across workers.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

NodeId = int


@dataclass(frozen=True)
class Event:
    """One timestamped directed interaction."""

    idx: int
    src: NodeId
    dst: NodeId
    ts: float
    feats: tuple[float, ...]


@dataclass(frozen=True)
class EventStream:
    """Events sorted by (ts, idx) over a dense node-id space."""

    events: tuple[Event, ...]
    num_nodes: int
    feat_dim: int

    def __post_init__(self):
        prev = None
        for e in self.events:
            if len(e.feats) != self.feat_dim:
                raise ValueError(f"event {e.idx}: feature length {len(e.feats)} != {self.feat_dim}")
            if not (0 <= e.src < self.num_nodes and 0 <= e.dst < self.num_nodes):
                raise ValueError(f"event {e.idx}: endpoint out of range [0, {self.num_nodes})")
            if prev is not None and (e.ts, e.idx) < prev:
                raise ValueError(f"event {e.idx}: stream not sorted by (ts, idx)")
            prev = (e.ts, e.idx)

    def __len__(self):
        return len(self.events)


class TemporalAdjacency:
    """Per-node time-sorted neighbor index with strict before-t queries.

    Each directed event contributes an entry to both endpoints, so queries
    see the undirected interaction history.
    """

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        # entry layout (ts, event_idx, neighbor), kept sorted ascending
        self._entries: list[list[tuple[float, int, NodeId]]] = [[] for _ in range(num_nodes)]

    def entries(self, node: NodeId) -> list[tuple[float, int, NodeId]]:
        if 0 <= node < self.num_nodes:
            return self._entries[node]
        return []

    def total_entries(self) -> int:
        return sum(len(lst) for lst in self._entries)


def build_adjacency(stream: EventStream) -> TemporalAdjacency:
    """Index a sorted stream for neighbors-before-t queries."""
    adj = TemporalAdjacency(stream.num_nodes)
    for e in stream.events:
        adj._entries[e.src].append((e.ts, e.idx, e.dst))
        adj._entries[e.dst].append((e.ts, e.idx, e.src))
    return adj


def neighbors_before(
    adj: TemporalAdjacency, node: NodeId, t: float, limit: int
) -> list[tuple[NodeId, float, int]]:
    """The `limit` most recent interactions of `node` strictly before `t`.

    Returned entries are (neighbor, ts, event_idx), most recent last.
    Unknown nodes yield an empty list.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    entries = adj.entries(node)
    pos = bisect_left(entries, (t,))
    lo = max(0, pos - limit)
    return [(nbr, ts, idx) for ts, idx, nbr in entries[lo:pos]]


def recent_distinct_neighbors(
    adj: TemporalAdjacency, node: NodeId, t: float, cap: int
) -> list[NodeId]:
    """The `cap` most recently contacted distinct neighbors before `t`."""
    entries = adj.entries(node)
    pos = bisect_left(entries, (t,))
    seen: set[NodeId] = set()
    out: list[NodeId] = []
    for i in range(pos - 1, -1, -1):
        nbr = entries[i][2]
        if nbr not in seen:
            seen.add(nbr)
            out.append(nbr)
            if len(out) == cap:
                break
    return out


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split boundaries plus the masked unseen-node set."""

    train_end_idx: int
    val_end_idx: int
    unseen_nodes: frozenset[NodeId]
    seed: int
    train_frac: float = field(default=0.7, compare=False)
    val_frac: float = field(default=0.15, compare=False)


def chronological_split(
    stream: EventStream,
    train_frac: float = 0.7,
    val_frac: float = 0.15,
    unseen_frac: float = 0.1,
    seed: int = 0,
) -> SplitSpec:
    """Split the time-ordered stream and pick nodes to hide from training.

    The unseen set is the union of (a) nodes that never appear in the train
    region and (b) a seeded uniform sample, sized ``unseen_frac *
    num_nodes``, of nodes active on both sides of the train boundary; the
    training events of sampled nodes are masked out (see
    :func:`masked_train_indices`).
    """
    if not (0 < train_frac and 0 <= val_frac and train_frac + val_frac < 1):
        raise ConfigError(f"bad fractions train={train_frac} val={val_frac}")
    if not (0 <= unseen_frac < 1):
        raise ConfigError(f"bad unseen_frac={unseen_frac}")

    n = len(stream.events)
    train_end = int(math.floor(n * train_frac + 0.5))
    val_end = int(math.floor(n * (train_frac + val_frac) + 0.5))

    train_nodes: set[NodeId] = set()
    later_nodes: set[NodeId] = set()
    for e in stream.events[:train_end]:
        train_nodes.add(e.src)
        train_nodes.add(e.dst)
    for e in stream.events[train_end:]:
        later_nodes.add(e.src)
        later_nodes.add(e.dst)

    never_trained = later_nodes - train_nodes
    candidates = sorted(later_nodes & train_nodes)
    target = int(math.floor(unseen_frac * stream.num_nodes + 0.5))
    rng = np.random.default_rng(seed)
    k = min(target, len(candidates))
    sampled = set(rng.choice(candidates, size=k, replace=False).tolist()) if k else set()

    return SplitSpec(
        train_end_idx=train_end,
        val_end_idx=val_end,
        unseen_nodes=frozenset(never_trained | sampled),
        seed=seed,
        train_frac=train_frac,
        val_frac=val_frac,
    )


def masked_train_indices(stream: EventStream, split: SplitSpec) -> list[int]:
    """Training-region event indices after dropping events touching unseen nodes."""
    hidden = split.unseen_nodes
    return [
        e.idx
        for e in stream.events[: split.train_end_idx]
        if e.src not in hidden and e.dst not in hidden
    ]


def is_unseen_pair(split: SplitSpec, src: NodeId, dst: NodeId) -> bool:
    """A prediction counts as unseen when either endpoint was hidden from training."""
    return src in split.unseen_nodes or dst in split.unseen_nodes


def sample_negative(rng: np.random.Generator, num_nodes: int, exclude: NodeId) -> NodeId:
    """Uniform draw over [0, num_nodes) without `exclude`."""
    if num_nodes < 2:
        raise ValueError("need at least 2 nodes to sample a negative")
    draw = int(rng.integers(num_nodes - 1))
    return draw + 1 if draw >= exclude else draw
