"""Temporal enclosing subgraphs, double-radius labels, node feature assembly.

Extraction is strictly causal: only events with ts < cutoff can contribute
nodes or edges, so the predicted event itself can never leak in. Everything
here reads shared indices without mutating them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import InvalidQueryError
from .events import NodeId, TemporalAdjacency, recent_distinct_neighbors
from .memory import MemoryState

UNREACHABLE = 0  # label for nodes cut off from a target
TARGET_LABEL = 1


@dataclass
class EnclosingSubgraph:
    """k-hop neighborhood of a candidate pair at a cutoff time.

    nodes[0] and nodes[1] are the query endpoints; adj is symmetric binary
    with zero diagonal over local indices; labels is filled by drnl_label.
    """

    nodes: list[NodeId]
    adj: np.ndarray
    cutoff: float
    k: int
    labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.nodes)


def _bfs_nodes(adj: TemporalAdjacency, root: NodeId, t: float, k: int, cap: int) -> set[NodeId]:
    visited = {root}
    frontier = [root]
    for _ in range(k):
        nxt: list[NodeId] = []
        for node in frontier:
            for nbr in recent_distinct_neighbors(adj, node, t, cap):
                if nbr not in visited:
                    visited.add(nbr)
                    nxt.append(nbr)
        if not nxt:
            break
        frontier = nxt
    return visited


def enclosing_node_count(
    adj: TemporalAdjacency, u: NodeId, v: NodeId, t: float, k: int, cap: int
) -> int:
    """Size of the subgraph node set without building the induced edges."""
    if u == v:
        raise InvalidQueryError(f"candidate pair endpoints coincide: {u}")
    return len(_bfs_nodes(adj, u, t, k, cap) | _bfs_nodes(adj, v, t, k, cap))


def extract_enclosing_subgraph(
    adj: TemporalAdjacency, u: NodeId, v: NodeId, t: float, k: int = 2, cap: int = 20
) -> EnclosingSubgraph:
    """Union of k-hop BFS balls around u and v over pre-t events.

    Each node expands to at most `cap` most-recent distinct neighbors per
    hop. Induced edges connect any two set members with at least one pre-t
    event (multi-edges collapse to one); prior u-v events are kept.
    """
    if u == v:
        raise InvalidQueryError(f"candidate pair endpoints coincide: {u}")
    if k < 1:
        raise InvalidQueryError(f"hop count must be >= 1, got {k}")
    node_set = _bfs_nodes(adj, u, t, k, cap) | _bfs_nodes(adj, v, t, k, cap)
    others = sorted(node_set - {u, v})
    nodes = [u, v] + others
    local = {g: i for i, g in enumerate(nodes)}

    n = len(nodes)
    a = np.zeros((n, n))
    for g in nodes:
        i = local[g]
        for entries in adj.entries(g):
            ts, _, nbr = entries
            if ts >= t:
                break
            j = local.get(nbr)
            if j is not None and j != i:
                a[i, j] = 1.0
                a[j, i] = 1.0
    return EnclosingSubgraph(nodes=nodes, adj=a, cutoff=t, k=k)


def drnl_from_distances(d_u, d_v, l_max: int = 10) -> int:
    """Integer label from the two hop distances; inf (unreachable) maps to 0.

    With d = d_u + d_v the label is
        1 + min(d_u, d_v) + (d//2) * ((d//2) + (d % 2) - 1)
    clamped to l_max.
    """
    if d_u is None or d_v is None or np.isinf(d_u) or np.isinf(d_v):
        return UNREACHABLE
    du, dv = int(d_u), int(d_v)
    d = du + dv
    half = d // 2
    label = 1 + min(du, dv) + half * (half + (d % 2) - 1)
    return min(label, l_max)


def _bfs_distances(adj: np.ndarray, start: int, removed: int) -> np.ndarray:
    """Unweighted shortest paths from start, with one node deleted."""
    n = adj.shape[0]
    dist = np.full(n, np.inf)
    dist[start] = 0
    q = deque([start])
    while q:
        cur = q.popleft()
        for nxt in np.flatnonzero(adj[cur]):
            if nxt == removed or np.isfinite(dist[nxt]):
                continue
            dist[nxt] = dist[cur] + 1
            q.append(nxt)
    return dist


def drnl_label(sub: EnclosingSubgraph, l_max: int = 10) -> np.ndarray:
    """Double-radius labels over local indices; targets get 1.

    Distances to u are computed with v removed from the graph and vice
    versa, so a node only reachable through the other target counts as
    unreachable (label 0).
    """
    d_u = _bfs_distances(sub.adj, 0, removed=1)
    d_v = _bfs_distances(sub.adj, 1, removed=0)
    labels = np.empty(sub.n, dtype=np.int64)
    labels[0] = TARGET_LABEL
    labels[1] = TARGET_LABEL
    for i in range(2, sub.n):
        labels[i] = drnl_from_distances(d_u[i], d_v[i], l_max)
    sub.labels = labels
    return labels


def one_hot_labels(labels: np.ndarray, l_max: int = 10) -> np.ndarray:
    """[n x (l_max+1)] one-hot block; labels are already clamped to l_max."""
    n = labels.shape[0]
    out = np.zeros((n, l_max + 1))
    out[np.arange(n), labels] = 1.0
    return out


def assemble_node_features(
    sub: EnclosingSubgraph, memory: MemoryState, embedding, l_max: int = 10
) -> ag.Tensor:
    """Rows are temporal embedding || one-hot structural label.

    The embedding module decides whether gradient flows (time projection)
    or the block is constant (identity).
    """
    if sub.labels is None:
        drnl_label(sub, l_max)
    z = embedding.batch(sub.nodes, sub.cutoff, memory)
    onehot = ag.constant(one_hot_labels(sub.labels, l_max))
    return ag.concat([z, onehot], axis=1)


def format_subgraph(sub: EnclosingSubgraph) -> str:
    """Small text block (local edge list + labels) for debugging and fixtures."""
    lines = [f"# pair=({sub.nodes[0]},{sub.nodes[1]}) cutoff={sub.cutoff!r} k={sub.k} n={sub.n}"]
    lines.append("nodes: " + " ".join(str(g) for g in sub.nodes))
    if sub.labels is not None:
        lines.append("labels: " + " ".join(str(int(x)) for x in sub.labels))
    ii, jj = np.nonzero(np.triu(sub.adj))
    lines.append("edges: " + " ".join(f"{i}-{j}" for i, j in zip(ii, jj)))
    return "\n".join(lines) + "\n"
