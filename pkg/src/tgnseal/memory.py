"""Per-node temporal memory: messages, GRU updates, and embedding modules.

Memory evolution is driven by the event stream, not by the decoder loss, so
this module runs on plain arrays. The exception is the time-projection
embedding, whose weight sits inside feature assembly and therefore carries
gradients; it lives in :class:`TimeProjectionEmbedding` as a Tensor.

The memory matrix has a single writer (``flush_batch`` at batch boundaries)
and is read-only in between, so concurrent feature assembly over one batch
is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import CausalityError
from .events import Event


@dataclass
class TimeEncoderParams:
    """Learnable cosine features for elapsed time: phi(dt) = cos(dt * w + b)."""

    w: np.ndarray
    b: np.ndarray

    @staticmethod
    def init(d_time: int, rng: np.random.Generator) -> "TimeEncoderParams":
        # spread of inverse timescales, roughly geometric like positional encodings
        w = 1.0 / np.power(10.0, np.linspace(0, 4, d_time)) * (1.0 + 0.1 * rng.standard_normal(d_time))
        b = rng.uniform(0, 2 * np.pi, size=d_time)
        return TimeEncoderParams(w=w, b=b)


def time_encode(dt: float, params: TimeEncoderParams) -> np.ndarray:
    if dt < 0:
        raise CausalityError(f"negative elapsed time {dt}; event order is broken upstream")
    return np.cos(dt * params.w + params.b)


@dataclass
class GruParams:
    """Gate weights for the memory updater.

    Update convention (fixed; both exist in the literature):
        z = sigmoid(Wz m + Uz s + bz)
        r = sigmoid(Wr m + Ur s + br)
        n = tanh(Wn m + Un (r*s) + bn)
        s' = (1 - z) * n + z * s
    """

    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wn: np.ndarray
    un: np.ndarray
    bn: np.ndarray

    @staticmethod
    def init(msg_dim: int, d_mem: int, rng: np.random.Generator) -> "GruParams":
        def w(shape):
            return ag.glorot(rng, shape)
        return GruParams(
            wz=w((d_mem, msg_dim)), uz=w((d_mem, d_mem)), bz=np.zeros(d_mem),
            wr=w((d_mem, msg_dim)), ur=w((d_mem, d_mem)), br=np.zeros(d_mem),
            wn=w((d_mem, msg_dim)), un=w((d_mem, d_mem)), bn=np.zeros(d_mem),
        )


class MemoryState:
    """Node memory matrix s [num_nodes x d_mem] plus last-update times."""

    def __init__(self, num_nodes: int, d_mem: int):
        self.s = np.zeros((num_nodes, d_mem))
        self.last_update = np.zeros(num_nodes)

    @property
    def num_nodes(self) -> int:
        return self.s.shape[0]

    @property
    def d_mem(self) -> int:
        return self.s.shape[1]

    def reset(self):
        self.s[:] = 0.0
        self.last_update[:] = 0.0

    def copy(self) -> "MemoryState":
        other = MemoryState(self.num_nodes, self.d_mem)
        other.s[:] = self.s
        other.last_update[:] = self.last_update
        return other


@dataclass(frozen=True)
class RawMessage:
    node: int
    ts: float
    arrival: int
    payload: np.ndarray


class RawMessageBuffer:
    """Pending per-node messages for the current batch."""

    def __init__(self):
        self._pending: dict[int, list[RawMessage]] = {}
        self._arrivals = 0

    def push(self, node: int, ts: float, payload: np.ndarray):
        msg = RawMessage(node=node, ts=ts, arrival=self._arrivals, payload=payload)
        self._arrivals += 1
        self._pending.setdefault(node, []).append(msg)

    def nodes(self) -> list[int]:
        return sorted(self._pending)

    def messages(self, node: int) -> list[RawMessage]:
        return self._pending.get(node, [])

    def clear(self):
        self._pending.clear()

    def __len__(self):
        return sum(len(v) for v in self._pending.values())


def compute_messages(
    event: Event, memory: MemoryState, enc: TimeEncoderParams
) -> tuple[RawMessage, RawMessage]:
    """Identity message function: raw concatenation, no learned transform.

    Source payload is s_src || s_dst || phi(t - last_update_src) || feats;
    the destination payload swaps the two memory blocks and uses its own
    elapsed time.
    """
    s_src = memory.s[event.src]
    s_dst = memory.s[event.dst]
    feats = np.asarray(event.feats)
    phi_src = time_encode(event.ts - memory.last_update[event.src], enc)
    phi_dst = time_encode(event.ts - memory.last_update[event.dst], enc)
    m_src = RawMessage(event.src, event.ts, -1, np.concatenate([s_src, s_dst, phi_src, feats]))
    m_dst = RawMessage(event.dst, event.ts, -1, np.concatenate([s_dst, s_src, phi_dst, feats]))
    return m_src, m_dst


def buffer_event(
    buffer: RawMessageBuffer, event: Event, memory: MemoryState, enc: TimeEncoderParams
):
    m_src, m_dst = compute_messages(event, memory, enc)
    buffer.push(event.src, event.ts, m_src.payload)
    buffer.push(event.dst, event.ts, m_dst.payload)


def aggregate_messages(buffer: RawMessageBuffer, node: int, mode: str = "most_recent") -> RawMessage:
    """Reduce a node's pending messages to one.

    most_recent keeps the max-ts message (ties broken by latest arrival);
    mean averages payloads elementwise and stamps the max ts.
    """
    msgs = buffer.messages(node)
    if not msgs:
        raise ValueError(f"node {node} has no pending messages")
    if mode == "most_recent":
        return max(msgs, key=lambda m: (m.ts, m.arrival))
    if mode == "mean":
        payload = np.mean([m.payload for m in msgs], axis=0)
        ts = max(m.ts for m in msgs)
        return RawMessage(node=node, ts=ts, arrival=-1, payload=payload)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def gru_update(s: np.ndarray, m: np.ndarray, p: GruParams) -> np.ndarray:
    z = _sigmoid(p.wz @ m + p.uz @ s + p.bz)
    r = _sigmoid(p.wr @ m + p.ur @ s + p.br)
    n = np.tanh(p.wn @ m + p.un @ (r * s) + p.bn)
    return (1.0 - z) * n + z * s


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def update_memory(node: int, msg: RawMessage, memory: MemoryState, gru: GruParams) -> np.ndarray:
    new_s = gru_update(memory.s[node], msg.payload, gru)
    memory.s[node] = new_s
    memory.last_update[node] = msg.ts
    return new_s


def flush_batch(
    buffer: RawMessageBuffer, memory: MemoryState, gru: GruParams, mode: str = "most_recent"
):
    """Apply all pending messages (aggregate then update), then empty the buffer.

    Called exactly once per processed batch, after all of that batch's
    predictions; only rows of nodes with pending messages change.
    """
    for node in buffer.nodes():
        msg = aggregate_messages(buffer, node, mode)
        update_memory(node, msg, memory, gru)
    buffer.clear()


# ---------------------------------------------------------------------------
# Embedding modules

class IdentityEmbedding:
    """z_i(t) = s_i(t); no parameters."""

    params: list = []

    def single(self, node: int, t: float, memory: MemoryState) -> np.ndarray:
        return memory.s[node].copy()

    def batch(self, nodes: list[int], t: float, memory: MemoryState) -> ag.Tensor:
        return ag.constant(memory.s[np.asarray(nodes, dtype=np.intp)])


class TimeProjectionEmbedding:
    """z_i(t) = (1 + dt * w) * s_i(t) with learnable w, dt = t - last_update."""

    def __init__(self, d_mem: int, rng: np.random.Generator | None = None, scale: float = 0.01):
        if rng is None:
            w = np.zeros(d_mem)
        else:
            w = scale * rng.standard_normal(d_mem)
        self.w = ag.parameter(w)

    @property
    def params(self) -> list[ag.Tensor]:
        return [self.w]

    def _deltas(self, nodes, t: float, memory: MemoryState) -> np.ndarray:
        idx = np.asarray(nodes, dtype=np.intp)
        dt = t - memory.last_update[idx]
        if np.any(dt < 0):
            raise CausalityError(f"projection time {t} precedes a node's last update")
        return dt

    def single(self, node: int, t: float, memory: MemoryState) -> np.ndarray:
        dt = self._deltas([node], t, memory)[0]
        return (1.0 + dt * self.w.data) * memory.s[node]

    def batch(self, nodes: list[int], t: float, memory: MemoryState) -> ag.Tensor:
        idx = np.asarray(nodes, dtype=np.intp)
        dt_col = ag.constant(self._deltas(nodes, t, memory)[:, None])
        s_const = ag.constant(memory.s[idx])
        gain = ag.add(ag.constant(np.ones((len(nodes), 1))), ag.mul(dt_col, self.w))
        return ag.mul(gain, s_const)


def embed_identity(node: int, memory: MemoryState) -> np.ndarray:
    return IdentityEmbedding().single(node, 0.0, memory)


def embed_time_projection(
    node: int, t: float, memory: MemoryState, proj: TimeProjectionEmbedding
) -> np.ndarray:
    return proj.single(node, t, memory)
