"""Graph classifier turning a labeled subgraph into a link probability.

Pipeline: graph-conv stack (all layer outputs concatenated) -> SortPooling
-> flatten -> conv1d/maxpool/conv1d head -> dense -> dropout -> dense(1)
-> sigmoid. The sort permutation is treated as a constant in backward, the
standard SortPooling subgradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .subgraph import EnclosingSubgraph


@dataclass
class Prediction:
    y_hat: float
    logit: float
    y_tensor: Tensor | None = None


@dataclass
class DgcnnParams:
    conv_ws: list[Tensor]
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    dense1_w: Tensor
    dense1_b: Tensor
    dense2_w: Tensor
    dense2_b: Tensor
    k_sp: int
    dropout: float = 0.5
    channels: tuple[int, ...] = (32, 32, 32, 1)

    @property
    def c_total(self) -> int:
        return sum(self.channels)

    @property
    def params(self) -> list[Tensor]:
        return self.conv_ws + [
            self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
            self.dense1_w, self.dense1_b, self.dense2_w, self.dense2_b,
        ]


def init_dgcnn(
    in_dim: int,
    k_sp: int,
    rng: np.random.Generator,
    channels: tuple[int, ...] = (32, 32, 32, 1),
    conv1_filters: int = 16,
    conv2_filters: int = 32,
    conv2_kernel: int = 5,
    dense_hidden: int = 128,
    dropout: float = 0.5,
) -> DgcnnParams:
    if k_sp < 2 * conv2_kernel:
        raise ValueError(f"k_sp={k_sp} too small for the conv1d head (needs >= {2 * conv2_kernel})")
    c_total = sum(channels)
    conv_ws = []
    prev = in_dim
    for c in channels:
        conv_ws.append(ag.parameter(ag.glorot(rng, (prev, c))))
        prev = c
    conv1_w = ag.parameter(ag.glorot(rng, (conv1_filters, 1, c_total)))
    conv2_w = ag.parameter(ag.glorot(rng, (conv2_filters, conv1_filters, conv2_kernel)))
    dense_in = conv2_filters * (k_sp // 2 - conv2_kernel + 1)
    dense1_w = ag.parameter(ag.glorot(rng, (dense_in, dense_hidden)))
    dense2_w = ag.parameter(ag.glorot(rng, (dense_hidden, 1)))
    return DgcnnParams(
        conv_ws=conv_ws,
        conv1_w=conv1_w, conv1_b=ag.parameter(np.zeros(conv1_filters)),
        conv2_w=conv2_w, conv2_b=ag.parameter(np.zeros(conv2_filters)),
        dense1_w=dense1_w, dense1_b=ag.parameter(np.zeros(dense_hidden)),
        dense2_w=dense2_w, dense2_b=ag.parameter(np.zeros(1)),
        k_sp=k_sp, dropout=dropout, channels=tuple(channels),
    )


def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """D^-1 (A + I); self-loops make the row sums strictly positive."""
    a_tilde = adj + np.eye(adj.shape[0])
    deg = a_tilde.sum(axis=1)
    return a_tilde / deg[:, None]


def graph_conv_stack(adj: np.ndarray, x: Tensor, conv_ws: list[Tensor]) -> Tensor:
    """H_l = tanh(D^-1 (A+I) H_{l-1} W_l); returns all layers concatenated."""
    m = ag.constant(normalized_adjacency(adj))
    h = x
    outs = []
    for w in conv_ws:
        h = ag.tanh(ag.matmul(m, ag.matmul(h, w)))
        outs.append(h)
    return ag.concat(outs, axis=1)


def sortpool_order(h: np.ndarray) -> np.ndarray:
    """Row order: descending by last channel, ties rightmost-to-left, then stable."""
    keys = [np.arange(h.shape[0])] + [-h[:, c] for c in range(h.shape[1])]
    return np.lexsort(keys)


def sort_pooling(h: Tensor, k_sp: int) -> Tensor:
    """Keep the top k_sp rows in canonical order; short inputs get zero rows."""
    order = sortpool_order(h.data)[: min(k_sp, h.data.shape[0])]
    top = ag.take_rows(h, order)
    short = k_sp - top.data.shape[0]
    if short > 0:
        top = ag.concat([top, ag.constant(np.zeros((short, h.data.shape[1])))], axis=0)
    return top


def dgcnn_forward(
    sub: EnclosingSubgraph,
    x: Tensor,
    params: DgcnnParams,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Prediction:
    h = graph_conv_stack(sub.adj, x, params.conv_ws)
    pooled = sort_pooling(h, params.k_sp)                      # [k_sp, C_total]
    seq = ag.reshape(pooled, (1, params.k_sp * params.c_total))
    c1 = ag.relu(ag.conv1d(seq, params.conv1_w, params.conv1_b, stride=params.c_total))
    p1 = ag.maxpool1d(c1, 2)
    c2 = ag.relu(ag.conv1d(p1, params.conv2_w, params.conv2_b, stride=1))
    flat = ag.reshape(c2, (1, c2.data.size))
    hidden = ag.relu(ag.add(ag.matmul(flat, params.dense1_w), params.dense1_b))
    if train_mode and params.dropout > 0:
        if dropout_rng is None:
            raise ValueError("train-mode forward needs a dropout rng")
        keep = (dropout_rng.random(hidden.data.shape) >= params.dropout) / (1.0 - params.dropout)
        hidden = ag.mul(hidden, ag.constant(keep))
    logit = ag.add(ag.matmul(hidden, params.dense2_w), params.dense2_b)
    y = ag.sigmoid(ag.reshape(logit, ()))
    return Prediction(y_hat=float(y.data), logit=float(logit.data[0, 0]), y_tensor=y)


def predict_link(
    sub: EnclosingSubgraph,
    x: Tensor,
    params: DgcnnParams,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Prediction:
    return dgcnn_forward(sub, x, params, train_mode=train_mode, dropout_rng=dropout_rng)


def calibrate_k_sp(sizes: list[int], percentile: float = 0.6, floor: int = 10) -> int:
    """Pick k_sp so about `percentile` of training subgraphs have >= k_sp nodes.

    Clamped below at `floor` so the fixed conv1d head always fits.
    """
    if not sizes:
        return floor
    ordered = sorted(sizes)
    idx = max(0, math.ceil((1.0 - percentile) * len(ordered)) - 1)
    return max(floor, ordered[idx])
