"""Temporal training loop, evaluation, multi-run experiments.

Per batch: score every positive event and its sampled negatives first, then
(and only then) generate messages, aggregate the most recent per node, and
flush the memory — the delayed update that keeps a batch's own links out of
the features used to predict them. Memory is reset and the stream replayed
at every epoch start because memory is stateful across an epoch.

Predictions inside a batch are a pure function of batch membership, never of
processing order: events are handled in ascending stream index and every
per-prediction RNG (negative draw, dropout mask) is keyed by the event's
index, not by a shared sequential stream.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tensor, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .dgcnn import DgcnnParams, Prediction, calibrate_k_sp, dgcnn_forward, init_dgcnn
from .errors import ConfigError
from .events import (
    EventStream,
    SplitSpec,
    build_adjacency,
    chronological_split,
    is_unseen_pair,
    masked_train_indices,
    sample_negative,
)
from .memory import (
    GruParams,
    IdentityEmbedding,
    MemoryState,
    RawMessageBuffer,
    TimeEncoderParams,
    TimeProjectionEmbedding,
    buffer_event,
    flush_batch,
)
from .metrics import average_precision
from .subgraph import assemble_node_features, drnl_label, enclosing_node_count, extract_enclosing_subgraph

MODELS = ("tgn_seal", "tgn_id", "tgn_time")
EMBEDDINGS = ("identity", "time_projection")

# rng stream tags (first element after the base seed)
_TAG_PARAMS = 1
_TAG_NEG_TRAIN = 2
_TAG_DROPOUT = 3
_TAG_NEG_EVAL = 4

_REGION_CODE = {"val": 0, "test": 1}


def _child_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


@dataclass
class TrainConfig:
    model: str = "tgn_seal"
    k: int = 2
    cap: int = 20
    l_max: int = 10
    d_mem: int = 32
    d_time: int = 16
    batch_size: int = 100
    lr: float = 1e-4
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    train_frac: float = 0.7
    val_frac: float = 0.15
    unseen_frac: float = 0.1
    neg_per_pos: int = 1
    embedding: str = "identity"
    conv_channels: tuple[int, ...] = (32, 32, 32, 1)
    conv1_filters: int = 16
    conv2_filters: int = 32
    conv2_kernel: int = 5
    dense_hidden: int = 128
    dropout: float = 0.5
    sortpool_percentile: float = 0.6
    agg_mode: str = "most_recent"
    threads: int = 1

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"unknown embedding {self.embedding!r}")
        if self.agg_mode not in ("most_recent", "mean"):
            raise ConfigError(f"unknown agg_mode {self.agg_mode!r}")
        positive = {
            "k": self.k, "cap": self.cap, "l_max": self.l_max, "d_mem": self.d_mem,
            "d_time": self.d_time, "batch_size": self.batch_size, "lr": self.lr,
            "epochs": self.epochs, "patience": self.patience, "neg_per_pos": self.neg_per_pos,
            "dense_hidden": self.dense_hidden, "threads": self.threads,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not (0 <= self.dropout < 1):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0 < self.sortpool_percentile <= 1):
            raise ConfigError(f"sortpool_percentile must be in (0, 1], got {self.sortpool_percentile}")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac < 1):
            raise ConfigError("train_frac + val_frac must stay below 1")
        if not (0 <= self.unseen_frac < 1):
            raise ConfigError(f"unseen_frac must be in [0, 1), got {self.unseen_frac}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = set(TrainConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "conv_channels" in kwargs:
            kwargs["conv_channels"] = tuple(kwargs["conv_channels"])
        cfg = TrainConfig(**kwargs)
        cfg.validate()
        return cfg

    def child(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class MlpParams:
    """Two relu hidden layers of width d_mem, then a sigmoid output."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    @staticmethod
    def init(d_mem: int, rng: np.random.Generator) -> "MlpParams":
        return MlpParams(
            w1=ag.parameter(ag.glorot(rng, (2 * d_mem, d_mem))), b1=ag.parameter(np.zeros(d_mem)),
            w2=ag.parameter(ag.glorot(rng, (d_mem, d_mem))), b2=ag.parameter(np.zeros(d_mem)),
            w3=ag.parameter(ag.glorot(rng, (d_mem, 1))), b3=ag.parameter(np.zeros(1)),
        )

    @property
    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def baseline_mlp_decode(z_u: Tensor, z_v: Tensor, mlp: MlpParams) -> Prediction:
    """sigmoid(MLP(z_u || z_v)) over row vectors [1, d_mem]."""
    x = ag.concat([z_u, z_v], axis=1)
    h1 = ag.relu(ag.add(ag.matmul(x, mlp.w1), mlp.b1))
    h2 = ag.relu(ag.add(ag.matmul(h1, mlp.w2), mlp.b2))
    logit = ag.add(ag.matmul(h2, mlp.w3), mlp.b3)
    y = ag.sigmoid(ag.reshape(logit, ()))
    return Prediction(y_hat=float(y.data), logit=float(logit.data[0, 0]), y_tensor=y)


class LinkModel:
    """EventStream-bound model state: memory machinery plus a decoder."""

    def __init__(self, stream: EventStream, config: TrainConfig, split: SplitSpec,
                 k_sp: int | None = None):
        config.validate()
        if stream.num_nodes < 3:
            raise ConfigError("need at least 3 nodes to sample training negatives")
        self.config = config
        self.stream = stream
        self.split = split
        self.adjacency = build_adjacency(stream)

        rng = _child_rng(config.seed, _TAG_PARAMS)
        msg_dim = 2 * config.d_mem + config.d_time + stream.feat_dim
        self.gru = GruParams.init(msg_dim, config.d_mem, rng)
        self.enc = TimeEncoderParams.init(config.d_time, rng)
        self.memory = MemoryState(stream.num_nodes, config.d_mem)
        self.buffer = RawMessageBuffer()

        emb_kind = "time_projection" if config.model == "tgn_time" else (
            config.embedding if config.model == "tgn_seal" else "identity")
        if emb_kind == "time_projection":
            self.embedding = TimeProjectionEmbedding(config.d_mem, rng)
        else:
            self.embedding = IdentityEmbedding()

        self.dgcnn: DgcnnParams | None = None
        self.mlp: MlpParams | None = None
        if config.model == "tgn_seal":
            if k_sp is None:
                k_sp = self._calibrate_k_sp()
            in_dim = config.d_mem + config.l_max + 1
            self.dgcnn = init_dgcnn(
                in_dim, k_sp, rng,
                channels=config.conv_channels,
                conv1_filters=config.conv1_filters,
                conv2_filters=config.conv2_filters,
                conv2_kernel=config.conv2_kernel,
                dense_hidden=config.dense_hidden,
                dropout=config.dropout,
            )
        else:
            self.mlp = MlpParams.init(config.d_mem, rng)

        self.adam = AdamState(lr=config.lr)
        self.epochs_trained = 0  # feeds per-epoch dropout keys

    # -- parameters ---------------------------------------------------------

    @property
    def trainable(self) -> list[Tensor]:
        params = list(self.embedding.params)
        if self.dgcnn is not None:
            params += self.dgcnn.params
        if self.mlp is not None:
            params += self.mlp.params
        return params

    def snapshot_params(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.trainable]

    def restore_params(self, snap: list[np.ndarray]):
        for p, data in zip(self.trainable, snap):
            p.data[:] = data if p.data.ndim else data

    # -- k_sp calibration ----------------------------------------------------

    def _calibrate_k_sp(self) -> int:
        """Subgraph sizes the first epoch will see decide the sortpool width."""
        cfg = self.config
        sizes = []
        for eidx in masked_train_indices(self.stream, self.split):
            e = self.stream.events[eidx]
            sizes.append(enclosing_node_count(self.adjacency, e.src, e.dst, e.ts, cfg.k, cfg.cap))
            for j in range(cfg.neg_per_pos):
                neg = self._negative(eidx, j, e.src, e.dst, eval_region=None)
                sizes.append(enclosing_node_count(self.adjacency, e.src, neg, e.ts, cfg.k, cfg.cap))
        return calibrate_k_sp(sizes, cfg.sortpool_percentile, floor=2 * cfg.conv2_kernel)

    # -- scoring -------------------------------------------------------------

    def _negative(self, eidx: int, j: int, src: int, dst: int,
                  eval_region: str | None) -> int:
        if eval_region is None:
            rng = _child_rng(self.config.seed, _TAG_NEG_TRAIN, eidx, j)
        else:
            rng = _child_rng(self.config.seed, _TAG_NEG_EVAL, _REGION_CODE[eval_region], eidx, j)
        neg = sample_negative(rng, self.stream.num_nodes, dst)
        while neg == src:  # enclosing-subgraph queries need distinct endpoints
            neg = sample_negative(rng, self.stream.num_nodes, dst)
        return neg

    def score_pair(self, src: int, dst: int, t: float, train_mode: bool = False,
                   dropout_rng: np.random.Generator | None = None) -> Prediction:
        cfg = self.config
        if cfg.model == "tgn_seal":
            sub = extract_enclosing_subgraph(self.adjacency, src, dst, t, cfg.k, cfg.cap)
            drnl_label(sub, cfg.l_max)
            x = assemble_node_features(sub, self.memory, self.embedding, cfg.l_max)
            return dgcnn_forward(sub, x, self.dgcnn, train_mode=train_mode, dropout_rng=dropout_rng)
        z = self.embedding.batch([src, dst], t, self.memory)
        z_u = ag.slice_(z, (slice(0, 1), slice(None)))
        z_v = ag.slice_(z, (slice(1, 2), slice(None)))
        return baseline_mlp_decode(z_u, z_v, self.mlp)

    def absorb_batch(self, event_indices):
        """Message generation, most-recent aggregation, memory flush."""
        for eidx in event_indices:
            buffer_event(self.buffer, self.stream.events[eidx], self.memory, self.enc)
        flush_batch(self.buffer, self.memory, self.gru, self.config.agg_mode)

    def reset_memory(self):
        self.memory.reset()
        self.buffer.clear()


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def train_epoch(stream: EventStream, split: SplitSpec, model: LinkModel,
                config: TrainConfig) -> list[float]:
    """One pass over the masked training region; returns per-batch mean BCE.

    Memory resets to zeros and the stream replays from the start; negatives
    are a fixed seeded function of each event, dropout masks change per
    epoch.
    """
    train_idx = masked_train_indices(stream, split)
    if not train_idx:
        raise ConfigError("training split is empty after masking")
    epoch = model.epochs_trained
    model.reset_memory()
    segment = []
    for batch in _chunks(train_idx, config.batch_size):
        losses = []
        n_preds = len(batch) * (1 + config.neg_per_pos)
        for eidx in batch:
            e = stream.events[eidx]
            jobs = [(e.dst, 0)] + [
                (model._negative(eidx, j, e.src, e.dst, eval_region=None), j + 1)
                for j in range(config.neg_per_pos)
            ]
            for dst, role in jobs:
                drop_rng = None
                if config.model == "tgn_seal" and config.dropout > 0:
                    drop_rng = _child_rng(config.seed, _TAG_DROPOUT, epoch, eidx, role)
                pred = model.score_pair(e.src, dst, e.ts, train_mode=True, dropout_rng=drop_rng)
                label = 1.0 if role == 0 else 0.0
                loss = ag.bce_loss(pred.y_tensor, label)
                ag.backward(loss, seed=1.0 / n_preds)
                losses.append(float(loss.data))
        adam_step(model.adam, model.trainable)
        model.absorb_batch(batch)
        segment.append(float(np.mean(losses)))
    model.epochs_trained += 1
    return segment


@dataclass
class RegionScores:
    """Pooled scores for one region walk; positives carry their negatives."""

    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    unseen: list[bool] = field(default_factory=list)

    def ap(self, subset: str | None = None) -> float | None:
        if subset is None:
            keep = [True] * len(self.scores)
        elif subset == "unseen":
            keep = self.unseen
        elif subset == "seen":
            keep = [not u for u in self.unseen]
        else:
            raise ConfigError(f"unknown subset {subset!r}")
        scores = [s for s, k in zip(self.scores, keep) if k]
        labels = [l for l, k in zip(self.labels, keep) if k]
        if not any(l == 1 for l in labels):
            return None
        return average_precision(scores, labels)


def _region_bounds(stream: EventStream, split: SplitSpec, region: str) -> range:
    if region == "val":
        return range(split.train_end_idx, split.val_end_idx)
    if region == "test":
        return range(split.val_end_idx, len(stream.events))
    raise ConfigError(f"unknown region {region!r}")


def score_region(stream: EventStream, split: SplitSpec, model: LinkModel,
                 config: TrainConfig, region: str, scorer=None) -> RegionScores:
    """Walk a region batchwise: score positives + seeded negatives, then let
    true events update the memory as the walk advances."""
    out = RegionScores()
    with ag.no_grad():
        for batch in _chunks(list(_region_bounds(stream, split, region)), config.batch_size):
            for eidx in batch:
                e = stream.events[eidx]
                flag = is_unseen_pair(split, e.src, e.dst)
                if scorer is None:
                    pos = model.score_pair(e.src, e.dst, e.ts).y_hat
                else:
                    pos = scorer(e, e.dst)
                out.scores.append(pos)
                out.labels.append(1)
                out.unseen.append(flag)
                for j in range(config.neg_per_pos):
                    neg = model._negative(eidx, j, e.src, e.dst, eval_region=region)
                    if scorer is None:
                        sneg = model.score_pair(e.src, neg, e.ts).y_hat
                    else:
                        sneg = scorer(e, neg)
                    out.scores.append(sneg)
                    out.labels.append(0)
                    out.unseen.append(flag)
            model.absorb_batch(batch)
    return out


def replay_region(stream: EventStream, split: SplitSpec, model: LinkModel,
                  config: TrainConfig, region: str):
    """Advance memory over a region without scoring anything."""
    for batch in _chunks(list(_region_bounds(stream, split, region)), config.batch_size):
        model.absorb_batch(batch)


def replay_train(stream: EventStream, split: SplitSpec, model: LinkModel, config: TrainConfig):
    """Memory replay over the masked training region (matches training batching)."""
    model.reset_memory()
    for batch in _chunks(masked_train_indices(stream, split), config.batch_size):
        model.absorb_batch(batch)


def evaluate(stream: EventStream, split: SplitSpec, model: LinkModel, config: TrainConfig,
             region: str, subset: str | None = None, scorer=None,
             replay: bool = True) -> float | None:
    """AP over a region's positives (+1 seeded negative each), optionally
    restricted to seen/unseen pairs. Returns None when the subset is empty.

    With replay=True the memory is rebuilt from zeros through all events
    preceding the region; otherwise the model's current memory is used
    (and mutated by the walk).
    """
    if replay:
        replay_train(stream, split, model, config)
        if region == "test":
            replay_region(stream, split, model, config, "val")
    return score_region(stream, split, model, config, region, scorer=scorer).ap(subset)


@dataclass
class MetricsReport:
    model: str
    seed: int
    ap_seen: float | None
    ap_unseen: float | None
    loss_curve: list[float]
    val_ap_curve: list[float]
    wall_time_s: float
    config: dict
    ap_test_pooled: float | None = None  # in-memory convenience, not persisted

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "seed": self.seed,
            "ap_seen": self.ap_seen,
            "ap_unseen": self.ap_unseen,
            "loss_curve": self.loss_curve,
            "val_ap_curve": self.val_ap_curve,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True, separators=(",", ": "), indent=1)


def train_run(stream: EventStream, config: TrainConfig) -> tuple[MetricsReport, LinkModel]:
    """Full train + early stopping + test evaluation for one seed."""
    config.validate()
    started = time.perf_counter()
    split = chronological_split(stream, config.train_frac, config.val_frac,
                                config.unseen_frac, config.seed)
    model = LinkModel(stream, config, split)

    loss_curve: list[float] = []
    val_curve: list[float] = []
    best_ap = -1.0
    best_snap = model.snapshot_params()
    since_best = 0
    for _ in range(config.epochs):
        loss_curve.extend(train_epoch(stream, split, model, config))
        # the val walk mutates memory, which the next epoch resets anyway
        val_scores = score_region(stream, split, model, config, "val")
        val_ap = val_scores.ap(None)
        val_curve.append(val_ap if val_ap is not None else 0.0)
        if val_ap is not None and val_ap > best_ap:
            best_ap = val_ap
            best_snap = model.snapshot_params()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    model.restore_params(best_snap)
    replay_train(stream, split, model, config)
    replay_region(stream, split, model, config, "val")
    test_scores = score_region(stream, split, model, config, "test")
    # leave the memory at its end-of-training state, the checkpoint contract
    replay_train(stream, split, model, config)

    report = MetricsReport(
        model=config.model,
        seed=config.seed,
        ap_seen=test_scores.ap("seen"),
        ap_unseen=test_scores.ap("unseen"),
        loss_curve=loss_curve,
        val_ap_curve=val_curve,
        wall_time_s=time.perf_counter() - started,
        config=config.to_dict(),
        ap_test_pooled=test_scores.ap(None),
    )
    return report, model


def run_experiment(stream: EventStream, config: TrainConfig, n_runs: int,
                   out_dir=None) -> tuple[list[MetricsReport], dict]:
    """Independent seeded runs (seed, seed+1, ...) plus a mean/std summary.

    Reports are persisted as they finish, so a failing run leaves the
    completed ones on disk.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    reports = []
    for i in range(n_runs):
        cfg = config.child(config.seed + i)
        report, _ = train_run(stream, cfg)
        reports.append(report)
        if out_dir is not None:
            path = f"{out_dir}/report_seed{cfg.seed}.json"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(report_to_json(report))
                fh.write("\n")
    summary = summarize_reports(reports)
    if out_dir is not None:
        with open(f"{out_dir}/summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return reports, summary


def summarize_reports(reports: list[MetricsReport]) -> dict:
    summary: dict = {"n_runs": len(reports)}
    for metric in ("ap_seen", "ap_unseen"):
        vals = [getattr(r, metric) for r in reports if getattr(r, metric) is not None]
        if vals:
            summary[f"{metric}_mean"] = float(np.mean(vals))
            summary[f"{metric}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            summary[f"{metric}_n"] = len(vals)
    return summary


def export_curves(reports: list[MetricsReport], path):
    """CSV `epoch_or_batch,series,value` with one series per curve per run."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch_or_batch,series,value\n")
        for r in reports:
            tag = f"{r.model}-seed{r.seed}"
            for i, v in enumerate(r.loss_curve):
                fh.write(f"{i},{tag}:train_loss,{v!r}\n")
            for i, v in enumerate(r.val_ap_curve):
                fh.write(f"{i},{tag}:val_ap,{v!r}\n")


# ---------------------------------------------------------------------------
# Checkpointing (named-tensor container; memory snapshot = end of training)

def model_tensors(model: LinkModel) -> dict[str, np.ndarray]:
    t = {
        "memory.s": model.memory.s,
        "memory.last_update": model.memory.last_update,
        "time_enc.w": model.enc.w,
        "time_enc.b": model.enc.b,
    }
    g = model.gru
    for name in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
        t[f"gru.{name}"] = getattr(g, name)
    if isinstance(model.embedding, TimeProjectionEmbedding):
        t["proj.w"] = model.embedding.w.data
    if model.dgcnn is not None:
        d = model.dgcnn
        t["dgcnn.k_sp"] = np.array(float(d.k_sp))
        for i, w in enumerate(d.conv_ws):
            t[f"dgcnn.conv_w{i}"] = w.data
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                     "dense1_w", "dense1_b", "dense2_w", "dense2_b"):
            t[f"dgcnn.{name}"] = getattr(d, name).data
    if model.mlp is not None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            t[f"mlp.{name}"] = getattr(model.mlp, name).data
    return t


def save_model(path, model: LinkModel):
    save_checkpoint(path, model_tensors(model))


def load_model(path, stream: EventStream, config: TrainConfig) -> LinkModel:
    """Rebuild a model from its checkpoint; the split is recomputed from config."""
    tensors = load_checkpoint(path)
    split = chronological_split(stream, config.train_frac, config.val_frac,
                                config.unseen_frac, config.seed)
    k_sp = int(tensors["dgcnn.k_sp"]) if "dgcnn.k_sp" in tensors else None
    model = LinkModel(stream, config, split, k_sp=k_sp)
    model.memory.s[:] = tensors["memory.s"]
    model.memory.last_update[:] = tensors["memory.last_update"]
    model.enc.w[:] = tensors["time_enc.w"]
    model.enc.b[:] = tensors["time_enc.b"]
    for name in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
        getattr(model.gru, name)[:] = tensors[f"gru.{name}"]
    if isinstance(model.embedding, TimeProjectionEmbedding):
        model.embedding.w.data[:] = tensors["proj.w"]
    if model.dgcnn is not None:
        for i, w in enumerate(model.dgcnn.conv_ws):
            w.data[:] = tensors[f"dgcnn.conv_w{i}"]
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                     "dense1_w", "dense1_b", "dense2_w", "dense2_b"):
            getattr(model.dgcnn, name).data[:] = tensors[f"dgcnn.{name}"]
    if model.mlp is not None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            getattr(model.mlp, name).data[:] = tensors[f"mlp.{name}"]
    return model


def evaluate_from_checkpoint(stream: EventStream, config: TrainConfig, path,
                             region: str) -> dict:
    """Score a region starting from a checkpoint's end-of-training memory."""
    model = load_model(path, stream, config)
    if region == "test":
        replay_region(stream, model.split, model, config, "val")
    scores = score_region(stream, model.split, model, config, region)
    return {
        "region": region,
        "ap": scores.ap(None),
        "ap_seen": scores.ap("seen"),
        "ap_unseen": scores.ap("unseen"),
    }
