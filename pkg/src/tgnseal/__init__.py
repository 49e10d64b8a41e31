"""Dynamic-graph link prediction: temporal memory + enclosing-subgraph decoding.

The pieces compose left to right: ingest a call log (or synthesize one),
index it, maintain per-node memories over the stream, extract labeled
enclosing subgraphs per candidate pair, classify them, and compare runs.
"""

from .events import (
    Event,
    EventStream,
    SplitSpec,
    TemporalAdjacency,
    build_adjacency,
    chronological_split,
    neighbors_before,
    sample_negative,
)
from .ingest import (
    IdMap,
    RawCdrRecord,
    SynthParams,
    clean_events,
    generate_synthetic,
    parse_cdr_csv,
    read_event_csv,
    write_event_csv,
)
from .memory import (
    GruParams,
    IdentityEmbedding,
    MemoryState,
    RawMessageBuffer,
    TimeEncoderParams,
    TimeProjectionEmbedding,
    aggregate_messages,
    compute_messages,
    embed_identity,
    embed_time_projection,
    flush_batch,
    time_encode,
    update_memory,
)
from .metrics import average_precision, mann_whitney_u
from .subgraph import (
    EnclosingSubgraph,
    assemble_node_features,
    drnl_from_distances,
    drnl_label,
    extract_enclosing_subgraph,
)
from .dgcnn import DgcnnParams, Prediction, predict_link, sort_pooling
from .training import (
    LinkModel,
    MetricsReport,
    TrainConfig,
    baseline_mlp_decode,
    evaluate,
    run_experiment,
    train_epoch,
    train_run,
)

__version__ = "0.1.0"
