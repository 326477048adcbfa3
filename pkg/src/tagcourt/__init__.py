"""Anomaly detection on text-attributed graphs.

Stage I generates per-node evidence and verdicts through prosecutor/judge
LLM roles; Stage II fuses raw-text and verdict embeddings with a gating
mechanism, trains a contrastive graph encoder, and scores nodes over
repeated sampling rounds. Includes the anomaly-injection benchmark,
ranking metrics, and a CLI wiring the full pipeline.
"""

from .backends import HttpBackend, LLMResponse, OracleBackend
from .config import PipelineConfig, validate_config
from .cost import CostReport, ModelCost, TokenTally, estimate_cost_time
from .court import CourtConfig, EvidenceRecord, EvidenceStore, Verdict, run_court
from .detector import CourtGraphDetector
from .embed import (
    EmbeddingMatrix,
    cosine_similarity,
    embed_hash,
    embed_remote,
    embed_texts,
    load_embeddings,
    save_embeddings,
)
from .graph import (
    GroundTruth,
    NodeRecord,
    TextAttributedGraph,
    degree_distribution,
    load_graph,
    load_labels,
    normalized_adjacency,
    save_graph,
    save_labels,
)
from .inject import (
    InjectionConfig,
    InjectionReport,
    inject_all,
    inject_contextual,
    inject_structural_clique,
    inject_structural_edges,
)
from .metrics import MetricsReport, average_precision, compute_metrics, roc_auc, roc_curve
from .nn import (
    Batch,
    FusionParams,
    backward,
    batch_loss,
    discriminate,
    gate_fuse,
    gcn_forward,
    grad_check,
    init_params,
    layer_norm,
    load_params,
    readout,
    save_params,
)
from .synth import SyntheticConfig, generate_synthetic_tag
from .training import TrainConfig, TrainResult, score_nodes, train

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "CostReport",
    "CourtConfig",
    "CourtGraphDetector",
    "EmbeddingMatrix",
    "EvidenceRecord",
    "EvidenceStore",
    "FusionParams",
    "GroundTruth",
    "HttpBackend",
    "InjectionConfig",
    "InjectionReport",
    "LLMResponse",
    "MetricsReport",
    "ModelCost",
    "NodeRecord",
    "OracleBackend",
    "PipelineConfig",
    "SyntheticConfig",
    "TextAttributedGraph",
    "TokenTally",
    "TrainConfig",
    "TrainResult",
    "Verdict",
    "average_precision",
    "backward",
    "batch_loss",
    "compute_metrics",
    "cosine_similarity",
    "degree_distribution",
    "discriminate",
    "embed_hash",
    "embed_remote",
    "embed_texts",
    "estimate_cost_time",
    "gate_fuse",
    "gcn_forward",
    "generate_synthetic_tag",
    "grad_check",
    "init_params",
    "inject_all",
    "inject_contextual",
    "inject_structural_clique",
    "inject_structural_edges",
    "layer_norm",
    "load_embeddings",
    "load_graph",
    "load_labels",
    "load_params",
    "normalized_adjacency",
    "readout",
    "roc_auc",
    "roc_curve",
    "run_court",
    "save_embeddings",
    "save_graph",
    "save_labels",
    "save_params",
    "score_nodes",
    "train",
    "validate_config",
]
