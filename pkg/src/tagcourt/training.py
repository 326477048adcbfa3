"""Contrastive training and sampling-round anomaly scoring.

Training performs a full-graph forward each step with the loss restricted to
the current batch, using Adam over shuffled batches; everything is
deterministic given the seed. Scoring repeats R stochastic rounds per node,
pairing each node with a fresh sample of its own neighbors (positive) and a
random other node's sampled neighborhood (negative), and averages the
negative-minus-positive similarity gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .graph import TextAttributedGraph, normalized_adjacency
from .nn import Batch, FusionParams, backward, fuse_forward, gcn_forward, init_params
from .seeding import derive_seed, derive_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Per-dataset (learning_rate, epochs, batch_size, weight_decay) defaults.
DATASET_PRESETS = {
    "cora": (3e-3, 25, 256, 1e-4),
    "pubmed": (5e-4, 100, 512, 1e-4),
    "history": (5e-3, 25, 512, 0.0),
    "arxiv": (5e-3, 100, 256, 1e-3),
}


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 25
    batch_size: int = 64
    weight_decay: float = 1e-3
    hidden_dim: int = 64
    gnn_layers: int = 2
    neighbor_cap: int = 8
    rounds: int = 256
    fusion_mode: str = "gate"
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 2 or self.hidden_dim < 1:
            raise ValueError("learning_rate, batch_size >= 2, hidden_dim must be positive")
        if self.epochs < 0 or self.rounds < 1 or self.neighbor_cap < 1:
            raise ValueError("epochs >= 0, rounds >= 1, neighbor_cap >= 1 required")
        if self.gnn_layers != 2:
            raise ValueError("only the two-layer graph encoder is supported")
        if self.fusion_mode not in ("gate", "mean", "verdict_only", "orig_only"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")

    @classmethod
    def for_dataset(cls, profile: str, **overrides) -> "TrainConfig":
        lr, epochs, batch, wd = DATASET_PRESETS.get(profile, DATASET_PRESETS["cora"])
        base = dict(learning_rate=lr, epochs=epochs, batch_size=batch, weight_decay=wd)
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainResult:
    params: FusionParams
    loss_trace: List[float] = field(default_factory=list)  # per-epoch mean loss


def make_batch(
    graph: TextAttributedGraph, node_ids: np.ndarray, cap: int, rng: np.random.Generator
) -> Batch:
    """Sample capped neighbor lists and a random cyclic derangement."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    lists = []
    for v in node_ids:
        nbrs = graph.neighbors(int(v))
        if len(nbrs) > cap:
            nbrs = rng.choice(nbrs, size=cap, replace=False)
        lists.append(np.asarray(np.sort(nbrs), dtype=np.int64))
    nb = len(node_ids)
    perm = rng.permutation(nb)
    negatives = np.empty(nb, dtype=np.int64)
    negatives[perm] = perm[(np.arange(nb) + 1) % nb]  # one cycle: no fixed points
    return Batch(nodes=node_ids, neighbor_lists=lists, negatives=negatives)


def _epoch_chunks(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train(
    graph: TextAttributedGraph,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    cfg: TrainConfig,
) -> TrainResult:
    """Adam-minimize the contrastive loss; returns params and loss trace."""
    cfg.validate()
    if x_orig.shape[0] != graph.n or x_verd.shape[0] != graph.n:
        raise ValueError("embeddings must be row-aligned with graph nodes")
    if x_orig.shape != x_verd.shape:
        raise ValueError("orig and verdict embeddings must share a shape")

    dtype = np.float32
    x_orig = np.ascontiguousarray(x_orig, dtype=dtype)
    x_verd = np.ascontiguousarray(x_verd, dtype=dtype)
    a_hat = normalized_adjacency(graph, dtype=dtype)
    params = init_params(x_orig.shape[1], cfg.hidden_dim, derive_seed(cfg.seed, "init"), dtype)

    moments = {name: (np.zeros_like(arr), np.zeros_like(arr)) for name, arr in params.items()}
    step = 0
    trace: List[float] = []
    for epoch in range(cfg.epochs):
        rng = derive_rng(cfg.seed, "train", epoch)
        order = rng.permutation(graph.n)
        losses = []
        for chunk in _epoch_chunks(order, cfg.batch_size):
            batch = make_batch(graph, chunk, cfg.neighbor_cap, rng)
            loss, grads = backward(
                params, batch, a_hat, x_orig, x_verd, cfg.weight_decay, cfg.fusion_mode
            )
            losses.append(loss)
            step += 1
            bias1 = 1.0 - ADAM_BETA1**step
            bias2 = 1.0 - ADAM_BETA2**step
            for name, arr in params.items():
                g = grads[name].astype(dtype)
                m, v = moments[name]
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                arr -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        trace.append(float(np.mean(losses)))
    return TrainResult(params=params, loss_trace=trace)


def score_nodes(
    params: FusionParams,
    graph: TextAttributedGraph,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    rounds: int = 256,
    neighbor_cap: int = 8,
    seed: int = 0,
    fusion_mode: str = "gate",
    node_keys: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Mean over R rounds of (negative similarity - positive similarity).

    Each node draws its per-round randomness from a stream keyed on
    (seed, node_key); neighbor and partner choices are made in node-key
    order, so relabeling the graph while carrying keys along permutes the
    scores exactly. Scores lie in (-1, 1); higher means more anomalous.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    n = graph.n
    if node_keys is None:
        node_keys = np.arange(n, dtype=np.int64)
    node_keys = np.asarray(node_keys, dtype=np.int64)
    if node_keys.shape != (n,) or len(set(node_keys.tolist())) != n:
        raise ValueError("node_keys must be a permutation-unique vector of length n")

    dtype = params.dtype
    x_orig = np.ascontiguousarray(x_orig, dtype=dtype)
    x_verd = np.ascontiguousarray(x_verd, dtype=dtype)
    a_hat = normalized_adjacency(graph, dtype=dtype)
    h, _ = fuse_forward(params, x_orig, x_verd, fusion_mode)
    z, _ = gcn_forward(params, a_hat, h)
    q = h @ params.w_bil.T  # (n, d): q[v] = W h_v

    order = np.argsort(node_keys, kind="mergesort")  # nodes in ascending key order
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    d_hid = z.shape[1]
    readouts = np.empty((n, rounds, d_hid), dtype=dtype)
    partners = np.empty((n, rounds), dtype=np.int64)
    for v in range(n):
        rng = derive_rng(seed, "score", int(node_keys[v]))
        nbrs = graph.neighbors(v)
        nbrs_sorted = nbrs[np.argsort(node_keys[nbrs], kind="mergesort")]
        deg = len(nbrs_sorted)
        if deg == 0:
            readouts[v] = z[v]
        elif deg <= neighbor_cap:
            readouts[v] = z[nbrs_sorted].mean(axis=0)
        else:
            draws = rng.random((rounds, deg))
            picks = np.argpartition(draws, neighbor_cap, axis=1)[:, :neighbor_cap]
            readouts[v] = z[nbrs_sorted[picks]].mean(axis=1)
        j = rng.integers(0, n - 1, size=rounds)
        j += j >= rank[v]  # skip self in key order
        partners[v] = order[j]

    s_pos = expit(np.einsum("vrd,vd->vr", readouts, q))
    neg_read = readouts[partners, np.arange(rounds)[None, :], :]
    s_neg = expit(np.einsum("vrd,vd->vr", neg_read, q))
    return np.asarray((s_neg - s_pos).mean(axis=1), dtype=np.float64)
