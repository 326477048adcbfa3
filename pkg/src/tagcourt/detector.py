"""Sklearn-style estimator wrapping contrastive training and round scoring.

The detector is transductive: ``fit`` trains on a graph plus its raw-text
and verdict embeddings and immediately scores every node, exposing
``decision_scores_`` (higher = more anomalous) like other outlier detectors.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .embed import EmbeddingMatrix
from .graph import TextAttributedGraph
from .training import TrainConfig, score_nodes, train


def _as_matrix(x, n: int, name: str) -> np.ndarray:
    if isinstance(x, EmbeddingMatrix):
        x = x.vectors
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"{name} must be a 2-D array with one row per node (n={n})")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


class CourtGraphDetector(BaseEstimator):
    """Unsupervised node anomaly detector for text-attributed graphs.

    Fuses raw-text and verdict embeddings through a gated mechanism, encodes
    the graph with a two-layer convolution, and trains a bilinear
    node-subgraph discriminator; anomaly scores average the negative-minus-
    positive similarity gap over ``rounds`` sampling rounds.

    Parameters
    ----------
    learning_rate, epochs, batch_size, weight_decay : Adam settings.
    hidden_dim : width of the graph-encoder output.
    neighbor_cap : max neighbors per readout sample.
    rounds : scoring rounds averaged into the final score.
    fusion_mode : "gate", "mean", "verdict_only", or "orig_only".
    seed : master seed; all randomness derives from it.

    Examples
    --------
    >>> det = CourtGraphDetector(epochs=5, rounds=32, seed=1)
    >>> det.fit(graph, x_orig, x_verd)          # doctest: +SKIP
    >>> scores = det.decision_scores_           # doctest: +SKIP
    """

    def __init__(
        self,
        learning_rate: float = 3e-3,
        epochs: int = 25,
        batch_size: int = 64,
        weight_decay: float = 1e-3,
        hidden_dim: int = 64,
        neighbor_cap: int = 8,
        rounds: int = 256,
        fusion_mode: str = "gate",
        seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.hidden_dim = hidden_dim
        self.neighbor_cap = neighbor_cap
        self.rounds = rounds
        self.fusion_mode = fusion_mode
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            hidden_dim=self.hidden_dim,
            neighbor_cap=self.neighbor_cap,
            rounds=self.rounds,
            fusion_mode=self.fusion_mode,
            seed=self.seed,
        )

    def fit(self, graph: TextAttributedGraph, x_orig, x_verd=None):
        """Train on the graph and score every node.

        ``x_verd`` may be omitted for fusion modes that ignore it; a zero
        matrix is substituted.
        """
        if not isinstance(graph, TextAttributedGraph):
            raise TypeError("graph must be a TextAttributedGraph")
        x_orig = _as_matrix(x_orig, graph.n, "x_orig")
        if x_verd is None:
            x_verd = np.zeros_like(x_orig)
        x_verd = _as_matrix(x_verd, graph.n, "x_verd")
        if x_verd.shape != x_orig.shape:
            raise ValueError("x_orig and x_verd must share a shape")

        result = train(graph, x_orig, x_verd, self._train_config())
        self.params_ = result.params
        self.loss_trace_ = result.loss_trace
        self.decision_scores_ = self.decision_function(graph, x_orig, x_verd)
        return self

    def decision_function(
        self, graph: TextAttributedGraph, x_orig, x_verd=None,
        node_keys: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Anomaly scores in (-1, 1) for the given graph under the trained params."""
        if not hasattr(self, "params_"):
            raise RuntimeError("detector is not fitted; call fit() first")
        x_orig = _as_matrix(x_orig, graph.n, "x_orig")
        if x_verd is None:
            x_verd = np.zeros_like(x_orig)
        x_verd = _as_matrix(x_verd, graph.n, "x_verd")
        return score_nodes(
            self.params_, graph, x_orig, x_verd,
            rounds=self.rounds, neighbor_cap=self.neighbor_cap,
            seed=self.seed, fusion_mode=self.fusion_mode, node_keys=node_keys,
        )
