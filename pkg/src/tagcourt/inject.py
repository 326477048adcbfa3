"""Anomaly injection: contextual text perturbation and structural edge edits.

Four strategies, each applied to ``m`` fresh targets so anomaly classes stay
disjoint: contextual insertion and replacement splice text from a maximally
dissimilar donor; structural injection plants dense cliques or degree-sampled
random edges. Contextual strategies never touch adjacency, structural ones
never touch text, and the mutated graph stays simple.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embed import EmbeddingMatrix, cosine_similarity
from .graph import (
    GroundTruth,
    TextAttributedGraph,
    add_edges,
    degree_distribution,
    replace_texts,
)
from .seeding import derive_rng

# Sentence boundary: ., ! or ? followed by whitespace or end of text.
_SENT_SPLIT_RE = re.compile(r"(?<=[.!?])(?:\s+|\Z)")


class InjectionError(ValueError):
    pass


@dataclass
class InjectionConfig:
    """m targets per strategy; K-way candidate search for contextual donors;
    p cliques of q nodes (p*q == m); sentence fractions for text edits."""

    m: int
    k: int = 50
    q: int = 3
    p: int = 0
    insert_fraction: float = 0.3
    replace_fraction: float = 0.34
    seed: int = 0

    def __post_init__(self):
        if self.p == 0 and self.m % self.q == 0:
            self.p = self.m // self.q

    def validate(self, n_nodes: Optional[int] = None) -> None:
        if self.m < 1:
            raise InjectionError("m must be >= 1")
        if self.k < 2:
            raise InjectionError("candidate set size k must be >= 2")
        if self.q < 2:
            raise InjectionError("clique size q must be >= 2")
        if self.p * self.q != self.m:
            raise InjectionError(f"p*q must equal m (got p={self.p}, q={self.q}, m={self.m})")
        for name, frac in (("insert_fraction", self.insert_fraction),
                           ("replace_fraction", self.replace_fraction)):
            if not (0.0 < frac <= 1.0):
                raise InjectionError(f"{name} must lie in (0, 1]")
        if n_nodes is not None and 4 * self.m > n_nodes / 2:
            raise InjectionError(f"4*m={4 * self.m} exceeds half of n={n_nodes}")


@dataclass
class InjectionReport:
    """Per-strategy accounting. The injected edge list and the donor text
    snippets also feed the oracle backend's ground truth."""

    m: int
    targets: Dict[str, List[int]] = field(default_factory=dict)
    edges_added: List[Tuple[int, int]] = field(default_factory=list)
    contextual_snippets: Dict[int, str] = field(default_factory=dict)
    warnings: int = 0

    def injected_edge_set(self) -> set:
        return {(min(u, v), max(u, v)) for u, v in self.edges_added}

    def to_dict(self) -> Dict:
        return {
            "m": self.m,
            "targets": {k: sorted(v) for k, v in self.targets.items()},
            "edges_added": [list(e) for e in sorted(self.edges_added)],
            "contextual_snippets": {str(k): v for k, v in sorted(self.contextual_snippets.items())},
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, obj: Dict) -> "InjectionReport":
        return cls(
            m=int(obj["m"]),
            targets={k: list(map(int, v)) for k, v in obj.get("targets", {}).items()},
            edges_added=[(int(u), int(v)) for u, v in obj.get("edges_added", [])],
            contextual_snippets={
                int(k): str(v) for k, v in obj.get("contextual_snippets", {}).items()
            },
            warnings=int(obj.get("warnings", 0)),
        )


def split_sentences(text: str) -> List[str]:
    return [part for part in _SENT_SPLIT_RE.split(text) if part.strip()]


def _unlabeled(n: int, truth: GroundTruth) -> np.ndarray:
    return np.asarray([v for v in range(n) if not truth.is_anomalous(v)], dtype=np.int64)


def _pick_targets(pool: np.ndarray, m: int, rng: np.random.Generator, what: str) -> np.ndarray:
    if len(pool) < m:
        raise InjectionError(f"need {m} unlabeled nodes for {what}, only {len(pool)} available")
    return rng.choice(pool, size=m, replace=False)


def inject_contextual(
    graph: TextAttributedGraph,
    embeddings: EmbeddingMatrix,
    cfg: InjectionConfig,
    strategy: str,
    existing: Optional[GroundTruth] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[TextAttributedGraph, Dict[int, str], Dict[int, str]]:
    """Perturb m target texts using the least-similar of K candidate donors.

    ``insertion`` splices a contiguous run of donor sentences at a random
    sentence boundary; ``replacement`` swaps r random target sentences for r
    random donor sentences. Adjacency is untouched. Returns the mutated
    graph, the label delta, and the donor snippet placed into each target.
    """
    if strategy not in ("insertion", "replacement"):
        raise InjectionError(f"unknown contextual strategy {strategy!r}")
    if embeddings.n != graph.n:
        raise InjectionError("embeddings must be row-aligned with graph nodes")
    cfg.validate()
    truth = existing if existing is not None else GroundTruth()
    rng = rng if rng is not None else derive_rng(cfg.seed, "inject", strategy)

    targets = _pick_targets(_unlabeled(graph.n, truth), cfg.m, rng, strategy)
    target_set = set(int(t) for t in targets)
    pool = np.asarray(
        [v for v in range(graph.n) if v not in target_set and not truth.is_anomalous(v)],
        dtype=np.int64,
    )
    if len(pool) < cfg.k:
        raise InjectionError(f"candidate pool has {len(pool)} nodes, need k={cfg.k}")

    new_texts: Dict[int, str] = {}
    delta: Dict[int, str] = {}
    snippets: Dict[int, str] = {}
    for v in (int(t) for t in targets):
        candidates = rng.choice(pool, size=cfg.k, replace=False)
        sims = [cosine_similarity(embeddings.vectors[v], embeddings.vectors[c]) for c in candidates]
        donor = int(candidates[int(np.argmin(sims))])
        donor_sents = split_sentences(graph.nodes[donor].text)
        if not donor_sents:
            raise InjectionError(f"donor node {donor} has zero sentences")
        target_sents = split_sentences(graph.nodes[v].text)

        if strategy == "insertion":
            run = max(1, math.ceil(cfg.insert_fraction * len(donor_sents)))
            start = int(rng.integers(0, len(donor_sents) - run + 1))
            boundary = int(rng.integers(0, len(target_sents) + 1))
            placed = donor_sents[start : start + run]
            mutated = target_sents[:boundary] + placed + target_sents[boundary:]
        else:
            if not target_sents:
                raise InjectionError(f"target node {v} has zero sentences")
            r = max(1, math.ceil(cfg.replace_fraction * len(target_sents)))
            r = min(r, len(target_sents), len(donor_sents))
            positions = sorted(int(i) for i in rng.choice(len(target_sents), size=r, replace=False))
            picks = rng.choice(len(donor_sents), size=r, replace=False)
            placed = [donor_sents[int(pick)] for pick in picks]
            mutated = list(target_sents)
            for pos, sent in zip(positions, placed):
                mutated[pos] = sent
        new_texts[v] = " ".join(mutated)
        snippets[v] = " ".join(placed)
        delta[v] = "contextual"

    return replace_texts(graph, new_texts), delta, snippets


def inject_structural_clique(
    graph: TextAttributedGraph,
    cfg: InjectionConfig,
    existing: Optional[GroundTruth] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[TextAttributedGraph, Dict[int, str], List[Tuple[int, int]]]:
    """Fully connect p random groups of q unlabeled nodes each."""
    cfg.validate()
    truth = existing if existing is not None else GroundTruth()
    rng = rng if rng is not None else derive_rng(cfg.seed, "inject", "clique")

    delta: Dict[int, str] = {}
    added: List[Tuple[int, int]] = []
    for _ in range(cfg.p):
        pool = np.asarray(
            [v for v in range(graph.n) if not truth.is_anomalous(v) and v not in delta],
            dtype=np.int64,
        )
        members = sorted(int(v) for v in _pick_targets(pool, cfg.q, rng, "clique"))
        for i, u in enumerate(members):
            delta[u] = "structural_clique"
            for v in members[i + 1 :]:
                if not graph.has_edge(u, v):
                    added.append((u, v))
    return add_edges(graph, added), delta, added


def inject_structural_edges(
    graph: TextAttributedGraph,
    cfg: InjectionConfig,
    existing: Optional[GroundTruth] = None,
    degree_hist: Optional[Dict[int, int]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[TextAttributedGraph, Dict[int, str], List[Tuple[int, int]], int]:
    """Add degree-distribution-sampled random edges from m fresh targets.

    Edge counts are drawn from the empirical degree distribution of the
    pre-injection graph (uniform over observed node degrees, zero draws
    redrawn so every target gains at least one edge when possible); counts
    exceeding the available non-neighbors are capped with a warning.
    """
    cfg.validate()
    truth = existing if existing is not None else GroundTruth()
    rng = rng if rng is not None else derive_rng(cfg.seed, "inject", "edges")
    hist = degree_hist if degree_hist is not None else degree_distribution(graph)
    observed = np.asarray(
        [deg for deg, count in sorted(hist.items()) for _ in range(count)], dtype=np.int64
    )

    targets = _pick_targets(_unlabeled(graph.n, truth), cfg.m, rng, "edge injection")
    delta: Dict[int, str] = {}
    added: List[Tuple[int, int]] = []
    warnings = 0
    mutated = graph
    for v in (int(t) for t in targets):
        k = 0
        for _ in range(100):
            k = int(observed[int(rng.integers(len(observed)))])
            if k > 0:
                break
        k = max(1, k)
        taken = set(int(u) for u in mutated.neighbors(v))
        available = np.asarray(
            [u for u in range(graph.n) if u != v and u not in taken], dtype=np.int64
        )
        if k > len(available):
            warnings += 1
            k = len(available)
        if k > 0:
            chosen = rng.choice(available, size=k, replace=False)
            new = [(v, int(u)) for u in chosen]
            added.extend((min(a, b), max(a, b)) for a, b in new)
            mutated = add_edges(mutated, new)
        delta[v] = "structural_edge"
    return mutated, delta, added, warnings


def inject_all(
    graph: TextAttributedGraph,
    embeddings: EmbeddingMatrix,
    cfg: InjectionConfig,
) -> Tuple[TextAttributedGraph, GroundTruth, InjectionReport]:
    """Run insertion, replacement, clique, and edge strategies (m targets
    each) with disjoint label sets; total anomalies are exactly 4*m."""
    cfg.validate(graph.n)
    truth = GroundTruth()
    report = InjectionReport(m=cfg.m)
    pre_hist = degree_distribution(graph)

    mutated, delta, snippets = inject_contextual(graph, embeddings, cfg, "insertion", existing=truth)
    truth.merge(delta)
    report.targets["insertion"] = sorted(delta)
    report.contextual_snippets.update(snippets)

    mutated, delta, snippets = inject_contextual(
        mutated, embeddings, cfg, "replacement", existing=truth
    )
    truth.merge(delta)
    report.targets["replacement"] = sorted(delta)
    report.contextual_snippets.update(snippets)

    mutated, delta, clique_edges = inject_structural_clique(mutated, cfg, existing=truth)
    truth.merge(delta)
    report.targets["clique"] = sorted(delta)
    report.edges_added.extend(clique_edges)

    mutated, delta, rand_edges, warnings = inject_structural_edges(
        mutated, cfg, existing=truth, degree_hist=pre_hist
    )
    truth.merge(delta)
    report.targets["edge"] = sorted(delta)
    report.edges_added.extend(rand_edges)
    report.warnings = warnings

    assert len(truth.anomalies()) == 4 * cfg.m
    return mutated, truth, report
