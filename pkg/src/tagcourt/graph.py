"""Text-attributed graphs: loading, validation, and adjacency queries.

A graph is an immutable set of nodes with raw text attributes plus a simple
undirected 0/1 adjacency stored in compressed sparse row form. All mutation
helpers return new graph objects; instances are safe to share across threads.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .fileio import atomic_write_text, read_jsonl

logger = logging.getLogger(__name__)

ANOMALY_LABELS = ("contextual", "structural_clique", "structural_edge")
ALL_LABELS = ("normal",) + ANOMALY_LABELS


class GraphFormatError(ValueError):
    """Malformed node/edge input (bad line, self-loop, unknown endpoint)."""


@dataclass(frozen=True)
class NodeRecord:
    """One node: integer id, raw text attribute, optional title."""

    id: int
    text: str
    title: Optional[str] = None


@dataclass(frozen=True)
class TextAttributedGraph:
    """Immutable undirected graph whose nodes carry raw text.

    Adjacency is symmetric with zero diagonal; neighbor lists are sorted
    ascending. Node ids are dense 0..n-1 (the loader remaps sparse ids).
    """

    nodes: Tuple[NodeRecord, ...]
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        """Undirected edge count."""
        return int(len(self.indices)) // 2

    def neighbors(self, v: int) -> np.ndarray:
        """Sorted neighbor ids of ``v``; empty for isolated nodes."""
        if not 0 <= v < self.n:
            raise IndexError(f"node id {v} out of range [0, {self.n})")
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return pos < len(row) and row[pos] == v

    def edges(self) -> Iterator[Tuple[int, int]]:
        """Each undirected edge once, as (u, v) with u < v, in sorted order."""
        for u in range(self.n):
            for v in self.neighbors(u):
                if u < int(v):
                    yield u, int(v)

    def texts(self) -> List[str]:
        return [node.text for node in self.nodes]


@dataclass
class LoadInfo:
    """Side information from building a graph (dedup count, id remapping)."""

    duplicate_edges: int = 0
    id_remapped: bool = False
    idmap: Optional[Dict[int, int]] = None


def build_graph(
    nodes: Sequence[NodeRecord],
    edges: Iterable[Tuple[int, int]],
    allow_empty_text: bool = False,
) -> Tuple[TextAttributedGraph, LoadInfo]:
    """Validate nodes and edges and assemble a graph.

    Node ids are remapped to dense 0..n-1 when sparse (mapping recorded in
    the returned LoadInfo). Duplicate edges are deduplicated with a warning
    count; self-loops are rejected.
    """
    if not nodes:
        raise GraphFormatError("graph requires at least one node")
    ids = [node.id for node in nodes]
    if len(set(ids)) != len(ids):
        dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
        raise GraphFormatError(f"duplicate node ids: {dupes[:5]}")
    if any(i < 0 for i in ids):
        raise GraphFormatError("node ids must be non-negative")

    order = sorted(range(len(nodes)), key=lambda k: nodes[k].id)
    sorted_nodes = [nodes[k] for k in order]
    info = LoadInfo()
    if [node.id for node in sorted_nodes] != list(range(len(nodes))):
        info.id_remapped = True
        info.idmap = {node.id: new for new, node in enumerate(sorted_nodes)}
        sorted_nodes = [
            NodeRecord(id=new, text=node.text, title=node.title)
            for new, node in enumerate(sorted_nodes)
        ]
    remap = info.idmap

    if not allow_empty_text:
        for node in sorted_nodes:
            if not node.text:
                raise GraphFormatError(f"node {node.id} has empty text")

    n = len(sorted_nodes)
    seen = set()
    for u, v in edges:
        if remap is not None:
            try:
                u, v = remap[u], remap[v]
            except KeyError as exc:
                raise GraphFormatError(f"edge endpoint {exc.args[0]} not in node set") from exc
        if u == v:
            raise GraphFormatError(f"self-loop on node {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edge endpoint {max(u, v)} not in node set")
        key = (u, v) if u < v else (v, u)
        if key in seen:
            info.duplicate_edges += 1
            continue
        seen.add(key)
    if info.duplicate_edges:
        logger.warning("deduplicated %d duplicate edge(s)", info.duplicate_edges)

    adj: List[List[int]] = [[] for _ in range(n)]
    for u, v in seen:
        adj[u].append(v)
        adj[v].append(u)
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for v in range(n):
        row = np.asarray(sorted(adj[v]), dtype=np.int64)
        chunks.append(row)
        indptr[v + 1] = indptr[v] + len(row)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    graph = TextAttributedGraph(nodes=tuple(sorted_nodes), indptr=indptr, indices=indices)
    return graph, info


def load_graph(
    nodes_path, edges_path, allow_empty_text: bool = False
) -> Tuple[TextAttributedGraph, LoadInfo]:
    """Load a graph from nodes.jsonl + edges.tsv."""
    nodes = []
    for lineno, obj in enumerate(read_jsonl(nodes_path), start=1):
        try:
            nodes.append(
                NodeRecord(id=int(obj["id"]), text=str(obj["text"]), title=obj.get("title"))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"{nodes_path}:{lineno}: bad node record: {exc}") from exc

    edges = []
    with open(edges_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{edges_path}:{lineno}: expected two tab-separated ids, got {line!r}"
                )
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise GraphFormatError(f"{edges_path}:{lineno}: non-integer id: {exc}") from exc

    try:
        return build_graph(nodes, edges, allow_empty_text=allow_empty_text)
    except GraphFormatError as exc:
        raise GraphFormatError(f"{edges_path}: {exc}") from exc


def save_graph(graph: TextAttributedGraph, nodes_path, edges_path) -> None:
    """Write nodes.jsonl and edges.tsv; round-trips through load_graph."""
    lines = []
    for node in graph.nodes:
        lines.append(json.dumps({"id": node.id, "title": node.title, "text": node.text}))
    atomic_write_text(nodes_path, "".join(line + "\n" for line in lines))
    atomic_write_text(edges_path, "".join(f"{u}\t{v}\n" for u, v in graph.edges()))


def add_edges(
    graph: TextAttributedGraph, new_edges: Iterable[Tuple[int, int]]
) -> TextAttributedGraph:
    """New graph with ``new_edges`` added (already-present pairs are ignored)."""
    extra: Dict[int, set] = {}
    for u, v in new_edges:
        if u == v:
            raise GraphFormatError(f"self-loop on node {u}")
        if not (0 <= u < graph.n and 0 <= v < graph.n):
            raise GraphFormatError(f"edge endpoint {max(u, v)} out of range")
        if graph.has_edge(u, v):
            continue
        extra.setdefault(u, set()).add(v)
        extra.setdefault(v, set()).add(u)
    if not extra:
        return graph
    indptr = np.zeros(graph.n + 1, dtype=np.int64)
    chunks = []
    for v in range(graph.n):
        row = graph.neighbors(v)
        if v in extra:
            row = np.asarray(sorted(set(row.tolist()) | extra[v]), dtype=np.int64)
        chunks.append(row)
        indptr[v + 1] = indptr[v] + len(row)
    return TextAttributedGraph(
        nodes=graph.nodes, indptr=indptr, indices=np.concatenate(chunks)
    )


def replace_texts(
    graph: TextAttributedGraph, new_texts: Dict[int, str]
) -> TextAttributedGraph:
    """New graph with the given node texts replaced; adjacency untouched."""
    nodes = list(graph.nodes)
    for v, text in new_texts.items():
        nodes[v] = NodeRecord(id=v, text=text, title=nodes[v].title)
    return TextAttributedGraph(nodes=tuple(nodes), indptr=graph.indptr, indices=graph.indices)


def normalized_adjacency(graph: TextAttributedGraph, dtype=np.float64) -> sp.csr_matrix:
    """Symmetric renormalized propagation operator over A with self-loops.

    Every entry equals 1/sqrt((deg(u)+1)(deg(v)+1)) for connected u, v plus
    the diagonal, so all stored values lie in (0, 1] and isolated nodes map
    to themselves with weight 1.
    """
    n = graph.n
    deg = graph.degrees().astype(np.float64) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(graph.indptr))
    cols = graph.indices
    rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([cols, np.arange(n, dtype=np.int64)])
    vals = dinv[rows] * dinv[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=dtype)
    mat.sort_indices()
    return mat


def degree_distribution(graph: TextAttributedGraph) -> Dict[int, int]:
    """Histogram degree -> node count (self-loops are impossible by invariant)."""
    return dict(sorted(Counter(int(d) for d in graph.degrees()).items()))


@dataclass
class GroundTruth:
    """Per-node anomaly labels; nodes not present are implicitly normal."""

    labels: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for v, label in self.labels.items():
            if label not in ALL_LABELS:
                raise ValueError(f"node {v}: unknown label {label!r}")

    def label_of(self, v: int) -> str:
        return self.labels.get(v, "normal")

    def is_anomalous(self, v: int) -> bool:
        return self.label_of(v) != "normal"

    def anomalies(self) -> List[int]:
        return sorted(v for v, label in self.labels.items() if label != "normal")

    def counts(self) -> Dict[str, int]:
        return dict(Counter(label for label in self.labels.values() if label != "normal"))

    def binary(self, n: int) -> np.ndarray:
        """0/1 vector over nodes 0..n-1 (1 = anomalous)."""
        out = np.zeros(n, dtype=np.int64)
        for v, label in self.labels.items():
            if label != "normal":
                out[v] = 1
        return out

    def merge(self, delta: Dict[int, str]) -> None:
        for v, label in delta.items():
            if self.labels.get(v, "normal") != "normal":
                raise ValueError(f"node {v} already labeled {self.labels[v]!r}")
            if label not in ALL_LABELS:
                raise ValueError(f"node {v}: unknown label {label!r}")
            self.labels[v] = label


def save_labels(truth: GroundTruth, path, n: int) -> None:
    """Write labels.jsonl with an explicit entry for every node."""
    lines = [
        json.dumps({"id": v, "label": truth.label_of(v)}) for v in range(n)
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_labels(path) -> GroundTruth:
    labels: Dict[int, str] = {}
    for lineno, obj in enumerate(read_jsonl(path), start=1):
        try:
            labels[int(obj["id"])] = str(obj["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"{path}:{lineno}: bad label record: {exc}") from exc
    return GroundTruth(labels=labels)


def save_idmap(idmap: Dict[int, int], path) -> None:
    atomic_write_text(
        path, json.dumps({str(k): v for k, v in sorted(idmap.items())}, indent=2) + "\n"
    )
