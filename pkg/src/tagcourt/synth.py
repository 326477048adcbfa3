"""Desk-scale synthetic text-attributed graphs.

A planted-partition topology with community-specific topic vocabularies.
Node texts mimic real prose for a bag-of-tokens encoder: most topic-word
occurrences appear as morphologically decorated surface forms (marked with
``qq`` plus a unique suffix) that a token hasher cannot unify, a small
per-node jargon pool adds idiosyncratic noise, and a shared function-word
list fills the rest. The canonical stem is always recoverable by splitting
on the ``qq`` marker, which is how the oracle backend's summaries cite
content.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .graph import NodeRecord, TextAttributedGraph, build_graph
from .seeding import derive_rng

# Text mixture: P(topic word), P(an inflected surface form given topic word),
# P(per-node jargon word); the remainder draws from the shared list.
TOPIC_WORD_PROB = 0.55
INFLECT_PROB = 0.95
PERSONAL_WORD_PROB = 0.10
PERSONAL_POOL = 5
SHARED_VOCAB_SIZE = 64
WORDS_PER_SENTENCE = (6, 12)

INFLECTION_MARKER = "qq"


class SynthConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    n: int = 400
    communities: int = 5
    intra_p: float = 0.18
    inter_p: float = 0.018
    vocab_per_community: int = 24
    sentences_per_node: Tuple[int, int] = (4, 8)
    seed: int = 0

    def validate(self) -> None:
        if self.communities < 2:
            raise SynthConfigError("communities must be >= 2")
        if self.n < self.communities:
            raise SynthConfigError("need at least one node per community")
        if not (0.0 < self.intra_p <= 1.0) or not (0.0 <= self.inter_p <= 1.0):
            raise SynthConfigError("edge probabilities must lie in (0, 1]")
        if self.intra_p <= self.inter_p:
            raise SynthConfigError("intra_p must exceed inter_p")
        lo, hi = self.sentences_per_node
        if lo < 1 or hi < lo:
            raise SynthConfigError("sentences_per_node must be a range with 1 <= lo <= hi")
        if self.vocab_per_community < 4:
            raise SynthConfigError("vocab_per_community must be >= 4")


def canonical_stem(token: str) -> str:
    """Strip the inflection marker, recovering the vocabulary stem."""
    return token.split(INFLECTION_MARKER)[0]


def _shared_vocab() -> list:
    return [f"common{j:03d}" for j in range(SHARED_VOCAB_SIZE)]


def _community_vocab(k: int, size: int) -> list:
    return [f"topic{k:02d}term{j:03d}" for j in range(size)]


def generate_synthetic_tag(cfg: SyntheticConfig) -> Tuple[TextAttributedGraph, np.ndarray]:
    """Deterministic (graph, community assignment) for a given config.

    The first word of every node's text is an uninflected word from its
    community vocabulary, so community membership is always literally
    visible in the text.
    """
    cfg.validate()
    rng = derive_rng(cfg.seed, "synth")
    n, c = cfg.n, cfg.communities
    comm = (np.arange(n) * c) // n  # contiguous, near-equal blocks

    edges = []
    for u in range(n - 1):
        draws = rng.random(n - u - 1)
        targets = np.arange(u + 1, n)
        probs = np.where(comm[targets] == comm[u], cfg.intra_p, cfg.inter_p)
        for v in targets[draws < probs]:
            edges.append((u, int(v)))
    if not edges:
        raise SynthConfigError("configuration produced an edgeless graph; raise intra_p or n")

    shared = _shared_vocab()
    vocabs = [_community_vocab(k, cfg.vocab_per_community) for k in range(c)]
    lo, hi = cfg.sentences_per_node
    wlo, whi = WORDS_PER_SENTENCE
    nodes = []
    surface_uid = 0
    for v in range(n):
        vocab = vocabs[comm[v]]
        personal = [f"node{v}item{j}" for j in range(PERSONAL_POOL)]
        n_sent = int(rng.integers(lo, hi + 1))
        sentences = []
        for s in range(n_sent):
            length = int(rng.integers(wlo, whi + 1))
            words = []
            for w in range(length):
                r = rng.random()
                if (s == 0 and w == 0) or r < TOPIC_WORD_PROB:
                    stem = vocab[int(rng.integers(len(vocab)))]
                    if (s == 0 and w == 0) or rng.random() >= INFLECT_PROB:
                        words.append(stem)
                    else:
                        words.append(f"{stem}{INFLECTION_MARKER}{surface_uid}")
                        surface_uid += 1
                elif r < TOPIC_WORD_PROB + PERSONAL_WORD_PROB:
                    words.append(personal[int(rng.integers(len(personal)))])
                else:
                    words.append(shared[int(rng.integers(len(shared)))])
            sentences.append(" ".join(words).capitalize() + ".")
        nodes.append(NodeRecord(id=v, text=" ".join(sentences), title=f"doc {v}"))

    graph, _ = build_graph(nodes, edges)
    return graph, comm
