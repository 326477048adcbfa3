"""LLM backends: a chat-completion HTTP client and a deterministic oracle.

Every prompt issued by the court carries a hidden routing header as the
first line of the first system message ("#route node=.. kind=.. sample=..").
The HTTP backend strips it before sending; the oracle backend consumes it to
look up ground truth.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import requests

from .graph import GroundTruth
from .prompts import PromptMessages
from .seeding import hash_unit
from .synth import canonical_stem

logger = logging.getLogger(__name__)

ROUTE_PREFIX = "#route "


class BackendError(RuntimeError):
    pass


@dataclass
class LLMResponse:
    text: str
    prompt_tokens: int
    output_tokens: int
    model: str


def route_header(node: int, kind: str, sample: int, neighbor: Optional[int] = None) -> str:
    header = f"{ROUTE_PREFIX}node={node} kind={kind} sample={sample}"
    if neighbor is not None:
        header += f" neighbor={neighbor}"
    return header


def attach_route(messages: PromptMessages, header: str) -> PromptMessages:
    role, content = messages[0]
    return [(role, header + "\n" + content)] + list(messages[1:])


def split_route(messages: PromptMessages) -> Tuple[PromptMessages, Optional[Dict[str, str]]]:
    """(messages without header, parsed route fields or None)."""
    role, content = messages[0]
    if not content.startswith(ROUTE_PREFIX):
        return list(messages), None
    line, _, rest = content.partition("\n")
    fields = {}
    for part in line[len(ROUTE_PREFIX):].split():
        key, _, value = part.partition("=")
        fields[key] = value
    return [(role, rest)] + list(messages[1:]), fields


def _count_tokens(messages: PromptMessages) -> int:
    return sum(len(content.split()) for _, content in messages)


class HttpBackend:
    """Chat-completion client with bounded retries and usage accounting.

    Request body: {"model", "messages", "temperature", "max_tokens", "seed"}.
    The response must carry the generated text and usage token counts.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.7,
        max_tokens: int = 512,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 120.0,
        seed: int = 0,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.seed = seed
        self.session = session or requests.Session()
        self.retries_used = 0

    def complete(self, messages: PromptMessages, seed_offset: int = 0) -> LLMResponse:
        messages, _ = split_route(messages)
        body = {
            "model": self.model,
            "messages": [{"role": role, "content": content} for role, content in messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed + seed_offset,
        }
        last_err: Exception = BackendError("no attempt made")
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.retries_used += 1
                delay = self.backoff * 2 ** (attempt - 1)
                logger.warning("backend retry %d after error: %s", attempt, last_err)
                time.sleep(delay)
            try:
                resp = self.session.post(self.endpoint, json=body, timeout=self.timeout)
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_err = BackendError(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                payload = resp.json()
                try:
                    choice = payload["choices"][0]
                    text = choice["message"]["content"] if "message" in choice else choice["text"]
                    usage = payload["usage"]
                    return LLMResponse(
                        text=text,
                        prompt_tokens=int(usage["prompt_tokens"]),
                        output_tokens=int(usage["completion_tokens"]),
                        model=str(payload.get("model", self.model)),
                    )
                except (KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"malformed backend response: missing {exc}") from exc
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_err = exc
        raise BackendError(f"backend failed after {self.max_retries} retries: {last_err}")


# Deterministic evidence phrasings for the oracle backend, chosen by hash.
_ORACLE_EVIDENCE = {
    ("contextual", "normal"): (
        "The passage stays on a single coherent subject throughout and every sentence supports it.",
        "All sentences share one consistent focus and nothing looks out of place.",
    ),
    ("contextual", "abnormal"): (
        "Part of the passage drifts into unrelated material that clashes with the surrounding topic.",
        "Several sentences introduce foreign content inconsistent with the main theme of the text.",
    ),
    ("structural", "related"): (
        "Both texts cover overlapping subject matter, so a connection between them is plausible.",
        "The two passages discuss closely aligned themes and could reasonably be linked.",
    ),
    ("structural", "unrelated"): (
        "The two texts concern disjoint subjects and no plausible connection links them.",
        "Nothing in either passage suggests the pair belongs together; the topics diverge completely.",
    ),
    ("judge", "normal"): (
        "The prosecutor reports are mutually consistent and none presents convincing irregularities.",
        "Weighing every opinion, the credible reports agree the node shows no irregularity.",
    ),
    ("judge", "abnormal"): (
        "The most credible prosecutor reports flag irregular content or implausible connections.",
        "Several convincing opinions point to an irregularity, outweighing the dissenting reports.",
    ),
    ("combined", "normal"): (
        "Neither the text nor the sampled neighbors show any irregularity worth flagging.",
        "Text and neighborhood are mutually consistent; the node looks ordinary.",
    ),
    ("combined", "abnormal"): (
        "Either the text drifts off-topic or a sampled neighbor is implausibly connected.",
        "The node shows an irregularity: inconsistent content or an unlikely neighbor.",
    ),
}

_QUOTE_WORDS = 24


class OracleBackend:
    """Test backend emitting ground-truth-consistent verdicts with probability
    ``accuracy``, decided by a hash of (seed, node, kind, sample).

    When given the node texts and the injection report, the oracle imitates a
    competent reviewer: its evidence summarizes the content it examined in
    canonical vocabulary (surface forms marked with the synthetic generator's
    inflection marker are cited by their stem, the way a human summary reads
    through morphology), quotes the planted donor snippet for contextual
    anomalies it flags, and pinpoints the offending connections for
    structural ones.
    """

    def __init__(
        self,
        truth: GroundTruth,
        injected_edges: Optional[Set[Tuple[int, int]]] = None,
        accuracy: float = 1.0,
        seed: int = 0,
        model: str = "oracle",
        texts: Optional[List[str]] = None,
        contextual_snippets: Optional[Dict[int, str]] = None,
    ):
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        self.truth = truth
        self.injected_edges = injected_edges or set()
        self.accuracy = accuracy
        self.seed = seed
        self.model = model
        self.texts = texts
        self.contextual_snippets = contextual_snippets or {}
        self._partners: Dict[int, List[int]] = {}
        for u, v in self.injected_edges:
            self._partners.setdefault(u, []).append(v)
            self._partners.setdefault(v, []).append(u)

    def _truth_word(self, route: Dict[str, str]) -> Tuple[str, str, str]:
        """(kind, truthful word, wrong word) for a routed request."""
        node = int(route["node"])
        kind = route["kind"]
        if kind == "contextual":
            anomalous = self.truth.label_of(node) == "contextual"
            return kind, ("abnormal" if anomalous else "normal"), ("normal" if anomalous else "abnormal")
        if kind == "structural":
            neighbor = int(route["neighbor"])
            edge = (min(node, neighbor), max(node, neighbor))
            injected = edge in self.injected_edges
            return kind, ("unrelated" if injected else "related"), ("related" if injected else "unrelated")
        if kind in ("judge", "combined"):
            anomalous = self.truth.is_anomalous(node)
            return kind, ("abnormal" if anomalous else "normal"), ("normal" if anomalous else "abnormal")
        raise BackendError(f"unknown routing kind {kind!r}")

    def _sample_words(self, text: str, *key) -> str:
        """Frequency-weighted sample of canonical word stems, like the
        salient terms a summary would repeat."""
        tokens = [canonical_stem(t.lower().strip('.",;:!?')) for t in text.split()]
        tokens = [t for t in tokens if t]
        if not tokens:
            return ""
        counts = Counter(tokens)
        stems = sorted(counts)
        weights = np.cumsum([counts[s] for s in stems]).astype(np.float64)
        weights /= weights[-1]
        picks = []
        for j in range(min(_QUOTE_WORDS, len(tokens))):
            u = hash_unit(self.seed, *key, "quote", j)
            picks.append(stems[int(np.searchsorted(weights, u))])
        return " ".join(picks)

    def _flagged_content(self, node: int, word: str, *key) -> str:
        """What the reviewer cites: the planted snippet for contextual
        anomalies it flags, the node's own words otherwise (for structural
        anomalies the citation frames the node's own content as not
        warranting its connections)."""
        if self.texts is None:
            return ""
        label = self.truth.label_of(node)
        own = self.texts[node] if node < len(self.texts) else ""
        if word == "abnormal":
            if label == "contextual" and node in self.contextual_snippets:
                quoted = self._sample_words(self.contextual_snippets[node], *key)
                return f' The questionable part reads: "{quoted}".' if quoted else ""
            if label in ("structural_clique", "structural_edge"):
                partners = sorted(self._partners.get(node, []))[:4]
                if partners:
                    cited = " ".join(
                        f"The link{node}to{p} connection is not supported by the content"
                        f" and the link{node}to{p} pairing looks planted."
                        for p in partners
                    )
                    return f" It pinpoints the offending connections. {cited}"
                quoted = self._sample_words(own, *key)
                if quoted:
                    return (
                        f' Nothing in the node\'s own content, which concerns "{quoted}",'
                        " warrants several of its connections."
                    )
                return ""
            quoted = self._sample_words(own, *key)
            return f' The questionable part reads: "{quoted}".' if quoted else ""
        quoted = self._sample_words(own, *key)
        return f' The content consistently concerns: "{quoted}".' if quoted else ""

    def complete(self, messages: PromptMessages, seed_offset: int = 0) -> LLMResponse:
        stripped, route = split_route(messages)
        if route is None or "node" not in route or "kind" not in route or "sample" not in route:
            raise BackendError("oracle backend requires routing metadata in the first system line")
        kind, right, wrong = self._truth_word(route)
        node, sample = int(route["node"]), int(route["sample"])
        coin = hash_unit(self.seed, node, kind, sample)
        word = right if coin < self.accuracy else wrong
        pool = _ORACLE_EVIDENCE[(kind, word)]
        evidence = pool[int(hash_unit(self.seed, node, kind, sample, "ev") * len(pool))]
        if kind == "structural" and self.texts is not None:
            neighbor = int(route["neighbor"])
            quoted = self._sample_words(self.texts[neighbor], node, kind, sample, neighbor)
            if quoted:
                evidence += f' The other text concerns: "{quoted}".'
        else:
            flag = "abnormal" if word == "abnormal" else "normal"
            evidence += self._flagged_content(node, flag, node, kind, sample)
        label = "Judgment" if kind == "judge" else "Prediction"
        text = f"(Evidence) {evidence}\n({label}) {word}"
        return LLMResponse(
            text=text,
            prompt_tokens=_count_tokens(stripped),
            output_tokens=len(text.split()),
            model=self.model,
        )
