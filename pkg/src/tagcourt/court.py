"""Evidence generation: prosecutors per node, then a judge (or vote) verdict.

Each node receives five contextual prosecutor calls and, when it has
neighbors, one structural call per sampled neighbor (five, sampled uniformly
with replacement). The judge weighs all opinions in ``full_court`` mode;
the ablation modes replace it with majority voting. Everything is persisted
to a keyed store as it completes, so reruns issue no calls for existing
(node, kind, sample) keys.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .backends import BackendError, attach_route, route_header
from .cost import TokenTally
from .graph import TextAttributedGraph
from .parsing import (
    CONTEXTUAL_VOCAB,
    STRUCTURAL_VOCAB,
    NoVerdictFound,
    parse_prosecutor_output,
)
from .prompts import (
    build_combined_prompt,
    build_contextual_prompt,
    build_judge_prompt,
    build_structural_prompt,
    render_node_text,
)
from .seeding import derive_rng

logger = logging.getLogger(__name__)

COURT_MODES = ("one_prosecutor", "two_prosecutors", "full_court")


class CourtError(RuntimeError):
    pass


@dataclass
class CourtConfig:
    dataset_profile: str = "synthetic"
    n_contextual: int = 5
    n_structural: int = 5
    court_mode: str = "full_court"
    parallelism: int = 1
    max_parse_retries: int = 2
    temperature: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if self.court_mode not in COURT_MODES:
            raise CourtError(f"court_mode must be one of {COURT_MODES}")
        if self.n_contextual < 1 or self.n_structural < 1:
            raise CourtError("sample counts must be >= 1")
        if self.parallelism < 1:
            raise CourtError("parallelism must be >= 1")
        if self.max_parse_retries < 0:
            raise CourtError("max_parse_retries must be >= 0")


@dataclass
class EvidenceRecord:
    node_id: int
    kind: str  # contextual | structural | combined
    sample_idx: int
    neighbor_id: Optional[int]
    evidence_text: str
    prediction: str
    prompt_tokens: int
    output_tokens: int
    model: str
    unparseable: bool = False


@dataclass
class Verdict:
    node_id: int
    evidence_text: str
    judgment: str  # normal | abnormal
    prompt_tokens: int
    output_tokens: int
    model: str
    unparseable: bool = False


@dataclass
class CourtRunStats:
    backend_calls: int = 0
    cached_records: int = 0
    parse_retries: int = 0
    unparseable: int = 0
    failed_nodes: List[int] = field(default_factory=list)


class EvidenceStore:
    """Append-only JSONL persistence keyed by (node, kind, sample) and node.

    Appends are serialized and flushed per record so concurrent prosecutor
    workers can persist results as they complete.
    """

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.evidence_path = self.dir / "evidence.jsonl"
        self.verdicts_path = self.dir / "verdicts.jsonl"
        self.failures_path = self.dir / "failures.jsonl"
        self._lock = threading.Lock()
        self.evidence: Dict[Tuple[int, str, int], EvidenceRecord] = {}
        self.verdicts: Dict[int, Verdict] = {}
        self._load()

    def _load(self) -> None:
        if self.evidence_path.exists():
            with open(self.evidence_path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = EvidenceRecord(**json.loads(line))
                    except (json.JSONDecodeError, TypeError) as exc:
                        raise CourtError(
                            f"{self.evidence_path}:{lineno}: corrupt record: {exc}"
                        ) from exc
                    self.evidence[(rec.node_id, rec.kind, rec.sample_idx)] = rec
        if self.verdicts_path.exists():
            with open(self.verdicts_path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        verdict = Verdict(**json.loads(line))
                    except (json.JSONDecodeError, TypeError) as exc:
                        raise CourtError(
                            f"{self.verdicts_path}:{lineno}: corrupt record: {exc}"
                        ) from exc
                    self.verdicts[verdict.node_id] = verdict

    def has_evidence(self, node: int, kind: str, sample: int) -> bool:
        return (node, kind, sample) in self.evidence

    def add_evidence(self, rec: EvidenceRecord) -> None:
        with self._lock:
            self.evidence[(rec.node_id, rec.kind, rec.sample_idx)] = rec
            with open(self.evidence_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                fh.flush()

    def add_verdict(self, verdict: Verdict) -> None:
        with self._lock:
            self.verdicts[verdict.node_id] = verdict
            with open(self.verdicts_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(verdict), sort_keys=True) + "\n")
                fh.flush()

    def add_failure(self, node: int, stage: str, error: str) -> None:
        with self._lock:
            with open(self.failures_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"node_id": node, "stage": stage, "error": error}) + "\n")
                fh.flush()

    def node_evidence(self, node: int, kind: str) -> List[EvidenceRecord]:
        records = [rec for key, rec in self.evidence.items() if key[0] == node and key[1] == kind]
        return sorted(records, key=lambda r: r.sample_idx)

    def token_tallies(self) -> Dict[str, TokenTally]:
        """Mean per-node prompt/output token totals, grouped by model."""
        sums: Dict[str, List[float]] = {}
        nodes = set()
        for rec in list(self.evidence.values()) + list(self.verdicts.values()):
            nodes.add(rec.node_id)
            entry = sums.setdefault(rec.model, [0.0, 0.0])
            entry[0] += rec.prompt_tokens
            entry[1] += rec.output_tokens
        n = max(1, len(nodes))
        return {
            model: TokenTally(prompt_tokens=p / n, output_tokens=o / n)
            for model, (p, o) in sums.items()
        }


def _call_parsed(
    backend, messages, vocabulary, max_parse_retries: int, stats: CourtRunStats, lock
):
    """Backend call + parse with bounded parse retries.

    Returns (evidence, word, response, unparseable); on persistent parse
    failure the non-accusatory vocabulary default is recorded instead of a
    manufactured accusation.
    """
    response = None
    for attempt in range(max_parse_retries + 1):
        response = backend.complete(messages, seed_offset=attempt)
        with lock:
            stats.backend_calls += 1
        try:
            evidence, word = parse_prosecutor_output(response.text, vocabulary)
            return evidence, word, response, False
        except NoVerdictFound:
            with lock:
                stats.parse_retries += 1
            continue
    with lock:
        stats.unparseable += 1
    logger.warning("unparseable output after %d retries; recording default", max_parse_retries)
    return response.text.rstrip(), vocabulary[0], response, True


def _majority(records: List[EvidenceRecord], flag_word: str) -> bool:
    """Strict majority of the present samples voted ``flag_word``."""
    if not records:
        return False
    votes = sum(1 for rec in records if rec.prediction == flag_word)
    return votes * 2 > len(records)


def run_court(
    graph: TextAttributedGraph,
    cfg: CourtConfig,
    backend,
    store: EvidenceStore,
) -> CourtRunStats:
    """Generate and persist evidence and verdicts for every node."""
    cfg.validate()
    stats = CourtRunStats()
    lock = threading.Lock()

    def sample_neighbors(v: int) -> List[int]:
        nbrs = graph.neighbors(v)
        if len(nbrs) == 0:
            return []
        rng = derive_rng(cfg.seed, "court", "neighbors", v)
        return [int(u) for u in rng.choice(nbrs, size=cfg.n_structural, replace=True)]

    def process_node(v: int) -> None:
        node = graph.nodes[v]
        try:
            if cfg.court_mode == "one_prosecutor":
                sampled = sample_neighbors(v)
                neighbor_texts = [
                    render_node_text(graph.nodes[u].text, graph.nodes[u].title) for u in sampled
                ]
                prompt = build_combined_prompt(cfg.dataset_profile, node, neighbor_texts)
                for s in range(cfg.n_contextual):
                    if store.has_evidence(v, "combined", s):
                        with lock:
                            stats.cached_records += 1
                        continue
                    routed = attach_route(prompt, route_header(v, "combined", s))
                    evidence, word, resp, bad = _call_parsed(
                        backend, routed, CONTEXTUAL_VOCAB, cfg.max_parse_retries, stats, lock
                    )
                    store.add_evidence(
                        EvidenceRecord(
                            node_id=v, kind="combined", sample_idx=s, neighbor_id=None,
                            evidence_text=evidence, prediction=word,
                            prompt_tokens=resp.prompt_tokens, output_tokens=resp.output_tokens,
                            model=resp.model, unparseable=bad,
                        )
                    )
            else:
                for s in range(cfg.n_contextual):
                    if store.has_evidence(v, "contextual", s):
                        with lock:
                            stats.cached_records += 1
                        continue
                    prompt = build_contextual_prompt(cfg.dataset_profile, node)
                    routed = attach_route(prompt, route_header(v, "contextual", s))
                    evidence, word, resp, bad = _call_parsed(
                        backend, routed, CONTEXTUAL_VOCAB, cfg.max_parse_retries, stats, lock
                    )
                    store.add_evidence(
                        EvidenceRecord(
                            node_id=v, kind="contextual", sample_idx=s, neighbor_id=None,
                            evidence_text=evidence, prediction=word,
                            prompt_tokens=resp.prompt_tokens, output_tokens=resp.output_tokens,
                            model=resp.model, unparseable=bad,
                        )
                    )
                for s, u in enumerate(sample_neighbors(v)):
                    if store.has_evidence(v, "structural", s):
                        with lock:
                            stats.cached_records += 1
                        continue
                    prompt = build_structural_prompt(cfg.dataset_profile, node, graph.nodes[u])
                    routed = attach_route(prompt, route_header(v, "structural", s, neighbor=u))
                    evidence, word, resp, bad = _call_parsed(
                        backend, routed, STRUCTURAL_VOCAB, cfg.max_parse_retries, stats, lock
                    )
                    store.add_evidence(
                        EvidenceRecord(
                            node_id=v, kind="structural", sample_idx=s, neighbor_id=u,
                            evidence_text=evidence, prediction=word,
                            prompt_tokens=resp.prompt_tokens, output_tokens=resp.output_tokens,
                            model=resp.model, unparseable=bad,
                        )
                    )

            if v in store.verdicts:
                return
            if cfg.court_mode == "full_court":
                contextual = store.node_evidence(v, "contextual")
                structural = store.node_evidence(v, "structural")
                ctx_opinions = [
                    (render_node_text(node.text, node.title), _opinion(rec))
                    for rec in contextual
                ]
                struct_opinions = [
                    (
                        render_node_text(
                            graph.nodes[rec.neighbor_id].text, graph.nodes[rec.neighbor_id].title
                        ),
                        _opinion(rec),
                    )
                    for rec in structural
                ]
                prompt = build_judge_prompt(
                    cfg.dataset_profile, node, ctx_opinions, struct_opinions,
                    n_contextual=cfg.n_contextual, n_structural=cfg.n_structural,
                )
                routed = attach_route(prompt, route_header(v, "judge", 0))
                evidence, word, resp, bad = _call_parsed(
                    backend, routed, CONTEXTUAL_VOCAB, cfg.max_parse_retries, stats, lock
                )
                store.add_verdict(
                    Verdict(
                        node_id=v, evidence_text=evidence, judgment=word,
                        prompt_tokens=resp.prompt_tokens, output_tokens=resp.output_tokens,
                        model=resp.model, unparseable=bad,
                    )
                )
            elif cfg.court_mode == "two_prosecutors":
                contextual = store.node_evidence(v, "contextual")
                structural = store.node_evidence(v, "structural")
                abnormal = _majority(contextual, "abnormal") or _majority(structural, "unrelated")
                ctx_votes = sum(1 for r in contextual if r.prediction == "abnormal")
                st_votes = sum(1 for r in structural if r.prediction == "unrelated")
                store.add_verdict(
                    Verdict(
                        node_id=v,
                        evidence_text=(
                            f"Vote: {ctx_votes}/{len(contextual)} contextual abnormal, "
                            f"{st_votes}/{len(structural)} structural unrelated."
                        ),
                        judgment="abnormal" if abnormal else "normal",
                        prompt_tokens=0, output_tokens=0, model="aggregate",
                    )
                )
            else:  # one_prosecutor
                combined = store.node_evidence(v, "combined")
                abnormal = _majority(combined, "abnormal")
                votes = sum(1 for r in combined if r.prediction == "abnormal")
                store.add_verdict(
                    Verdict(
                        node_id=v,
                        evidence_text=f"Vote: {votes}/{len(combined)} combined abnormal.",
                        judgment="abnormal" if abnormal else "normal",
                        prompt_tokens=0, output_tokens=0, model="aggregate",
                    )
                )
        except BackendError as exc:
            logger.error("node %d failed: %s", v, exc)
            store.add_failure(v, "backend", str(exc))
            with lock:
                stats.failed_nodes.append(v)

    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            list(pool.map(process_node, range(graph.n)))
    else:
        for v in range(graph.n):
            process_node(v)

    logger.info(
        "court complete: %d backend calls, %d cached records, %d unparseable, %d failed nodes",
        stats.backend_calls, stats.cached_records, stats.unparseable, len(stats.failed_nodes),
    )
    return stats


def _opinion(rec: EvidenceRecord) -> str:
    label = "Prediction"
    if rec.evidence_text:
        return f"{rec.evidence_text} ({label}) {rec.prediction}"
    return f"({label}) {rec.prediction}"


def verdict_texts(
    store: EvidenceStore, n: int, encoding: str = "evidence_and_judgment"
) -> List[str]:
    """Per-node verdict text for embedding; empty string for missing verdicts."""
    if encoding not in ("evidence_and_judgment", "judgment_only", "evidence_only"):
        raise ValueError(f"unknown verdict encoding {encoding!r}")
    out = []
    for v in range(n):
        verdict = store.verdicts.get(v)
        if verdict is None:
            out.append("")
        elif encoding == "judgment_only":
            out.append(f"(Judgment) {verdict.judgment}")
        elif encoding == "evidence_only":
            out.append(verdict.evidence_text)
        else:
            out.append(f"{verdict.evidence_text}\n(Judgment) {verdict.judgment}".strip())
    return out
