"""Text encoders and embedding persistence.

The built-in encoder is signed feature hashing: deterministic, seedless, and
platform-stable (bucket index and sign come from two independent 64-bit
hashes of each token). A remote HTTP encoder covers real embedding services.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import requests

from .fileio import atomic_write_bytes

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

MAGIC = b"TAGE"
FORMAT_VERSION = 1


class EmbeddingFormatError(ValueError):
    """Bad magic, truncated payload, or version mismatch in embeddings.bin."""


class RemoteEmbedError(RuntimeError):
    """Remote embedding service failed or returned inconsistent data."""


@dataclass
class EmbeddingMatrix:
    """Dense row-per-node float32 vectors, row order = ascending node id."""

    vectors: np.ndarray
    empty: np.ndarray = field(default=None)  # type: ignore[assignment]
    kind: str = "orig"

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if not np.isfinite(self.vectors).all():
            raise ValueError("vectors must be finite")
        if self.empty is None:
            self.empty = np.zeros(self.vectors.shape[0], dtype=bool)
        self.empty = np.asarray(self.empty, dtype=bool)
        if self.empty.shape != (self.vectors.shape[0],):
            raise ValueError("empty-text flags must have one entry per row")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def _check_dim(d: int) -> None:
    if d < 8 or d & (d - 1) != 0:
        raise ValueError(f"dimension must be a power of two >= 8, got {d}")


def _tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def embed_hash(text: str, d: int) -> np.ndarray:
    """Signed-bucket hashing of lowercase alphanumeric tokens, L2-normalized.

    Empty or token-free text maps to the zero vector.
    """
    _check_dim(d)
    vec = np.zeros(d, dtype=np.float64)
    for token in _tokenize(text):
        raw = token.encode("utf-8")
        bucket = int.from_bytes(
            hashlib.blake2b(raw, digest_size=8, person=b"bucket").digest(), "little"
        ) & (d - 1)
        sign_bit = hashlib.blake2b(raw, digest_size=8, person=b"sign").digest()[0] & 1
        vec[bucket] += 1.0 if sign_bit else -1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec.astype(np.float32)


def embed_texts(texts: Sequence[str], d: int, kind: str = "orig") -> EmbeddingMatrix:
    """Hash-embed a list of texts; rows with no tokens are flagged empty."""
    _check_dim(d)
    rows = np.zeros((len(texts), d), dtype=np.float32)
    empty = np.zeros(len(texts), dtype=bool)
    for i, text in enumerate(texts):
        rows[i] = embed_hash(text, d)
        empty[i] = not _tokenize(text)
    if empty.any():
        logger.info("hash embedding: %d empty text(s) mapped to zero vectors", int(empty.sum()))
    return EmbeddingMatrix(vectors=rows, empty=empty, kind=kind)


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|); 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def save_embeddings(path, mat: EmbeddingMatrix) -> None:
    """Binary layout: magic, u32 version, u32 n, u32 d, n*d little-endian
    float32 row-major, then one u8 empty-text flag per row."""
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, mat.n, mat.d)
    payload = mat.vectors.astype("<f4").tobytes(order="C")
    flags = mat.empty.astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + payload + flags)


def load_embeddings(path, kind: str = "orig") -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise EmbeddingFormatError(f"bad magic: expected {MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 16:
        raise EmbeddingFormatError(f"truncated header: expected >= 16 bytes, got {len(blob)}")
    version, n, d = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"unsupported version {version} (expected {FORMAT_VERSION})")
    expected = 16 + 4 * n * d + n
    if len(blob) != expected:
        raise EmbeddingFormatError(f"truncated payload: expected {expected} bytes, got {len(blob)}")
    vectors = np.frombuffer(blob, dtype="<f4", count=n * d, offset=16).reshape(n, d).copy()
    empty = np.frombuffer(blob, dtype=np.uint8, count=n, offset=16 + 4 * n * d).astype(bool)
    return EmbeddingMatrix(vectors=vectors, empty=empty, kind=kind)


def embed_remote(
    texts: Sequence[str],
    endpoint: str,
    model: str,
    batch: int = 32,
    max_retries: int = 4,
    backoff: float = 0.5,
    timeout: float = 60.0,
    parallelism: int = 1,
    session: Optional[requests.Session] = None,
    kind: str = "orig",
) -> EmbeddingMatrix:
    """Embed via POST {"model", "input"} -> {"data": [{"embedding": [...]}]}.

    One vector per input text, in input order; the dimension is taken from
    the first response and enforced across batches. Transient failures are
    retried with exponential backoff up to ``max_retries``.
    """
    sess = session or requests.Session()
    batches = [list(texts[i : i + batch]) for i in range(0, len(texts), batch)]

    def fetch(chunk: List[str]) -> List[List[float]]:
        last_err: Exception = RemoteEmbedError("no attempt made")
        for attempt in range(max_retries + 1):
            if attempt:
                delay = backoff * 2 ** (attempt - 1)
                logger.warning("embed retry %d after error: %s", attempt, last_err)
                time.sleep(delay)
            try:
                resp = sess.post(
                    endpoint, json={"model": model, "input": chunk}, timeout=timeout
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_err = RemoteEmbedError(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                data = resp.json().get("data")
                if data is None or len(data) != len(chunk):
                    raise RemoteEmbedError(
                        f"response carries {0 if data is None else len(data)} vectors "
                        f"for {len(chunk)} inputs"
                    )
                out = []
                for item in data:
                    if "embedding" not in item:
                        raise RemoteEmbedError("response item missing 'embedding' field")
                    out.append(item["embedding"])
                return out
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_err = exc
        raise RemoteEmbedError(f"embedding request failed after {max_retries} retries: {last_err}")

    if parallelism > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(fetch, batches))
    else:
        results = [fetch(chunk) for chunk in batches]

    rows: List[List[float]] = [vec for chunk in results for vec in chunk]
    if not rows:
        raise RemoteEmbedError("no texts to embed")
    d = len(rows[0])
    for i, vec in enumerate(rows):
        if len(vec) != d:
            raise RemoteEmbedError(f"dimension mismatch: row {i} has {len(vec)}, expected {d}")
    vectors = np.asarray(rows, dtype=np.float32)
    empty = np.asarray([not t.strip() for t in texts], dtype=bool)
    return EmbeddingMatrix(vectors=vectors, empty=empty, kind=kind)
