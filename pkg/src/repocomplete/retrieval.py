"""Similarity search over snippet indexes.

The default route ranks snippets by Jaccard similarity of identifier token
sets; an optional dense route ranks by cosine similarity of embeddings from
a pluggable provider. Both return the same ScoredSnippet shape so the
pipeline does not care which one produced the ranking.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import requests

from .errors import RetrievalError
from .repo_index import CodeSnippet, SnippetIndex, tokenize

logger = logging.getLogger(__name__)

QUERY_ORIGINS = ("infile_only", "model_augmented", "oracle")


@dataclass(frozen=True)
class RetrievalQuery:
    """Query text plus its token set and provenance.

    origin records how the text was built: from the unfinished code alone,
    augmented with a previous model prediction, or spliced with ground truth.
    """

    text: str
    token_set: frozenset[str]
    iteration: int = 1
    origin: str = "infile_only"

    def __post_init__(self) -> None:
        if self.origin not in QUERY_ORIGINS:
            raise ValueError(f"unknown query origin: {self.origin!r}")
        if self.iteration < 1:
            raise ValueError("iteration is 1-based")

    @classmethod
    def from_text(
        cls, text: str, iteration: int = 1, origin: str = "infile_only"
    ) -> "RetrievalQuery":
        return cls(text=text, token_set=tokenize(text), iteration=iteration, origin=origin)


@dataclass(frozen=True)
class ScoredSnippet:
    snippet: CodeSnippet
    score: float


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    """|a & b| / |a | b|; two empty sets score 0.0, not NaN."""
    if not a and not b:
        return 0.0
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


def _select(
    rows: list[tuple[float, str, int, int, float, CodeSnippet]], k: int
) -> list[ScoredSnippet]:
    # Rows sort by (score desc, path asc, start_line asc); the enumeration
    # index keeps duplicate keys stable and stops tuple comparison before
    # the snippet payload.
    top = heapq.nsmallest(k, rows)
    return [ScoredSnippet(snippet=row[5], score=row[4]) for row in top]


def _ranked(
    pairs: list[tuple[CodeSnippet, float]], k: int
) -> list[ScoredSnippet]:
    # Deterministic total order: score desc, then (path, start_line) asc.
    rows = [
        (-score, s.source, s.start_line, i, score, s)
        for i, (s, score) in enumerate(pairs)
    ]
    return _select(rows, k)


def retrieve(index: SnippetIndex, query: RetrievalQuery, k: int) -> list[ScoredSnippet]:
    """Top-k snippets by Jaccard similarity, ties broken by location.

    Equivalent to an exhaustive scan; retrieve(k) is a prefix of
    retrieve(k+1). An empty index yields an empty list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    # Hot path: one scan of the whole index per call. The scoring inlines
    # jaccard() to skip 1 function call per snippet; keep the arithmetic in
    # step with that definition.
    qset = query.token_set
    qlen = len(qset)
    rows = []
    add = rows.append
    for i, s in enumerate(index.snippets):
        ts = s.token_set
        inter = len(qset & ts)
        if inter:
            score = inter / (qlen + len(ts) - inter)
            add((-score, s.source, s.start_line, i, score, s))
        else:
            add((0.0, s.source, s.start_line, i, 0.0, s))
    return _select(rows, k)


class EmbeddingProvider(ABC):
    """Maps texts to fixed-dimension vectors.

    truncate_chars, when set, clips every input before embedding; the value
    is surfaced so runs can record it.
    """

    dimension: int
    truncate_chars: int | None = None

    @abstractmethod
    def embed(self, texts: list[str]) -> list[list[float]]:
        """One vector per input, in order."""

    def clip(self, texts: list[str]) -> list[str]:
        if self.truncate_chars is None:
            return list(texts)
        return [t[: self.truncate_chars] for t in texts]

    def describe(self) -> str:
        return f"{type(self).__name__}(dim={self.dimension})"


class MockEmbeddingProvider(EmbeddingProvider):
    """Deterministic hash-based embeddings, suitable for tests and offline
    runs. Identical texts map to identical vectors across processes."""

    def __init__(self, dimension: int = 32, truncate_chars: int | None = None) -> None:
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.truncate_chars = truncate_chars

    def _vector(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        for token in sorted(tokenize(text)):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [v / norm for v in vec]

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [self._vector(t) for t in self.clip(texts)]


class HttpEmbeddingProvider(EmbeddingProvider):
    """POSTs {"texts": [...]} and expects {"vectors": [[...], ...]}.

    Credentials come from the environment (EMBEDDINGS_API_KEY), never flags.
    """

    API_KEY_ENV = "EMBEDDINGS_API_KEY"

    def __init__(
        self,
        endpoint: str,
        dimension: int,
        timeout: float = 30.0,
        truncate_chars: int | None = None,
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.dimension = dimension
        self.timeout = timeout
        self.truncate_chars = truncate_chars
        self._session = session or requests.Session()

    def describe(self) -> str:
        return f"http-embeddings:{self.endpoint}"

    def embed(self, texts: list[str]) -> list[list[float]]:
        headers = {}
        key = os.environ.get(self.API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._session.post(
                self.endpoint,
                json={"texts": self.clip(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RetrievalError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise RetrievalError(
                f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}"
            )
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError) as exc:
            raise RetrievalError(f"embedding response malformed: {exc}") from exc
        if len(vectors) != len(texts):
            raise RetrievalError(
                f"embedding count mismatch: sent {len(texts)}, got {len(vectors)}"
            )
        return [[float(x) for x in vec] for vec in vectors]


def cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


@dataclass
class DenseIndex:
    """Precomputed snippet embeddings keyed by (path, start, end)."""

    provider: EmbeddingProvider
    vectors: dict[tuple[str, int, int], list[float]] = field(default_factory=dict)

    def ensure(self, snippets: list[CodeSnippet]) -> None:
        missing = [s for s in snippets if s.key() not in self.vectors]
        if not missing:
            return
        embedded = self.provider.embed([s.text for s in missing])
        for snippet, vec in zip(missing, embedded):
            self.vectors[snippet.key()] = vec


def build_dense_index(index: SnippetIndex, provider: EmbeddingProvider) -> DenseIndex:
    dense = DenseIndex(provider=provider)
    dense.ensure(index.snippets)
    return dense


def retrieve_dense(
    index: SnippetIndex,
    query: RetrievalQuery,
    k: int,
    provider: EmbeddingProvider,
    dense: DenseIndex | None = None,
) -> list[ScoredSnippet]:
    """Top-k by cosine similarity rescaled to [0, 1] via (1 + cos) / 2.

    Provider failures surface as RetrievalError; the caller decides whether
    to fall back to the sparse route.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.snippets:
        return []
    if dense is None:
        dense = DenseIndex(provider=provider)
    dense.ensure(index.snippets)
    qvec = provider.embed([query.text])[0]
    pairs = [
        (s, (1.0 + cosine(qvec, dense.vectors[s.key()])) / 2.0)
        for s in index.snippets
    ]
    return _ranked(pairs, k)
