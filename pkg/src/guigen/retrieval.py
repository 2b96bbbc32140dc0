"""Caption-embedding retrieval index and lexical BM25 baseline.

One index entry per (screen, caption). A query is answered by cosine
similarity against every entry; a screen's score is the maximum over its
captions, and the top-n distinct screens are returned with ties broken by
ascending screen_id for reproducibility.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import IndexBuildError, IndexMismatchError, ProviderError
from .repository import Repository

logger = logging.getLogger(__name__)

INDEX_FORMAT = "guigen-index"
INDEX_VERSION = 1


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, texts: list[str]) -> list[np.ndarray]: ...


def embed(provider: EmbeddingProvider, texts: list[str]) -> list[np.ndarray]:
    """Embed a batch, enforcing the provider contract: one finite vector of
    the provider's dim per input text."""
    vectors = provider.embed(list(texts))
    if len(vectors) != len(texts):
        raise ProviderError(
            f"provider returned {len(vectors)} vectors for {len(texts)} texts")
    for vec in vectors:
        if vec.shape != (provider.dim,):
            raise ProviderError(
                f"vector dim {vec.shape} does not match provider dim {provider.dim}")
        if not np.all(np.isfinite(vec)):
            raise ProviderError("vector contains non-finite values")
    return vectors


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """cos(a, b) = dot(a,b) / (|a||b|); undefined for zero vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class RankedItem:
    screen_id: str
    score: float
    stage: str = "retrieval"


@dataclass(frozen=True)
class RankedList:
    query: str
    items: tuple[RankedItem, ...]
    n: int

    def __post_init__(self):
        scores = [item.score for item in self.items]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("items must be sorted by score descending")
        ids = [item.screen_id for item in self.items]
        if len(ids) != len(set(ids)):
            raise ValueError("screen_ids must be distinct")
        if len(self.items) > self.n:
            raise ValueError("more items than requested depth")

    def ids(self) -> list[str]:
        return [item.screen_id for item in self.items]

    def to_dict(self) -> dict:
        return {"query": self.query, "n": self.n,
                "items": [{"screen_id": i.screen_id, "score": i.score,
                           "stage": i.stage} for i in self.items]}


class RetrievalIndex:
    """Embedding index over (screen_id, caption_ordinal) entries."""

    def __init__(self, provider_id: str, dim: int,
                 keys: list[tuple[str, int]], matrix: np.ndarray):
        if matrix.shape != (len(keys), dim):
            raise ValueError("matrix shape does not match keys/dim")
        if len(set(keys)) != len(keys):
            raise ValueError("(screen_id, caption_ordinal) keys must be unique")
        self.provider_id = provider_id
        self.dim = dim
        self.keys = list(keys)
        self.matrix = matrix.astype(float)
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("index contains zero vectors")
        self._unit = self.matrix / norms[:, None]

    def __len__(self) -> int:
        return len(self.keys)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"format": INDEX_FORMAT, "version": INDEX_VERSION,
                  "dim": self.dim, "provider_id": self.provider_id,
                  "count": len(self.keys)}
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for (screen_id, ordinal), row in zip(self.keys, self.matrix):
                fh.write(json.dumps(
                    {"screen_id": screen_id, "caption_ordinal": ordinal,
                     "values": [float(v) for v in row]}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RetrievalIndex":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ValueError(f"index file {path} is empty")
        header = json.loads(lines[0])
        if header.get("format") != INDEX_FORMAT:
            raise ValueError(f"{path} is not a {INDEX_FORMAT} file")
        keys: list[tuple[str, int]] = []
        rows: list[list[float]] = []
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            keys.append((rec["screen_id"], int(rec["caption_ordinal"])))
            rows.append(rec["values"])
        matrix = np.asarray(rows, dtype=float) if rows else \
            np.zeros((0, header["dim"]))
        return cls(provider_id=header["provider_id"], dim=header["dim"],
                   keys=keys, matrix=matrix)


def build_index(repo: Repository, provider: EmbeddingProvider,
                batch_size: int = 64) -> RetrievalIndex:
    """One entry per (screen, caption). Provider failures raise
    IndexBuildError reporting how many entries completed."""
    keys: list[tuple[str, int]] = []
    texts: list[str] = []
    for screen in repo:
        for ordinal, caption in enumerate(screen.captions):
            keys.append((screen.screen_id, ordinal))
            texts.append(caption)
    rows: list[np.ndarray] = []
    for start in range(0, len(texts), batch_size):
        batch = texts[start:start + batch_size]
        try:
            rows.extend(embed(provider, batch))
        except ProviderError as exc:
            raise IndexBuildError(
                f"embedding failed after {len(rows)} of {len(texts)} entries: {exc}",
                completed_entries=len(rows)) from exc
    matrix = np.asarray(rows, dtype=float) if rows else np.zeros((0, provider.dim))
    return RetrievalIndex(provider_id=provider.provider_id, dim=provider.dim,
                          keys=keys, matrix=matrix)


def retrieve_top_n(index: RetrievalIndex, provider: EmbeddingProvider,
                   nlr: str, n: int) -> RankedList:
    """Top-n distinct screens by max caption cosine similarity."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(index) == 0:
        raise ValueError("index is empty")
    if provider.provider_id != index.provider_id:
        raise IndexMismatchError(
            f"index was built with provider {index.provider_id!r}, "
            f"query provider is {provider.provider_id!r}")
    query_vec = embed(provider, [nlr])[0]
    norm = np.linalg.norm(query_vec)
    if norm == 0.0:
        raise ValueError("query embedded to a zero vector")
    sims = index._unit @ (query_vec / norm)
    best: dict[str, float] = {}
    for (screen_id, _), sim in zip(index.keys, sims):
        sim = float(np.clip(sim, -1.0, 1.0))
        if screen_id not in best or sim > best[screen_id]:
            best[screen_id] = sim
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return RankedList(query=nlr,
                      items=tuple(RankedItem(screen_id=sid, score=score)
                                  for sid, score in ranked),
                      n=n)


# ---------------------------------------------------------------------------
# Lexical baseline
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def bm25_scores(corpus: Sequence[Sequence[str]], query: Sequence[str],
                k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Okapi BM25 with the smoothed IDF ln(1 + (N - df + .5)/(df + .5)).

    Documents sharing no query term score 0; an empty query yields all
    zeros.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    n_docs = len(corpus)
    doc_lens = [len(doc) for doc in corpus]
    avgdl = sum(doc_lens) / n_docs if n_docs else 0.0
    df: dict[str, int] = {}
    for doc in corpus:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    scores = [0.0] * n_docs
    for term in dict.fromkeys(query):  # unique terms, stable order
        term_df = df.get(term)
        if not term_df:
            continue
        idf = math.log(1.0 + (n_docs - term_df + 0.5) / (term_df + 0.5))
        for i, doc in enumerate(corpus):
            tf = doc.count(term)
            if tf == 0:
                continue
            denom = tf + k1 * (1.0 - b + b * doc_lens[i] / avgdl)
            scores[i] += idf * tf * (k1 + 1.0) / denom
    return scores
