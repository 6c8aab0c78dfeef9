"""Top-k candidate retrieval over the taxonomy: fuzzy (token-sort ratio) or
dense (cosine over embeddings). Ties are always broken by taxonomy id.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..fuzzy import char_masks, ratio, sort_tokens
from ..providers import DEFAULT_EMBEDDING_MODEL, Provider
from ..taxonomy import Taxonomy, render_passage

DEFAULT_K = 10
INDEX_MAGIC = b"SKFIDX01"


@dataclass(frozen=True)
class Candidate:
    taxonomy_id: str
    label: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    query: str
    method: str
    candidates: tuple[Candidate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        ids = [c.taxonomy_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be distinct")

    @property
    def ids(self) -> list[str]:
        return [c.taxonomy_id for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


def rank_scores(scores: Sequence[float], ids: Sequence[str], k: int) -> list[int]:
    """Indices of the top ``k`` scores, descending, ties by id ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return []
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    order = np.lexsort((id_rank, -scores))
    return order[: max(k, 0)].tolist()


def _ranked(query, method, idx, scores, ids, labels) -> RankedList:
    return RankedList(
        query,
        method,
        [Candidate(ids[i], labels[i], float(scores[i]), r) for r, i in enumerate(idx, start=1)],
    )


def is_e5(model: str) -> bool:
    return "e5" in model.lower()


def query_text(text: str, model: str) -> str:
    return f"query: {text}" if is_e5(model) else text


def passage_text(text: str, model: str) -> str:
    return f"passage: {text}" if is_e5(model) else text


# ------------------------------------------------------------------- fuzzy


class FuzzyRetriever(BaseEstimator):
    """Token-sort-ratio retrieval; ``fit`` precomputes normalized labels."""

    def __init__(self, k=DEFAULT_K, use_alt_labels=False):
        self.k = k
        self.use_alt_labels = use_alt_labels

    def fit(self, taxonomy: Taxonomy, y=None):
        self.ids_ = []
        self.labels_ = []
        self._keys = []  # (entry position, sorted label, char masks)
        for pos, e in enumerate(taxonomy):
            self.ids_.append(e.id)
            self.labels_.append(e.preferred_label)
            names = [e.preferred_label] + (list(e.alt_labels) if self.use_alt_labels else [])
            for name in names:
                norm = sort_tokens(name)
                self._keys.append((pos, norm, char_masks(norm)))
        return self

    def scores(self, query: str) -> np.ndarray:
        check_is_fitted(self, "ids_")
        if not query.strip():
            raise ValueError("empty query")
        q = sort_tokens(query)
        out = np.full(len(self.ids_), -np.inf)
        for pos, norm, masks in self._keys:
            s = ratio(norm, q, masks)
            if s > out[pos]:
                out[pos] = s
        return out

    def retrieve(self, query: str, k: int | None = None) -> RankedList:
        s = self.scores(query)
        idx = rank_scores(s, self.ids_, self.k if k is None else k)
        return _ranked(query, "fuzzy", idx, s, self.ids_, self.labels_)

    def predict(self, queries: Sequence[str]) -> list[RankedList]:
        return [self.retrieve(q) for q in queries]


def retrieve_fuzzy(query: str, taxonomy: Taxonomy, k: int = DEFAULT_K) -> RankedList:
    return FuzzyRetriever(k=k).fit(taxonomy).retrieve(query)


# --------------------------------------------------------------- embedding


@dataclass
class EmbeddingIndex:
    """L2-normalized passage vectors, one row per taxonomy entry."""

    ids: list[str]
    vectors: np.ndarray
    model: str = DEFAULT_EMBEDDING_MODEL
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.ids):
            raise ValueError("vectors must be a (len(ids), dim) matrix")
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero vector in index")
        self.vectors = v / norms
        if not self.labels:
            self.labels = list(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def similarities(self, query_vector) -> np.ndarray:
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query dimension {q.shape} does not match index dimension {self.dim}")
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero query vector")
        return self.vectors @ (q / n)

    def search(self, query_vector, k: int = DEFAULT_K, query: str = "") -> RankedList:
        s = self.similarities(query_vector)
        idx = rank_scores(s, self.ids, k)
        return _ranked(query, "embedding", idx, s, self.ids, self.labels)

    # binary sidecar: magic, u16 model-id length, model id, u32 dim, u32 count,
    # then count*dim little-endian float32; ids/labels go to a JSON manifest
    def save(self, path: str | Path) -> None:
        path = Path(path)
        model = self.model.encode("utf-8")
        with path.open("wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<H", len(model)))
            fh.write(model)
            fh.write(struct.pack("<II", self.dim, len(self.ids)))
            fh.write(self.vectors.astype("<f4").tobytes())
        manifest = {"model": self.model, "dim": self.dim, "ids": self.ids, "labels": self.labels}
        manifest_path(path).write_text(json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        path = Path(path)
        data = path.read_bytes()
        if not data.startswith(INDEX_MAGIC):
            raise ValueError(f"{path} is not an embedding index")
        off = len(INDEX_MAGIC)
        (mlen,) = struct.unpack_from("<H", data, off)
        off += 2
        model = data[off : off + mlen].decode("utf-8")
        off += mlen
        dim, count = struct.unpack_from("<II", data, off)
        off += 8
        expected = count * dim * 4
        if len(data) - off != expected:
            raise ValueError(f"{path}: expected {expected} bytes of vectors, found {len(data) - off}")
        vectors = np.frombuffer(data, dtype="<f4", offset=off).reshape(count, dim)
        manifest = json.loads(manifest_path(path).read_text(encoding="utf-8"))
        if manifest["model"] != model or len(manifest["ids"]) != count:
            raise ValueError(f"{path}: manifest does not match index header")
        return cls(manifest["ids"], vectors.astype(np.float64), model, manifest.get("labels") or [])


def manifest_path(index_path: str | Path) -> Path:
    p = Path(index_path)
    return p.with_name(p.name + ".json")


def build_index(
    taxonomy: Taxonomy,
    provider: Provider,
    model: str = DEFAULT_EMBEDDING_MODEL,
    passage_mode: str = "label",
) -> EmbeddingIndex:
    entries = list(taxonomy)
    texts = [passage_text(render_passage(e, passage_mode), model) for e in entries]
    matrix = provider.embed_matrix(texts, model)
    return EmbeddingIndex([e.id for e in entries], matrix, model, [e.preferred_label for e in entries])


class EmbeddingRetriever(BaseEstimator):
    """Dense retrieval. ``fit`` embeds the taxonomy (or adopts ``index``)."""

    def __init__(self, provider=None, model=DEFAULT_EMBEDDING_MODEL, k=DEFAULT_K, passage_mode="label", index=None):
        self.provider = provider
        self.model = model
        self.k = k
        self.passage_mode = passage_mode
        self.index = index

    def fit(self, taxonomy: Taxonomy | None = None, y=None):
        if self.index is not None:
            self.index_ = self.index
        else:
            if taxonomy is None or self.provider is None:
                raise ValueError("need a taxonomy and a provider to build the index")
            self.index_ = build_index(taxonomy, self.provider, self.model, self.passage_mode)
        return self

    def embed_queries(self, queries: Sequence[str]) -> np.ndarray:
        if self.provider is None:
            raise ValueError("no provider configured to embed queries")
        for q in queries:
            if not q.strip():
                raise ValueError("empty query")
        return self.provider.embed_matrix([query_text(q, self.index_.model) for q in queries], self.index_.model)

    def retrieve(self, query: str, k: int | None = None) -> RankedList:
        check_is_fitted(self, "index_")
        vec = self.embed_queries([query])[0]
        return self.index_.search(vec, self.k if k is None else k, query)

    def predict(self, queries: Sequence[str]) -> list[RankedList]:
        check_is_fitted(self, "index_")
        queries = list(queries)
        if not queries:
            return []
        M = self.embed_queries(queries)
        return [self.index_.search(M[i], self.k, q) for i, q in enumerate(queries)]


def retrieve_embedding(query: str, index: EmbeddingIndex, k: int = DEFAULT_K, provider: Provider | None = None) -> RankedList:
    return EmbeddingRetriever(provider=provider, k=k, index=index).fit().retrieve(query)
