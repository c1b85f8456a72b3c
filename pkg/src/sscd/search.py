"""Nearest-neighbour search over fragment embeddings.

Two interchangeable back-ends share one contract: per-query ranked candidate
lists under cosine similarity, self-hits excluded, ties broken by ascending
hit id. The exact back-end lives here; the approximate graph index is in
:mod:`sscd.hnsw`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .embed import EmbeddingVector, as_matrix
from .errors import ConfigError

SEARCH_TYPES = ("exact", "hnsw")

# Chunk of rows converted to float64 at a time during full scans; similarity
# accumulation stays 64-bit without cloning the whole matrix.
_SCAN_CHUNK = 8192


@dataclass
class SearchParams:
    search_type: str = "exact"
    k: int = 10
    ef_search: int = 120
    similarity_floor: float = 0.95

    def __post_init__(self) -> None:
        if self.search_type not in SEARCH_TYPES:
            raise ConfigError(
                f"unknown search_type {self.search_type!r}; expected {SEARCH_TYPES}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.ef_search < self.k:
            raise ConfigError(
                f"ef_search ({self.ef_search}) must be >= k ({self.k})"
            )
        if not -1.0 <= self.similarity_floor <= 1.0:
            raise ConfigError(
                f"similarity_floor must be in [-1, 1], got {self.similarity_floor}"
            )


@dataclass
class CloneCandidate:
    query_id: int
    hit_id: int
    similarity: float
    rank: int


def cosine(a, b) -> float:
    """Cosine similarity with 64-bit accumulation."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.dot(av, bv) / (na * nb))


def rank_candidates(
    query_id: int,
    hit_ids: np.ndarray,
    sims: np.ndarray,
    k: int,
    floor: float,
) -> list[CloneCandidate]:
    """Apply the shared ranking contract: floor filter, sort by similarity
    descending with ascending-id tie-break, cut to k, assign ranks."""
    keep = sims >= floor
    hit_ids = hit_ids[keep]
    sims = sims[keep]
    if hit_ids.size == 0:
        return []
    order = np.lexsort((hit_ids, -sims))[:k]
    return [
        CloneCandidate(query_id, int(hit_ids[j]), float(sims[j]), rank)
        for rank, j in enumerate(order, start=1)
    ]


class SearchIndex(Protocol):
    """Contract both back-ends satisfy."""

    @property
    def ids(self) -> np.ndarray: ...

    def search_id(self, query_id: int, params: SearchParams) -> list[CloneCandidate]: ...


class ExactIndex:
    """Full-scan cosine search over a row matrix of unit vectors."""

    def __init__(self, ids: np.ndarray, matrix: np.ndarray):
        self._ids = np.asarray(ids, dtype=np.int64)
        self._matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if self._matrix.ndim != 2 or self._matrix.shape[0] != self._ids.shape[0]:
            raise ValueError("ids and matrix rows must align")
        self._row_of = {int(i): r for r, i in enumerate(self._ids)}

    @classmethod
    def from_embeddings(cls, vectors: Sequence[EmbeddingVector]) -> "ExactIndex":
        ids, mat = as_matrix(vectors)
        return cls(ids, mat)

    def __len__(self) -> int:
        return self._matrix.shape[0]

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1] if self._matrix.size else 0

    def similarities_to(self, vector: np.ndarray) -> np.ndarray:
        """Cosine of every row against ``vector`` (rows assumed unit norm)."""
        q = np.asarray(vector, dtype=np.float64)
        out = np.empty(len(self), dtype=np.float64)
        for start in range(0, len(self), _SCAN_CHUNK):
            chunk = self._matrix[start : start + _SCAN_CHUNK]
            out[start : start + chunk.shape[0]] = chunk.astype(np.float64) @ q
        return out

    def search_vector(
        self,
        vector: np.ndarray,
        params: SearchParams,
        exclude_id: int | None = None,
    ) -> list[CloneCandidate]:
        if len(self) == 0:
            return []
        sims = self.similarities_to(vector)
        mask = np.ones(len(self), dtype=bool)
        if exclude_id is not None and exclude_id in self._row_of:
            mask[self._row_of[exclude_id]] = False
        return rank_candidates(
            exclude_id if exclude_id is not None else -1,
            self._ids[mask],
            sims[mask],
            params.k,
            params.similarity_floor,
        )

    def search_id(self, query_id: int, params: SearchParams) -> list[CloneCandidate]:
        if query_id not in self._row_of:
            raise KeyError(f"unknown query id {query_id}")
        row = self._row_of[query_id]
        cands = self.search_vector(self._matrix[row], params, exclude_id=query_id)
        for c in cands:
            c.query_id = query_id
        return cands

    def search_many(
        self, query_ids: Sequence[int], params: SearchParams, block: int = 128
    ) -> dict[int, list[CloneCandidate]]:
        """Full scans for many queries at once; one float64 conversion per
        row chunk is shared by a whole block of queries."""
        out: dict[int, list[CloneCandidate]] = {}
        n = len(self)
        for start in range(0, len(query_ids), block):
            ids_block = [int(q) for q in query_ids[start : start + block]]
            rows = []
            for q in ids_block:
                if q not in self._row_of:
                    raise KeyError(f"unknown query id {q}")
                rows.append(self._row_of[q])
            queries = self._matrix[rows].astype(np.float64)
            sims = np.empty((len(rows), n), dtype=np.float64)
            for cstart in range(0, n, _SCAN_CHUNK):
                chunk = self._matrix[cstart : cstart + _SCAN_CHUNK].astype(np.float64)
                sims[:, cstart : cstart + chunk.shape[0]] = queries @ chunk.T
            for i, (qid, row) in enumerate(zip(ids_block, rows)):
                mask = np.ones(n, dtype=bool)
                mask[row] = False
                out[qid] = rank_candidates(
                    qid, self._ids[mask], sims[i][mask], params.k,
                    params.similarity_floor,
                )
        return out


def exact_search(
    index: ExactIndex, query_id: int, params: SearchParams
) -> list[CloneCandidate]:
    """Rank the k highest-cosine non-self rows at or above the floor."""
    return index.search_id(query_id, params)


def search_all(
    index: SearchIndex, params: SearchParams
) -> dict[int, list[CloneCandidate]]:
    """One ranked candidate list per indexed fragment."""
    all_ids = [int(q) for q in index.ids]
    if hasattr(index, "search_many"):
        return index.search_many(all_ids, params)
    return {qid: index.search_id(qid, params) for qid in all_ids}
