"""Layered navigable-small-world graph index for approximate cosine search.

Internally the graph stores and compares ``1 - cosine`` so smaller is
better; the public surface speaks cosine similarity like the exact
back-end. Neighbour selection uses the distance-diversity heuristic, and
edges are kept symmetric per layer at all times, so the structural audit
holds after every build.

Adjacency lives in flat per-layer arrays (one row per node, one slack
column for the pre-shrink overflow) and the traversal loops are JIT
kernels; builds stay single-threaded, frozen indexes support concurrent
readers.
"""

from __future__ import annotations

import math
import random
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _hnsw_kernels as _k
from .embed import EmbeddingVector
from .errors import IndexFormatError, IndexInvariantError
from .search import CloneCandidate, SearchParams, rank_candidates

INDEX_MAGIC = b"SSCDHNSW"
_FORMAT_VERSION = 1

DEFAULT_M = 32
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 120


def assign_level(m: int, u: float) -> int:
    """Level draw: floor(-ln(u) * mL) with mL = 1/ln(m), u in (0, 1]."""
    if not 0.0 < u <= 1.0:
        raise ValueError(f"u must be in (0, 1], got {u}")
    return int(math.floor(-math.log(u) / math.log(m)))


class HnswIndex:
    def __init__(
        self,
        dimension: int,
        m: int = DEFAULT_M,
        ef_construction: int = DEFAULT_EF_CONSTRUCTION,
        seed: int = 0,
    ):
        if m < 2:
            raise ValueError(f"m must be >= 2, got {m}")
        if ef_construction < m:
            raise ValueError(
                f"ef_construction ({ef_construction}) must be >= m ({m})"
            )
        self._dimension = dimension
        self._m = m
        self._m0 = 2 * m
        self._ef_construction = ef_construction
        self._seed = seed
        self._rng = random.Random(seed)
        self._capacity = 0
        self._count = 0
        self._vectors = np.empty((0, dimension), dtype=np.float32)
        self._ids: list[int] = []
        self._id_to_node: dict[int, int] = {}
        self._levels: list[int] = []
        # per layer: (neighbours int32 (capacity, cap+1), counts int32 (capacity,))
        self._layer_nbrs: list[np.ndarray] = []
        self._layer_cnt: list[np.ndarray] = []
        self._visit_tags = np.empty(0, dtype=np.int64)
        self._epoch = 0
        self._entry: int | None = None
        self._frozen = False

    # -- construction ------------------------------------------------------

    @classmethod
    def build(
        cls,
        vectors: Sequence[EmbeddingVector],
        m: int = DEFAULT_M,
        ef_construction: int = DEFAULT_EF_CONSTRUCTION,
        seed: int = 0,
    ) -> "HnswIndex":
        """Insert embeddings in fragment-id order and freeze."""
        ordered = sorted(vectors, key=lambda v: v.fragment_id)
        dimension = ordered[0].values.shape[0] if ordered else 0
        index = cls(dimension, m=m, ef_construction=ef_construction, seed=seed)
        for vec in ordered:
            index.add(vec.fragment_id, vec.values)
        index.freeze()
        return index

    def add(self, fragment_id: int, vector: np.ndarray) -> None:
        if self._frozen:
            raise RuntimeError("index is frozen")
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self._dimension,):
            raise ValueError(
                f"vector dimension {vector.shape} != ({self._dimension},)"
            )
        if fragment_id in self._id_to_node:
            raise ValueError(f"duplicate fragment id {fragment_id}")

        node = self._count
        self._ensure_capacity(node + 1)
        self._vectors[node] = vector
        self._ids.append(fragment_id)
        self._id_to_node[fragment_id] = node
        level = assign_level(self._m, 1.0 - self._rng.random())
        self._levels.append(level)
        self._count += 1

        if self._entry is None:
            for layer in range(level + 1):
                self._add_layer()
            self._entry = node
            return

        q = vector.astype(np.float64)
        max_level = len(self._layer_nbrs) - 1
        cur = self._entry
        cur_dist = 1.0 - float(self._vectors[cur].astype(np.float64) @ q)
        for layer in range(max_level, level, -1):
            cur, cur_dist = _k.greedy_descend(
                self._vectors, self._layer_nbrs[layer], self._layer_cnt[layer],
                cur, cur_dist, q,
            )

        entry_nodes = np.array([cur], dtype=np.int64)
        entry_dists = np.array([cur_dist], dtype=np.float64)
        sel_buf = np.empty(self._m, dtype=np.int64)
        for layer in range(min(level, max_level), -1, -1):
            nbrs, cnt = self._layer_nbrs[layer], self._layer_cnt[layer]
            self._epoch += 1
            dists, nodes = _k.beam_search(
                self._vectors, nbrs, cnt, q, entry_nodes, entry_dists,
                self._ef_construction, self._visit_tags, self._epoch,
            )
            order = np.lexsort((nodes, dists))
            dists, nodes = dists[order], nodes[order]
            n_sel = _k.select_neighbors(self._vectors, dists, nodes, self._m, sel_buf)
            selected = sel_buf[:n_sel]
            nbrs[node, :n_sel] = selected
            cnt[node] = n_sel
            cap = self._m0 if layer == 0 else self._m
            for nb in selected.tolist():
                c = int(cnt[nb])
                nbrs[nb, c] = node
                cnt[nb] = c + 1
                if c + 1 > cap:
                    self._shrink(layer, nb, cap)
            entry_nodes, entry_dists = nodes, dists

        if level > max_level:
            for layer in range(max_level + 1, level + 1):
                self._add_layer()
            self._entry = node

    def freeze(self) -> None:
        """Make the index read-only; safe for concurrent searches afterwards."""
        self._frozen = True

    def _add_layer(self) -> None:
        cap = self._m0 if not self._layer_nbrs else self._m
        rows = max(self._capacity, 1)
        self._layer_nbrs.append(np.zeros((rows, cap + 1), dtype=np.int32))
        self._layer_cnt.append(np.zeros(rows, dtype=np.int32))

    def _ensure_capacity(self, n: int) -> None:
        if n <= self._capacity:
            return
        new_cap = max(64, n, self._capacity * 2)
        grown = np.empty((new_cap, self._dimension), dtype=np.float32)
        grown[: self._count] = self._vectors[: self._count]
        self._vectors = grown
        tags = np.zeros(new_cap, dtype=np.int64)
        tags[: self._count] = self._visit_tags[: self._count]
        self._visit_tags = tags
        for i, (nbrs, cnt) in enumerate(zip(self._layer_nbrs, self._layer_cnt)):
            g = np.zeros((new_cap, nbrs.shape[1]), dtype=np.int32)
            g[: self._count] = nbrs[: self._count]
            self._layer_nbrs[i] = g
            c = np.zeros(new_cap, dtype=np.int32)
            c[: self._count] = cnt[: self._count]
            self._layer_cnt[i] = c
        self._capacity = new_cap

    def _shrink(self, layer: int, node: int, cap: int) -> None:
        """Re-select ``node``'s neighbour list, dropping the reverse edges of
        pruned neighbours so adjacency stays symmetric."""
        nbrs, cnt = self._layer_nbrs[layer], self._layer_cnt[layer]
        c = int(cnt[node])
        targets = nbrs[node, :c].astype(np.int64)
        dists = _k.dists_from_node(self._vectors, node, targets)
        order = np.lexsort((targets, dists))
        out = np.empty(cap, dtype=np.int64)
        n_sel = _k.select_neighbors(
            self._vectors, dists[order], targets[order], cap, out
        )
        kept = out[:n_sel]
        kept_set = set(kept.tolist())
        for dropped in targets.tolist():
            if dropped not in kept_set:
                self._remove_edge(layer, dropped, node)
        nbrs[node, :n_sel] = kept
        cnt[node] = n_sel

    def _remove_edge(self, layer: int, node: int, target: int) -> None:
        nbrs, cnt = self._layer_nbrs[layer], self._layer_cnt[layer]
        c = int(cnt[node])
        row = nbrs[node]
        idx = int(np.nonzero(row[:c] == target)[0][0])
        row[idx : c - 1] = row[idx + 1 : c]
        cnt[node] = c - 1

    # -- queries -------------------------------------------------------------

    @property
    def ids(self) -> np.ndarray:
        return np.asarray(self._ids, dtype=np.int64)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def max_level(self) -> int:
        return len(self._layer_nbrs) - 1

    @property
    def m(self) -> int:
        return self._m

    @property
    def ef_construction(self) -> int:
        return self._ef_construction

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def entry_point(self) -> int | None:
        return self._entry

    def __len__(self) -> int:
        return self._count

    def search_vector(
        self,
        vector: np.ndarray,
        params: SearchParams,
        exclude_id: int | None = None,
        query_id: int = -1,
    ) -> list[CloneCandidate]:
        if self._count == 0 or self._entry is None:
            return []
        q = np.asarray(vector, dtype=np.float64)
        ef = max(params.ef_search, params.k)
        cur = self._entry
        cur_dist = 1.0 - float(self._vectors[cur].astype(np.float64) @ q)
        for layer in range(len(self._layer_nbrs) - 1, 0, -1):
            cur, cur_dist = _k.greedy_descend(
                self._vectors, self._layer_nbrs[layer], self._layer_cnt[layer],
                cur, cur_dist, q,
            )
        visited = np.zeros(self._count, dtype=np.int64)
        dists, nodes = _k.beam_search(
            self._vectors, self._layer_nbrs[0], self._layer_cnt[0], q,
            np.array([cur], dtype=np.int64),
            np.array([cur_dist], dtype=np.float64),
            ef, visited, 1,
        )
        exclude_node = (
            self._id_to_node.get(exclude_id) if exclude_id is not None else None
        )
        hit_ids = []
        sims = []
        for d, n in zip(dists.tolist(), nodes.tolist()):
            if n == exclude_node:
                continue
            hit_ids.append(self._ids[n])
            sims.append(1.0 - d)
        return rank_candidates(
            query_id,
            np.asarray(hit_ids, dtype=np.int64),
            np.asarray(sims, dtype=np.float64),
            params.k,
            params.similarity_floor,
        )

    def search_id(self, query_id: int, params: SearchParams) -> list[CloneCandidate]:
        if query_id not in self._id_to_node:
            raise KeyError(f"unknown query id {query_id}")
        node = self._id_to_node[query_id]
        return self.search_vector(
            self._vectors[node], params, exclude_id=query_id, query_id=query_id
        )

    # -- invariants ------------------------------------------------------------

    def audit(self) -> None:
        """Raise IndexInvariantError if the graph violates its invariants."""
        if self._count == 0:
            if self._entry is not None or self._layer_nbrs:
                raise IndexInvariantError("empty index with residual structure")
            return
        if self._entry is None:
            raise IndexInvariantError("non-empty index without entry point")
        if self._levels[self._entry] != self.max_level:
            raise IndexInvariantError(
                f"entry point level {self._levels[self._entry]} != top layer "
                f"{self.max_level}"
            )
        if max(self._levels) != self.max_level:
            raise IndexInvariantError("layer count does not match highest level")
        for layer, (nbrs, cnt) in enumerate(zip(self._layer_nbrs, self._layer_cnt)):
            cap = self._m0 if layer == 0 else self._m
            neighbor_sets: dict[int, set[int]] = {}
            for node in range(self._count):
                c = int(cnt[node])
                if self._levels[node] < layer:
                    if c != 0:
                        raise IndexInvariantError(
                            f"node {node} has edges on layer {layer} above its level"
                        )
                    continue
                if c > cap:
                    raise IndexInvariantError(
                        f"node {node} degree {c} exceeds {cap} on layer {layer}"
                    )
                row = nbrs[node, :c].tolist()
                if node in row:
                    raise IndexInvariantError(f"self-loop at node {node}")
                row_set = set(row)
                if len(row_set) != c:
                    raise IndexInvariantError(f"duplicate edges at node {node}")
                for nb in row:
                    if not 0 <= nb < self._count or self._levels[nb] < layer:
                        raise IndexInvariantError(
                            f"edge {node}->{nb} leaves layer {layer}"
                        )
                neighbor_sets[node] = row_set
            for node, row_set in neighbor_sets.items():
                for nb in row_set:
                    if node not in neighbor_sets.get(nb, ()):
                        raise IndexInvariantError(
                            f"asymmetric edge {node}->{nb} on layer {layer}"
                        )

    # -- serialization -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(
                struct.pack(
                    "<IIIqiIII",
                    _FORMAT_VERSION,
                    self._m,
                    self._ef_construction,
                    self._seed,
                    -1 if self._entry is None else self._entry,
                    len(self._layer_nbrs),
                    self._count,
                    self._dimension,
                )
            )
            fh.write(np.asarray(self._ids, dtype="<u8").tobytes())
            fh.write(np.asarray(self._levels, dtype="<u4").tobytes())
            for layer, (nbrs, cnt) in enumerate(zip(self._layer_nbrs, self._layer_cnt)):
                members = [n for n in range(self._count) if self._levels[n] >= layer]
                fh.write(struct.pack("<I", len(members)))
                for node in members:
                    c = int(cnt[node])
                    fh.write(struct.pack("<II", node, c))
                    fh.write(np.ascontiguousarray(nbrs[node, :c], dtype="<u4").tobytes())
            fh.write(
                np.ascontiguousarray(
                    self._vectors[: self._count], dtype="<f4"
                ).tobytes()
            )

    @classmethod
    def load(cls, path: str | Path) -> "HnswIndex":
        path = Path(path)
        data = path.read_bytes()
        if data[:8] != INDEX_MAGIC:
            raise IndexFormatError(f"bad magic {data[:8]!r}")
        header = struct.Struct("<IIIqiIII")
        if len(data) < 8 + header.size:
            raise IndexFormatError("truncated header")
        version, m, efc, seed, entry, n_layers, count, dimension = header.unpack_from(
            data, 8
        )
        if version != _FORMAT_VERSION:
            raise IndexFormatError(f"unsupported format version {version}")
        offset = 8 + header.size

        def take(dtype: str, n: int) -> np.ndarray:
            nonlocal offset
            try:
                arr = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
            except ValueError as exc:
                raise IndexFormatError(
                    f"truncated index file at offset {offset}: {exc}"
                ) from exc
            offset += arr.nbytes
            return arr

        try:
            index = cls(dimension, m=m, ef_construction=efc, seed=seed)
            index._ids = [int(i) for i in take("<u8", count)]
            index._levels = [int(l) for l in take("<u4", count)]
            index._id_to_node = {fid: n for n, fid in enumerate(index._ids)}
            index._count = count
            index._capacity = count
            index._visit_tags = np.zeros(count, dtype=np.int64)
            for layer in range(n_layers):
                cap = index._m0 if layer == 0 else index._m
                nbrs = np.zeros((max(count, 1), cap + 1), dtype=np.int32)
                cnt = np.zeros(max(count, 1), dtype=np.int32)
                (n_nodes,) = struct.unpack_from("<I", data, offset)
                offset += 4
                for _ in range(n_nodes):
                    node, deg = struct.unpack_from("<II", data, offset)
                    offset += 8
                    if deg > cap:
                        raise IndexFormatError(
                            f"node {node} degree {deg} exceeds layer cap {cap}"
                        )
                    nbrs[node, :deg] = take("<u4", deg)
                    cnt[node] = deg
                index._layer_nbrs.append(nbrs)
                index._layer_cnt.append(cnt)
            index._vectors = np.ascontiguousarray(
                take("<f4", count * dimension).reshape(count, dimension),
                dtype=np.float32,
            )
        except struct.error as exc:
            raise IndexFormatError(f"truncated or corrupt index file: {exc}") from exc
        if offset != len(data):
            raise IndexFormatError(
                f"{len(data) - offset} trailing bytes after index payload"
            )
        index._entry = None if entry < 0 else int(entry)
        index._frozen = True
        return index


def hnsw_build(
    vectors: Sequence[EmbeddingVector],
    m: int = DEFAULT_M,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    seed: int = 0,
) -> HnswIndex:
    return HnswIndex.build(vectors, m=m, ef_construction=ef_construction, seed=seed)


def hnsw_search(
    index: HnswIndex, query_id: int, params: SearchParams
) -> list[CloneCandidate]:
    return index.search_id(query_id, params)
