"""End-to-end detection runs: extract, embed, index, search, merge, write,
with per-stage wall-clock instrumentation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import (
    EmbedderConfig,
    EmbeddingVector,
    embed_batch,
    load_embeddings,
    save_embeddings,
)
from .errors import SscdError
from .extract import CodeFragment, ExtractionConfig, extract_fragments
from .hnsw import HnswIndex
from .metrics import TimingBreakdown, timing_report
from .report import ClonePair, collect_pairs, merge_rank, write_report
from .search import ExactIndex, SearchParams, search_all

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    source: Path
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    search: SearchParams = field(default_factory=SearchParams)
    hnsw_m: int = 32
    hnsw_ef_construction: int = 200
    seed: int = 0
    workers: int = 1
    output_dir: Path = Path(".")
    embeddings_cache: Path | None = None  # load embeddings instead of inferring
    save_embeddings_to: Path | None = None
    instrument: bool = True


@dataclass
class DetectResult:
    fragments: list[CodeFragment]
    pairs: list[ClonePair]
    timing: TimingBreakdown
    report_csv: Path
    report_jsonl: Path
    timing_json: Path


class _StageClock:
    """Monotonic per-stage wall clock, in milliseconds."""

    def __init__(self) -> None:
        self.stages: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def time(self, name: str):
        clock = self

        class _Ctx:
            def __enter__(self):
                self._start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                clock.stages[name] = clock.stages.get(name, 0.0) + (
                    (time.perf_counter() - self._start) * 1000.0
                )
                return False

        return _Ctx()

    def total_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0


def build_index(
    vectors: list[EmbeddingVector],
    search_type: str,
    hnsw_m: int,
    hnsw_ef_construction: int,
    seed: int,
):
    if search_type == "hnsw":
        return HnswIndex.build(
            vectors, m=hnsw_m, ef_construction=hnsw_ef_construction, seed=seed
        )
    return ExactIndex.from_embeddings(vectors)


def detect(config: RunConfig) -> DetectResult:
    """Run the whole pipeline and write report CSV/JSONL plus timing JSON.

    Partial outputs are removed if any stage fails.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_csv = out_dir / "report.csv"
    report_jsonl = out_dir / "report.jsonl"
    timing_json = out_dir / "timing.json"
    written: list[Path] = []
    clock = _StageClock()
    try:
        with clock.time("parse"):
            fragments = extract_fragments(
                config.source, config.extraction, workers=config.workers
            )
        if not fragments:
            logger.warning("no fragments extracted from %s", config.source)

        if config.embeddings_cache is not None:
            vectors = load_embeddings(config.embeddings_cache)
            known = {f.id for f in fragments}
            vectors = [v for v in vectors if v.fragment_id in known]
            clock.stages["inference"] = 0.0
        else:
            with clock.time("inference"):
                vectors = embed_batch(fragments, config.embedder)
        if config.save_embeddings_to is not None:
            save_embeddings(config.save_embeddings_to, vectors)

        with clock.time("index_build"):
            index = build_index(
                vectors,
                config.search.search_type,
                config.hnsw_m,
                config.hnsw_ef_construction,
                config.seed,
            )

        with clock.time("search"):
            per_query = search_all(index, config.search)
            pairs = merge_rank(
                collect_pairs(
                    per_query,
                    top_n=config.search.k,
                    similarity_floor=config.search.similarity_floor,
                )
            )

        by_id = {f.id: f for f in fragments}
        write_report(pairs, by_id, report_csv, format="csv")
        written.append(report_csv)
        write_report(pairs, by_id, report_jsonl, format="jsonl")
        written.append(report_jsonl)
        timing = timing_report(clock.stages, total_ms=clock.total_ms())
        timing_json.write_text(
            json.dumps(timing.as_dict(), indent=2) + "\n", encoding="utf-8"
        )
        written.append(timing_json)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return DetectResult(fragments, pairs, timing, report_csv, report_jsonl, timing_json)


@dataclass
class BenchResult:
    n: int
    dimension: int
    k: int
    recall_at_k: float
    exact_build_ms: float
    exact_search_ms: float
    hnsw_build_ms: float
    hnsw_search_ms: float

    def render(self) -> str:
        header = (
            f"{'backend':<8} {'recall@' + str(self.k):>10} "
            f"{'build_ms':>12} {'search_ms':>12}\n"
        )
        exact = f"{'exact':<8} {1.0:>10.4f} {self.exact_build_ms:>12.1f} {self.exact_search_ms:>12.1f}\n"
        hnsw = (
            f"{'hnsw':<8} {self.recall_at_k:>10.4f} "
            f"{self.hnsw_build_ms:>12.1f} {self.hnsw_search_ms:>12.1f}\n"
        )
        return header + exact + hnsw


def random_unit_vectors(n: int, dimension: int, seed: int) -> list[EmbeddingVector]:
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((n, dimension)).astype(np.float32)
    mat /= np.linalg.norm(mat.astype(np.float64), axis=1, keepdims=True)
    return [EmbeddingVector(i, mat[i]) for i in range(n)]


def bench(
    n: int,
    dimension: int = 768,
    seed: int = 0,
    k: int = 10,
    hnsw_m: int = 32,
    hnsw_ef_construction: int = 200,
    ef_search: int = 120,
    queries: int | None = None,
) -> BenchResult:
    """Compare exact and graph search on seeded random unit vectors.

    Quality numbers are deterministic for a fixed seed; timings are not.
    """
    if n < 100:
        raise SscdError(f"bench needs n >= 100, got {n}")
    vectors = random_unit_vectors(n, dimension, seed)
    params = SearchParams(
        search_type="hnsw", k=k, ef_search=max(ef_search, k), similarity_floor=-1.0
    )

    t0 = time.perf_counter()
    exact = ExactIndex.from_embeddings(vectors)
    exact_build_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    hnsw = HnswIndex.build(
        vectors, m=hnsw_m, ef_construction=hnsw_ef_construction, seed=seed
    )
    hnsw_build_ms = (time.perf_counter() - t0) * 1000.0

    if queries is None or queries >= n:
        query_ids = list(range(n))
    else:
        stride = max(1, n // queries)
        query_ids = list(range(0, n, stride))[:queries]

    t0 = time.perf_counter()
    exact_hits = exact.search_many(query_ids, params)
    exact_search_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    hnsw_hits = {q: hnsw.search_id(q, params) for q in query_ids}
    hnsw_search_ms = (time.perf_counter() - t0) * 1000.0

    found = 0
    expected = 0
    for q in query_ids:
        truth = {c.hit_id for c in exact_hits[q]}
        got = {c.hit_id for c in hnsw_hits[q]}
        found += len(truth & got)
        expected += len(truth)
    recall_at_k = found / expected if expected else 1.0
    return BenchResult(
        n=n,
        dimension=dimension,
        k=k,
        recall_at_k=recall_at_k,
        exact_build_ms=exact_build_ms,
        exact_search_ms=exact_search_ms,
        hnsw_build_ms=hnsw_build_ms,
        hnsw_search_ms=hnsw_search_ms,
    )
