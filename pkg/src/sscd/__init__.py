"""Embedding-based, search-driven code clone detection."""

from .embed import (
    EmbedderConfig,
    EmbeddingVector,
    embed_batch,
    hash_embed,
    load_embeddings,
    mean_pool,
    save_embeddings,
    truncate_tokens,
)
from .errors import (
    CacheFormatError,
    ConfigError,
    EmbeddingServiceError,
    IndexFormatError,
    IndexInvariantError,
    ManifestError,
    SscdError,
)
from .extract import (
    CodeFragment,
    ExtractionConfig,
    count_loc,
    dump_fragments,
    extract_fragments,
    load_manifest,
    strip_comments,
    tokenize,
)
from .hnsw import HnswIndex, assign_level, hnsw_build, hnsw_search
from .metrics import (
    DetectedPair,
    EvalReport,
    FragmentCoord,
    GroundTruthPair,
    ReviewTable,
    TimingBreakdown,
    classify_type_band,
    cohen_kappa,
    f_score,
    match_overlap,
    mrr,
    precision_from_sample,
    recall,
    recall_by_type,
    timing_report,
)
from .pipeline import DetectResult, RunConfig, bench, detect
from .report import ClonePair, collect_pairs, merge_rank, write_report
from .search import (
    CloneCandidate,
    ExactIndex,
    SearchParams,
    cosine,
    exact_search,
    search_all,
)

__version__ = "0.1.0"
