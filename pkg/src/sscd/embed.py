"""Fragment embedding: a deterministic feature-hash provider plus a remote
neural-service client, both producing unit-norm float32 vectors.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import CacheFormatError, ConfigError, EmbeddingServiceError
from .extract import CodeFragment

logger = logging.getLogger(__name__)

PROVIDERS = ("hash", "remote")
DEFAULT_DIMENSION = 768

# Seed key for the signed feature hash; fixed so vectors are reproducible
# across runs and platforms.
HASH_SEED = 0x5343_4431
_HASH_KEY = HASH_SEED.to_bytes(8, "little")

EMBED_CACHE_MAGIC = b"SSCDEMB1"

_RETRY_ATTEMPTS = 3
_RETRY_BACKOFF_S = 0.5
_REQUEST_TIMEOUT_S = 120.0


@dataclass
class EmbedderConfig:
    provider: str = "hash"
    dimension: int = DEFAULT_DIMENSION
    code_length: int = 512
    model_name: str = "hash-v1"
    service_endpoint: str | None = None
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.provider not in PROVIDERS:
            raise ConfigError(f"unknown provider {self.provider!r}; expected {PROVIDERS}")
        if self.dimension <= 0:
            raise ConfigError(f"dimension must be > 0, got {self.dimension}")
        if self.code_length <= 0:
            raise ConfigError(f"code_length must be > 0, got {self.code_length}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be > 0, got {self.batch_size}")
        if self.provider == "remote" and not self.service_endpoint:
            raise ConfigError("remote provider requires service_endpoint")


@dataclass
class EmbeddingVector:
    fragment_id: int
    values: np.ndarray  # float32, unit L2 norm

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ValueError("embedding values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"fragment {self.fragment_id}: non-finite embedding")
        norm = float(np.linalg.norm(self.values.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                f"fragment {self.fragment_id}: embedding norm {norm} is not 1"
            )


def truncate_tokens(tokens: Sequence[str], limit: int) -> list[str]:
    """Keep at most ``limit`` leading tokens."""
    if limit <= 0:
        raise ConfigError(f"token limit must be > 0, got {limit}")
    return list(tokens[:limit])


@lru_cache(maxsize=1 << 20)
def _token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), key=_HASH_KEY, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def hash_embed(tokens: Sequence[str], dimension: int) -> np.ndarray:
    """Signed bag-of-tokens feature hashing, L2-normalized.

    Order-free by construction: permutations of the same token multiset map
    to the same vector.
    """
    if not tokens:
        raise ValueError("cannot embed an empty token sequence")
    if dimension <= 0:
        raise ConfigError(f"dimension must be > 0, got {dimension}")
    acc = np.zeros(dimension, dtype=np.float64)
    for token in tokens:
        h = _token_hash(token)
        index = (h >> 1) % dimension
        sign = 1.0 if (h & 1) else -1.0
        acc[index] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        raise ValueError("hash embedding collapsed to the zero vector")
    return (acc / norm).astype(np.float32)


def mean_pool(token_vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Component-wise mean of same-dimension vectors, L2-normalized."""
    mat = np.asarray(token_vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("mean_pool needs at least one vector of uniform dimension")
    pooled = mat.mean(axis=0)
    norm = float(np.linalg.norm(pooled))
    if norm == 0.0:
        raise ValueError("pooled vector has zero norm")
    return (pooled / norm).astype(np.float32)


def _renormalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows.astype(np.float64), axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise EmbeddingServiceError("service returned a zero vector")
    return (rows / norms).astype(np.float32)


def validate_embed_response(payload: object, expected_count: int) -> np.ndarray:
    """Check a service response against the wire contract; return its rows.

    The contract: ``{"dimension": int, "vectors": [[float, ...], ...]}`` with
    one row per input text, every row of length ``dimension``, all finite.
    """
    if not isinstance(payload, dict):
        raise EmbeddingServiceError("response is not a JSON object")
    if "dimension" not in payload or "vectors" not in payload:
        raise EmbeddingServiceError("response missing 'dimension' or 'vectors'")
    dimension = payload["dimension"]
    vectors = payload["vectors"]
    if not isinstance(dimension, int) or dimension <= 0:
        raise EmbeddingServiceError(f"bad dimension {dimension!r}")
    if not isinstance(vectors, list) or len(vectors) != expected_count:
        raise EmbeddingServiceError(
            f"expected {expected_count} vectors, got "
            f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
        )
    try:
        rows = np.asarray(vectors, dtype=np.float64)
    except ValueError as exc:
        raise EmbeddingServiceError(f"vectors are not numeric: {exc}") from exc
    if rows.ndim != 2 or rows.shape[1] != dimension:
        raise EmbeddingServiceError(
            f"vector rows do not all have length {dimension}"
        )
    if not np.all(np.isfinite(rows)):
        raise EmbeddingServiceError("response contains non-finite values")
    return rows


class HashEmbedder:
    """Self-contained deterministic provider over lexical tokens."""

    def __init__(self, cfg: EmbedderConfig):
        self.cfg = cfg

    def embed_fragments(self, fragments: Sequence[CodeFragment]) -> list[EmbeddingVector]:
        out = []
        for frag in fragments:
            tokens = truncate_tokens(frag.tokens, self.cfg.code_length)
            if not tokens:
                logger.warning("fragment %d has no tokens; dropped", frag.id)
                continue
            out.append(EmbeddingVector(frag.id, hash_embed(tokens, self.cfg.dimension)))
        return out


class RemoteEmbedder:
    """Client for the HTTP embedding service.

    Sends raw fragment text; the service applies its own subword tokenizer
    and truncates to ``code_length`` tokens. Responses are re-normalized
    client-side and keyed back to fragment ids positionally.
    """

    def __init__(self, cfg: EmbedderConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self._session = session or requests.Session()

    def _post_batch(self, texts: list[str], batch_index: int) -> np.ndarray:
        url = self.cfg.service_endpoint.rstrip("/") + "/embed"
        body = {
            "model": self.cfg.model_name,
            "max_tokens": self.cfg.code_length,
            "texts": texts,
        }
        last_error: Exception | None = None
        for attempt in range(_RETRY_ATTEMPTS):
            if attempt:
                time.sleep(_RETRY_BACKOFF_S * 2 ** (attempt - 1))
            try:
                resp = self._session.post(url, json=body, timeout=_REQUEST_TIMEOUT_S)
                resp.raise_for_status()
                return validate_embed_response(resp.json(), len(texts))
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                logger.warning(
                    "embed batch %d attempt %d/%d failed: %s",
                    batch_index, attempt + 1, _RETRY_ATTEMPTS, exc,
                )
        raise EmbeddingServiceError(
            f"embedding service failed for batch {batch_index} "
            f"after {_RETRY_ATTEMPTS} attempts: {last_error}"
        ) from last_error

    def embed_fragments(self, fragments: Sequence[CodeFragment]) -> list[EmbeddingVector]:
        kept = []
        for frag in fragments:
            if not frag.tokens:
                logger.warning("fragment %d has no tokens; dropped", frag.id)
                continue
            kept.append(frag)
        out: list[EmbeddingVector] = []
        size = self.cfg.batch_size
        for batch_index, start in enumerate(range(0, len(kept), size)):
            batch = kept[start : start + size]
            rows = self._post_batch([f.text for f in batch], batch_index)
            if rows.shape[1] != self.cfg.dimension:
                raise EmbeddingServiceError(
                    f"service returned dimension {rows.shape[1]}, "
                    f"configured {self.cfg.dimension}"
                )
            rows = _renormalize(rows)
            out.extend(EmbeddingVector(f.id, row) for f, row in zip(batch, rows))
        return out


def make_embedder(cfg: EmbedderConfig):
    if cfg.provider == "hash":
        return HashEmbedder(cfg)
    return RemoteEmbedder(cfg)


def embed_batch(
    fragments: Sequence[CodeFragment], cfg: EmbedderConfig
) -> list[EmbeddingVector]:
    """Embed fragments in order; zero-token fragments are dropped with a warning."""
    return make_embedder(cfg).embed_fragments(fragments)


def as_matrix(vectors: Sequence[EmbeddingVector]) -> tuple[np.ndarray, np.ndarray]:
    """Pack embeddings into (ids, row matrix); rows aligned with ids."""
    if not vectors:
        return np.empty(0, dtype=np.int64), np.empty((0, 0), dtype=np.float32)
    ids = np.array([v.fragment_id for v in vectors], dtype=np.int64)
    mat = np.stack([v.values for v in vectors]).astype(np.float32)
    return ids, mat


def save_embeddings(path: str | Path, vectors: Sequence[EmbeddingVector]) -> None:
    """Write the binary cache: header {magic, u32 count, u32 dimension},
    then per record {u64 fragment_id, dimension x f32 little-endian}."""
    vectors = list(vectors)
    if vectors:
        dimension = vectors[0].values.shape[0]
        for v in vectors:
            if v.values.shape[0] != dimension:
                raise ValueError(
                    f"mixed dimensions in cache write: {v.values.shape[0]} != {dimension}"
                )
    else:
        dimension = 0
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(EMBED_CACHE_MAGIC)
        fh.write(struct.pack("<II", len(vectors), dimension))
        for v in vectors:
            fh.write(struct.pack("<Q", v.fragment_id))
            fh.write(np.ascontiguousarray(v.values, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> list[EmbeddingVector]:
    """Read a cache written by :func:`save_embeddings`; round-trip is bit-exact."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise CacheFormatError("file too short for header", offset=len(data))
    if data[:8] != EMBED_CACHE_MAGIC:
        raise CacheFormatError(f"bad magic {data[:8]!r}", offset=0)
    count, dimension = struct.unpack_from("<II", data, 8)
    record = 8 + 4 * dimension
    expected = 16 + count * record
    if len(data) != expected:
        raise CacheFormatError(
            f"expected {expected} bytes for {count} records of dimension {dimension}, "
            f"got {len(data)}",
            offset=min(len(data), expected),
        )
    out = []
    offset = 16
    for _ in range(count):
        (fragment_id,) = struct.unpack_from("<Q", data, offset)
        values = np.frombuffer(data, dtype="<f4", count=dimension, offset=offset + 8)
        out.append(EmbeddingVector(fragment_id, values.copy()))
        offset += record
    return out
