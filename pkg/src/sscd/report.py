"""Collapse per-query candidate lists into a deduplicated, globally ranked
clone-pair report, and write it in CSV / JSONL form."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import SscdError
from .extract import CodeFragment
from .search import CloneCandidate


@dataclass
class ClonePair:
    """Unordered pair of fragments; a_id < b_id always holds."""

    a_id: int
    b_id: int
    similarity: float
    provenance: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.a_id >= self.b_id:
            raise ValueError(f"pair ids must satisfy a_id < b_id, got {self.a_id}, {self.b_id}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a_id, self.b_id)


def collect_pairs(
    per_query_lists: Mapping[int, Sequence[CloneCandidate]] | Iterable[Sequence[CloneCandidate]],
    top_n: int | None = None,
    similarity_floor: float | None = None,
) -> dict[tuple[int, int], ClonePair]:
    """Union directed candidates into unordered pairs.

    (q -> h) and (h -> q) collapse onto the key (min, max); a pair's
    similarity is the max over its directions, and it survives even when
    only one direction produced it.
    """
    if isinstance(per_query_lists, Mapping):
        lists = per_query_lists.values()
    else:
        lists = per_query_lists
    pairs: dict[tuple[int, int], ClonePair] = {}
    for candidates in lists:
        kept = candidates[:top_n] if top_n is not None else candidates
        for cand in kept:
            if similarity_floor is not None and cand.similarity < similarity_floor:
                continue
            a, b = sorted((cand.query_id, cand.hit_id))
            direction = f"{cand.query_id}->{cand.hit_id}"
            pair = pairs.get((a, b))
            if pair is None:
                pairs[(a, b)] = ClonePair(a, b, cand.similarity, {direction})
            else:
                pair.similarity = max(pair.similarity, cand.similarity)
                pair.provenance.add(direction)
    return pairs


def merge_rank(pairs: Iterable[ClonePair] | Mapping[tuple[int, int], ClonePair]) -> list[ClonePair]:
    """Global order: similarity descending, ties by (a_id, b_id) ascending."""
    if isinstance(pairs, Mapping):
        pairs = pairs.values()
    return sorted(pairs, key=lambda p: (-p.similarity, p.a_id, p.b_id))


REPORT_FORMATS = ("csv", "jsonl")
_CSV_HEADER = ("file_a", "start_a", "end_a", "file_b", "start_b", "end_b", "similarity")


def write_report(
    pairs: Sequence[ClonePair],
    fragments_by_id: Mapping[int, CodeFragment],
    path: str | Path,
    format: str = "csv",
) -> None:
    """Write ranked pairs with fragment coordinates; similarity uses a fixed
    6-decimal format so reports are byte-stable."""
    if format not in REPORT_FORMATS:
        raise SscdError(f"unknown report format {format!r}; expected {REPORT_FORMATS}")
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            if format == "csv":
                writer = csv.writer(fh)
                writer.writerow(_CSV_HEADER)
                for pair in pairs:
                    fa = fragments_by_id[pair.a_id]
                    fb = fragments_by_id[pair.b_id]
                    writer.writerow(
                        (
                            fa.file, fa.start_line, fa.end_line,
                            fb.file, fb.start_line, fb.end_line,
                            f"{pair.similarity:.6f}",
                        )
                    )
            else:
                for pair in pairs:
                    fa = fragments_by_id[pair.a_id]
                    fb = fragments_by_id[pair.b_id]
                    fh.write(
                        json.dumps(
                            {
                                "a_id": pair.a_id,
                                "b_id": pair.b_id,
                                "similarity": round(pair.similarity, 6),
                                "provenance": sorted(pair.provenance),
                                "a": {"file": fa.file, "start_line": fa.start_line, "end_line": fa.end_line},
                                "b": {"file": fb.file, "start_line": fb.start_line, "end_line": fb.end_line},
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
    except OSError as exc:
        raise SscdError(f"failed to write report {path}: {exc}") from exc


def read_report_jsonl(path: str | Path) -> list[ClonePair]:
    """Load the JSONL sidecar back into pairs (coordinates are dropped)."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                ClonePair(
                    rec["a_id"], rec["b_id"], rec["similarity"],
                    set(rec.get("provenance", ())),
                )
            )
    return out
