"""Effectiveness and efficiency numbers: recall with overlap matching,
sampled precision (strict / optimistic / pessimistic), F-score, MRR,
Cohen's kappa, and the pipeline timing breakdown."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import SscdError

CLONE_TYPES = ("T1", "T2", "VST3", "ST3", "MT3", "WT3T4")

DEFAULT_OVERLAP_THRESHOLD = 0.7


@dataclass(frozen=True)
class FragmentCoord:
    file: str
    start_line: int
    end_line: int

    def __post_init__(self) -> None:
        if self.start_line < 1 or self.end_line < self.start_line:
            raise ValueError(f"bad line range {self.start_line}..{self.end_line}")

    def __len__(self) -> int:
        return self.end_line - self.start_line + 1


@dataclass(frozen=True)
class GroundTruthPair:
    a: FragmentCoord
    b: FragmentCoord
    clone_type: str

    def __post_init__(self) -> None:
        if self.clone_type not in CLONE_TYPES:
            raise ValueError(
                f"unknown clone type {self.clone_type!r}; expected one of {CLONE_TYPES}"
            )


@dataclass(frozen=True)
class DetectedPair:
    a: FragmentCoord
    b: FragmentCoord
    similarity: float = 0.0


@dataclass(frozen=True)
class ReviewTable:
    """2x2 agreement counts from a two-reviewer candidate inspection."""

    both_clone: int
    r1_clone_r2_non: int
    r1_non_r2_clone: int
    both_non: int

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    @property
    def total(self) -> int:
        return self.both_clone + self.r1_clone_r2_non + self.r1_non_r2_clone + self.both_non

    @property
    def agreed(self) -> int:
        return self.both_clone + self.both_non

    @property
    def disagreed(self) -> int:
        return self.r1_clone_r2_non + self.r1_non_r2_clone


def _coverage(truth: FragmentCoord, detected: FragmentCoord) -> float:
    if truth.file != detected.file:
        return 0.0
    lo = max(truth.start_line, detected.start_line)
    hi = min(truth.end_line, detected.end_line)
    if hi < lo:
        return 0.0
    return (hi - lo + 1) / len(truth)


def match_overlap(
    detected: DetectedPair,
    truth: GroundTruthPair,
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> bool:
    """True iff both truth fragments are covered by the detected pair's
    fragments (in either pairing order) at the coverage threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    straight = (
        _coverage(truth.a, detected.a) >= threshold
        and _coverage(truth.b, detected.b) >= threshold
    )
    if straight:
        return True
    return (
        _coverage(truth.a, detected.b) >= threshold
        and _coverage(truth.b, detected.a) >= threshold
    )


def _file_pair_key(a: FragmentCoord, b: FragmentCoord) -> tuple[str, str]:
    return (a.file, b.file) if a.file <= b.file else (b.file, a.file)


def _match_truth(
    detected: Sequence[DetectedPair],
    truth: Sequence[GroundTruthPair],
    threshold: float,
) -> list[bool]:
    by_files: dict[tuple[str, str], list[DetectedPair]] = defaultdict(list)
    for det in detected:
        by_files[_file_pair_key(det.a, det.b)].append(det)
    return [
        any(
            match_overlap(det, t, threshold)
            for det in by_files.get(_file_pair_key(t.a, t.b), ())
        )
        for t in truth
    ]


def recall(
    detected: Sequence[DetectedPair],
    truth: Sequence[GroundTruthPair],
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> float:
    """Fraction of truth pairs matched by at least one detected pair."""
    if not truth:
        raise ValueError("recall is undefined for an empty truth set")
    matched = _match_truth(detected, truth, threshold)
    return sum(matched) / len(truth)


def recall_by_type(
    detected: Sequence[DetectedPair],
    truth: Sequence[GroundTruthPair],
    threshold: float = DEFAULT_OVERLAP_THRESHOLD,
) -> dict[str, float]:
    """Recall restricted to each clone type present in the truth set."""
    matched = _match_truth(detected, truth, threshold)
    hits: dict[str, int] = defaultdict(int)
    totals: dict[str, int] = defaultdict(int)
    for t, ok in zip(truth, matched):
        totals[t.clone_type] += 1
        if ok:
            hits[t.clone_type] += 1
    return {ct: hits[ct] / totals[ct] for ct in CLONE_TYPES if totals.get(ct)}


def classify_type_band(syntactic_similarity: float) -> str:
    """Map a [0, 1] syntactic-similarity fraction onto the inexact-clone
    bands; boundaries are lower-inclusive."""
    if not 0.0 <= syntactic_similarity <= 1.0:
        raise ValueError(f"similarity must be in [0, 1], got {syntactic_similarity}")
    if syntactic_similarity >= 0.9:
        return "VST3"
    if syntactic_similarity >= 0.7:
        return "ST3"
    if syntactic_similarity >= 0.5:
        return "MT3"
    return "WT3T4"


def precision_from_sample(review: ReviewTable) -> tuple[float, float, float]:
    """(strict, optimistic, pessimistic) precision percentages.

    strict counts agreed clones over all agreed cases; optimistic counts
    disagreements as clones; pessimistic counts them as non-clones.
    """
    if review.total == 0:
        raise ValueError("review table is empty")
    if review.agreed == 0:
        raise ValueError("strict precision is undefined without agreed cases")
    strict = 100.0 * review.both_clone / review.agreed
    optimistic = 100.0 * (review.both_clone + review.disagreed) / review.total
    pessimistic = 100.0 * review.both_clone / review.total
    return (strict, optimistic, pessimistic)


def f_score(precision: float, recall_pct: float) -> float:
    """Harmonic mean of precision and recall, both given as percentages."""
    if not 0.0 <= precision <= 100.0 or not 0.0 <= recall_pct <= 100.0:
        raise ValueError("precision and recall must be percentages in [0, 100]")
    if precision + recall_pct == 0.0:
        return 0.0
    return 2.0 * precision * recall_pct / (precision + recall_pct)


def mrr(ranked_relevance: Sequence[Sequence[bool]]) -> float:
    """Mean reciprocal rank of the first relevant hit per query; queries
    with no relevant hit contribute 0."""
    if not ranked_relevance:
        raise ValueError("mrr needs at least one query")
    total = 0.0
    for marks in ranked_relevance:
        for rank, relevant in enumerate(marks, start=1):
            if relevant:
                total += 1.0 / rank
                break
    return total / len(ranked_relevance)


def cohen_kappa(review: ReviewTable) -> float:
    """Chance-corrected agreement for a 2x2 review table."""
    n = review.total
    if n == 0:
        raise ValueError("review table is empty")
    observed = review.agreed / n
    r1_clone = (review.both_clone + review.r1_clone_r2_non) / n
    r2_clone = (review.both_clone + review.r1_non_r2_clone) / n
    expected = r1_clone * r2_clone + (1.0 - r1_clone) * (1.0 - r2_clone)
    if expected == 1.0:
        raise ValueError("kappa is undefined for degenerate marginals")
    return (observed - expected) / (1.0 - expected)


def observed_agreement(review: ReviewTable) -> float:
    if review.total == 0:
        raise ValueError("review table is empty")
    return review.agreed / review.total


@dataclass
class TimingBreakdown:
    parse_ms: float = 0.0
    inference_ms: float = 0.0
    index_build_ms: float = 0.0
    search_ms: float = 0.0
    total_ms: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "parse_ms": self.parse_ms,
            "inference_ms": self.inference_ms,
            "index_build_ms": self.index_build_ms,
            "search_ms": self.search_ms,
            "total_ms": self.total_ms,
        }


def timing_report(
    stages: Mapping[str, float], total_ms: float | None = None
) -> TimingBreakdown:
    """Assemble the breakdown from per-stage wall-clock milliseconds.

    Stages may overlap under pipelining, so the total is measured
    separately when given rather than derived from the parts.
    """
    breakdown = TimingBreakdown(
        parse_ms=float(stages.get("parse", 0.0)),
        inference_ms=float(stages.get("inference", 0.0)),
        index_build_ms=float(stages.get("index_build", 0.0)),
        search_ms=float(stages.get("search", 0.0)),
    )
    if total_ms is None:
        total_ms = (
            breakdown.parse_ms
            + breakdown.inference_ms
            + breakdown.index_build_ms
            + breakdown.search_ms
        )
    breakdown.total_ms = float(total_ms)
    return breakdown


@dataclass
class EvalReport:
    """Everything one evaluation run can report; fields that a given run
    cannot compute stay None."""

    recall_overall: float | None = None  # percent
    recall_by_type: dict[str, float] = field(default_factory=dict)  # percent
    precision_strict: float | None = None
    precision_optimistic: float | None = None
    precision_pessimistic: float | None = None
    f_score: float | None = None
    mrr: float | None = None
    kappa: float | None = None
    timing: TimingBreakdown | None = None

    def as_dict(self) -> dict:
        out: dict = {
            "recall_overall_pct": self.recall_overall,
            "recall_by_type_pct": self.recall_by_type,
            "precision_strict_pct": self.precision_strict,
            "precision_optimistic_pct": self.precision_optimistic,
            "precision_pessimistic_pct": self.precision_pessimistic,
            "f_score_pct": self.f_score,
            "mrr": self.mrr,
            "kappa": self.kappa,
        }
        if self.timing is not None:
            out["timing"] = self.timing.as_dict()
        return out

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n", encoding="utf-8")

    def render(self) -> str:
        """Small human-readable table."""
        rows: list[tuple[str, str]] = []
        if self.recall_overall is not None:
            rows.append(("recall (overall)", f"{self.recall_overall:.2f}%"))
        for ct in CLONE_TYPES:
            if ct in self.recall_by_type:
                rows.append((f"recall {ct}", f"{self.recall_by_type[ct]:.2f}%"))
        if self.precision_strict is not None:
            rows.append(("precision (strict)", f"{self.precision_strict:.2f}%"))
            rows.append(("precision (optimistic)", f"{self.precision_optimistic:.2f}%"))
            rows.append(("precision (pessimistic)", f"{self.precision_pessimistic:.2f}%"))
        if self.f_score is not None:
            rows.append(("f-score", f"{self.f_score:.2f}%"))
        if self.mrr is not None:
            rows.append(("mrr", f"{self.mrr:.4f}"))
        if self.kappa is not None:
            rows.append(("kappa", f"{self.kappa:.4f}"))
        if self.timing is not None:
            for key, value in self.timing.as_dict().items():
                rows.append((key, f"{value:.1f}"))
        if not rows:
            return "(empty report)\n"
        width = max(len(name) for name, _ in rows)
        return "".join(f"{name:<{width}}  {value}\n" for name, value in rows)


def load_ground_truth(path: str | Path) -> list[GroundTruthPair]:
    """CSV: file_a,start_a,end_a,file_b,start_b,end_b,type (header optional)."""
    out = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[:1] == ["file_a"]:
                continue
            if len(row) != 7:
                raise SscdError(f"{path}: line {lineno}: expected 7 columns, got {len(row)}")
            try:
                pair = GroundTruthPair(
                    FragmentCoord(row[0], int(row[1]), int(row[2])),
                    FragmentCoord(row[3], int(row[4]), int(row[5])),
                    row[6].strip(),
                )
            except ValueError as exc:
                raise SscdError(f"{path}: line {lineno}: {exc}") from exc
            out.append(pair)
    return out


def load_detected_report(path: str | Path) -> list[DetectedPair]:
    """CSV written by the reporter: coordinates plus similarity."""
    out = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[:1] == ["file_a"]:
                continue
            if len(row) != 7:
                raise SscdError(f"{path}: line {lineno}: expected 7 columns, got {len(row)}")
            try:
                pair = DetectedPair(
                    FragmentCoord(row[0], int(row[1]), int(row[2])),
                    FragmentCoord(row[3], int(row[4]), int(row[5])),
                    float(row[6]),
                )
            except ValueError as exc:
                raise SscdError(f"{path}: line {lineno}: {exc}") from exc
            out.append(pair)
    return out
