"""OCR evidence: dedup, relevance judging, temporal grouping, front injection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

from .merge import MergedRanking
from .timeline import FrameTimeline

log = logging.getLogger(__name__)

DEFAULT_SIMILARITY_THRESHOLD = 0.90
DEFAULT_DEDUP_WINDOW_S = 1.0


@dataclass(frozen=True)
class OcrExtraction:
    """One raw text extraction from a sampled frame."""

    frame_index: int
    text: str
    confidence: float = 1.0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("extraction text must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.frame_index < 0:
            raise ValueError(f"negative frame index {self.frame_index}")


@dataclass(frozen=True)
class OcrGroup:
    """Provenance for one kept timestamp: its group's frames and texts."""

    median_s: float
    frame_indices: tuple[int, ...]
    texts: tuple[str, ...]


@dataclass(frozen=True)
class OcrEvidence:
    """Judged-relevant evidence reduced to one median timestamp per group."""

    kept_timestamps: tuple[float, ...]
    provenance: tuple[OcrGroup, ...]


class JudgeClient(Protocol):
    """Relevance judge: one boolean per text, for a batch of texts."""

    def judge(self, query: str, texts: Sequence[str]) -> Sequence[bool]: ...


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance, two-row DP."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_similarity(a: str, b: str) -> float:
    """Normalized edit similarity: 1 - distance / max(len); 1.0 for two empties."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def dedup_ocr(
    extractions: Sequence[OcrExtraction],
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    window_frames: int = 2,
) -> list[OcrExtraction]:
    """Drop near-duplicates of recently kept extractions.

    Scanning in frame order, an extraction is dropped when its normalized edit
    similarity to any kept extraction within the previous window_frames frames
    reaches the threshold. The first occurrence of a chain always survives.
    """
    if not (0.0 <= similarity_threshold <= 1.0):
        raise ValueError(f"similarity threshold must be in [0, 1], got {similarity_threshold}")
    ordered = sorted(extractions, key=lambda e: e.frame_index)
    kept: list[OcrExtraction] = []
    for ext in ordered:
        duplicate = False
        for prev in reversed(kept):
            if ext.frame_index - prev.frame_index > window_frames:
                break
            if edit_similarity(ext.text, prev.text) >= similarity_threshold:
                duplicate = True
                break
        if not duplicate:
            kept.append(ext)
    return kept


def judge_relevance(
    extractions: Sequence[OcrExtraction],
    query_text: str,
    judge_client: JudgeClient,
) -> list[OcrExtraction]:
    """Keep exactly the extractions the judge marks relevant to the query.

    The judge sees the whole batch in one call. Failures are fail-closed: a
    broken judge response drops the affected extractions and the run goes on,
    because injected frames bypass visual scoring entirely.
    """
    if not extractions:
        return []
    try:
        verdicts = list(judge_client.judge(query_text, [e.text for e in extractions]))
    except Exception as exc:
        log.warning("judge call failed, dropping %d extraction(s): %s", len(extractions), exc)
        return []
    if len(verdicts) != len(extractions):
        log.warning(
            "judge returned %d verdicts for %d extractions, dropping the batch",
            len(verdicts),
            len(extractions),
        )
        return []
    return [ext for ext, keep in zip(extractions, verdicts) if keep]


def group_ocr_frames(
    kept_extractions: Sequence[OcrExtraction],
    tau: float,
    timeline: FrameTimeline,
) -> OcrEvidence:
    """Group kept frames along the time axis and keep each group's median.

    One linear pass: a new group starts when the gap to the previous kept
    frame exceeds tau seconds. Even-sized groups take the earlier middle.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    texts_by_frame: dict[int, list[str]] = {}
    for ext in kept_extractions:
        texts_by_frame.setdefault(ext.frame_index, []).append(ext.text)
    frames = sorted(texts_by_frame)
    if not frames:
        return OcrEvidence(kept_timestamps=(), provenance=())

    groups: list[list[int]] = [[frames[0]]]
    for frame in frames[1:]:
        gap = timeline.timestamps[frame] - timeline.timestamps[groups[-1][-1]]
        if gap > tau:
            groups.append([frame])
        else:
            groups[-1].append(frame)

    provenance = []
    for group in groups:
        median_frame = group[(len(group) - 1) // 2]
        provenance.append(
            OcrGroup(
                median_s=timeline.timestamps[median_frame],
                frame_indices=tuple(group),
                texts=tuple(t for frame in group for t in texts_by_frame[frame]),
            )
        )
    return OcrEvidence(
        kept_timestamps=tuple(g.median_s for g in provenance),
        provenance=tuple(provenance),
    )


def inject_ocr(
    merged_ranking: MergedRanking,
    ocr_evidence: OcrEvidence,
    timeline: FrameTimeline,
) -> MergedRanking:
    """Move evidence frames to the front of the merged order.

    Injected frames are mutually ordered by timestamp; all other frames keep
    their relative order. The result records the injected set.
    """
    injected_indices = []
    seen: set[int] = set()
    for t in ocr_evidence.kept_timestamps:
        idx = timeline.index_near(t)
        if idx not in seen:
            seen.add(idx)
            injected_indices.append(idx)
    if not injected_indices:
        return merged_ranking
    rest = [idx for idx in merged_ranking.order if idx not in seen]
    return MergedRanking(
        timeline_ref=merged_ranking.timeline_ref,
        order=tuple(injected_indices) + tuple(rest),
        merged_value=merged_ranking.merged_value,
        injected=frozenset(injected_indices),
    )
