"""Greedy temporal NMS for final frame selection, and interval capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .merge import MergedRanking
from .timeline import TIME_EPS, EvidenceInterval, FrameTimeline


@dataclass(frozen=True)
class SelectionResult:
    """Final selected frames: temporal order for the answerer, pick order
    (best merged rank first) for retrieval metrics."""

    question_id: str
    timestamps: tuple[float, ...]
    selection_order: tuple[float, ...]

    def __post_init__(self):
        if sorted(self.selection_order) != list(self.timestamps):
            raise ValueError("timestamps must be the temporally sorted pick order")
        if any(b - a <= 0 for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)


def greedy_nms(
    merged_ranking: MergedRanking,
    timeline: FrameTimeline,
    k: int,
    tau: float,
    question_id: str = "",
) -> SelectionResult:
    """Select up to k frames best-rank-first, spaced at least tau apart.

    A frame is accepted iff its timestamp is >= tau from every accepted
    timestamp (within TIME_EPS); "up to k" means short videos may yield fewer.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    picked: list[float] = []
    for idx in merged_ranking.order:
        t = timeline.timestamps[idx]
        if all(abs(t - prev) >= tau - TIME_EPS for prev in picked):
            picked.append(t)
            if len(picked) == k:
                break
    return SelectionResult(
        question_id=question_id,
        timestamps=tuple(sorted(picked)),
        selection_order=tuple(picked),
    )


def max_capacity(interval: EvidenceInterval, tau: float, k: int) -> int:
    """Largest number of pairwise tau-separated timestamps that fit in the
    interval, capped by the frame budget: min(k, floor(length / tau) + 1)."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    length = interval.end_s - interval.start_s
    if length <= 0:
        raise ValueError(f"degenerate interval of length {length}")
    return min(k, math.floor(length / tau + TIME_EPS) + 1)
