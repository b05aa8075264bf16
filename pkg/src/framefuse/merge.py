"""Score-to-rank conversion and boolean fusion into a single frame ranking."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ContractError
from .plan import CombineExpr, Leaf, Op, leaf_ids


class MergeMode(str, Enum):
    RANK = "rank"  # fuse dense ranks; AND = worst (max), OR = best (min)
    RAW = "raw"    # fuse raw scores; AND = min, OR = max


@dataclass(frozen=True)
class ScoreVector:
    """Per-frame scores from one tool call; higher means a better match."""

    call_id: str
    timeline_ref: str
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("scores must be a non-empty 1-d vector")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class RankVector:
    """Dense per-frame ranks, a permutation of 1..n with 1 = best."""

    call_id: str
    ranks: np.ndarray

    def __len__(self) -> int:
        return int(self.ranks.size)


@dataclass(frozen=True)
class MergedRanking:
    """Single fused ordering over frames, best first."""

    timeline_ref: str
    order: tuple[int, ...]
    merged_value: np.ndarray
    injected: frozenset[int] = frozenset()


def scores_to_ranks(score_vector: ScoreVector) -> RankVector:
    """Rank frames by descending score; ties go to the earlier timestamp."""
    scores = score_vector.scores
    n = scores.size
    order = np.lexsort((np.arange(n), -scores))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    return RankVector(score_vector.call_id, ranks)


def _check_table(expr: CombineExpr, table: Mapping[str, object], attr: str) -> int:
    referenced = leaf_ids(expr)
    missing = sorted(referenced - set(table))
    if missing:
        raise ContractError(f"no vector for tool call(s): {', '.join(missing)}")
    lengths = {len(getattr(table[call_id], attr)) for call_id in referenced}
    if len(lengths) != 1:
        raise ContractError(f"vector length mismatch across tool calls: {sorted(lengths)}")
    return lengths.pop()


def eval_combine(expr: CombineExpr, rank_vectors_by_id: Mapping[str, RankVector]) -> np.ndarray:
    """Fuse rank vectors: Leaf passes through, AND takes the elementwise
    maximum (worst rank), OR the elementwise minimum (best rank)."""
    _check_table(expr, rank_vectors_by_id, "ranks")

    def walk(node: CombineExpr) -> np.ndarray:
        if isinstance(node, Leaf):
            return rank_vectors_by_id[node.call_id].ranks
        left = walk(node.left)
        right = walk(node.right)
        return np.maximum(left, right) if node.op is Op.AND else np.minimum(left, right)

    return walk(expr)


def eval_combine_raw(expr: CombineExpr, score_vectors_by_id: Mapping[str, ScoreVector]) -> np.ndarray:
    """Raw-score fusion: AND = elementwise min, OR = elementwise max.

    Rank is antitone in score, so min-score mirrors worst-rank and max-score
    mirrors best-rank; no rank conversion and no normalization happen here.
    """
    _check_table(expr, score_vectors_by_id, "scores")

    def walk(node: CombineExpr) -> np.ndarray:
        if isinstance(node, Leaf):
            return score_vectors_by_id[node.call_id].scores
        left = walk(node.left)
        right = walk(node.right)
        return np.minimum(left, right) if node.op is Op.AND else np.maximum(left, right)

    return walk(expr)


def finalize_ranking(
    merged_values: np.ndarray,
    mode: MergeMode = MergeMode.RANK,
    timeline_ref: str = "",
) -> MergedRanking:
    """Order frames by fused value (ascending for ranks, descending for raw
    scores); ties always go to the earlier timestamp. Injection starts empty."""
    values = np.asarray(merged_values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("merged values must be a non-empty 1-d vector")
    if not np.all(np.isfinite(values)):
        raise ValueError("merged values must be finite")
    keys = values if mode is MergeMode.RANK else -values
    order = np.lexsort((np.arange(values.size), keys))
    return MergedRanking(
        timeline_ref=timeline_ref,
        order=tuple(int(i) for i in order),
        merged_value=values,
        injected=frozenset(),
    )
