"""Independent reference implementations the tests compare against.

Everything here is deliberately written pure-Python and sort-based, separate
from the numpy paths in the package.
"""

from __future__ import annotations

import random

from framefuse.plan import CombineExpr, Leaf, Node, Op


def ranks_oracle(scores: list[float]) -> list[int]:
    """Dense ranks, 1 = best score, ties to the earlier index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = [0] * len(scores)
    for position, idx in enumerate(order, start=1):
        ranks[idx] = position
    return ranks


def scalar_eval(expr: CombineExpr, values_by_id: dict[str, list[float]], frame: int, rank_mode: bool) -> float:
    """Frame-by-frame evaluation of the boolean formula with scalar max/min."""
    if isinstance(expr, Leaf):
        return values_by_id[expr.call_id][frame]
    left = scalar_eval(expr.left, values_by_id, frame, rank_mode)
    right = scalar_eval(expr.right, values_by_id, frame, rank_mode)
    if expr.op is Op.AND:
        return max(left, right) if rank_mode else min(left, right)
    return min(left, right) if rank_mode else max(left, right)


def stable_order_oracle(values: list[float], descending: bool = False) -> list[int]:
    """Stable sort of frame indices by value, ties to the earlier index."""
    key = (lambda i: (-values[i], i)) if descending else (lambda i: (values[i], i))
    return sorted(range(len(values)), key=key)


def merge_pipeline_oracle(
    expr: CombineExpr,
    scores_by_id: dict[str, list[float]],
    rank_mode: bool,
) -> list[int]:
    """scores -> ranks -> boolean fusion -> stable final order, all scalar."""
    if rank_mode:
        values_by_id = {cid: [float(r) for r in ranks_oracle(s)] for cid, s in scores_by_id.items()}
    else:
        values_by_id = scores_by_id
    n = len(next(iter(scores_by_id.values())))
    merged = [scalar_eval(expr, values_by_id, f, rank_mode) for f in range(n)]
    return stable_order_oracle(merged, descending=not rank_mode)


def greedy_nms_oracle(order: list[int], timestamps: list[float], k: int, tau: float) -> list[float]:
    """Straightforward re-implementation of the greedy scan, pick order."""
    picked: list[float] = []
    for idx in order:
        t = timestamps[idx]
        if all(abs(t - prev) >= tau - 1e-6 for prev in picked):
            picked.append(t)
            if len(picked) == k:
                break
    return picked


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def grouping_oracle(frames: list[int], timestamps: list[float], tau: float) -> list[float]:
    """Union-find over adjacent pairs with gap <= tau; median per component."""
    frames = sorted(set(frames))
    if not frames:
        return []
    uf = UnionFind(len(frames))
    for i in range(len(frames) - 1):
        if timestamps[frames[i + 1]] - timestamps[frames[i]] <= tau:
            uf.union(i, i + 1)
    components: dict[int, list[int]] = {}
    for i, frame in enumerate(frames):
        components.setdefault(uf.find(i), []).append(frame)
    medians = []
    for members in components.values():
        members.sort()
        medians.append(timestamps[members[(len(members) - 1) // 2]])
    return sorted(medians)


def grid_packing_oracle(grid: list[float], start: float, end: float, tau: float, k: int) -> int:
    """Greedy earliest-first packing of tau-separated grid points in [start, end]."""
    count = 0
    last = None
    for t in grid:
        if t < start - 1e-9 or t > end + 1e-9:
            continue
        if last is None or t - last >= tau - 1e-9:
            count += 1
            last = t
    return min(k, count)


def hit_oracle(picks: list[float], start: float, end: float, k: int) -> bool:
    """Membership scan over the first k picked timestamps."""
    return any(start <= t <= end for t in picks[:k])


def random_expr(rng: random.Random, ids: list[str], max_depth: int) -> CombineExpr:
    """Random AST over the ids; every id may appear any number of times."""
    if max_depth <= 0 or rng.random() < 0.3:
        return Leaf(rng.choice(ids))
    op = Op.AND if rng.random() < 0.5 else Op.OR
    return Node(op, random_expr(rng, ids, max_depth - 1), random_expr(rng, ids, max_depth - 1))
