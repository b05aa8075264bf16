"""Retrieval and QA evaluation: records, HIT@K, baselines, reports."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import PlanParseError, PlanValidationError, ProviderError, RunError, StageError
from .merge import MergeMode, eval_combine, eval_combine_raw, finalize_ranking, scores_to_ranks
from .ocr import (
    DEFAULT_DEDUP_WINDOW_S,
    DEFAULT_SIMILARITY_THRESHOLD,
    JudgeClient,
    dedup_ocr,
    group_ocr_frames,
    inject_ocr,
    judge_relevance,
)
from .plan import Plan, Tool, filter_plan, parse_plan, single_query_plan
from .providers import LETTERS, ConstantJudge, FrameScorer, OcrSource, PlanService
from .select import SelectionResult, greedy_nms, max_capacity
from .timeline import (
    TIME_EPS,
    EvidenceInterval,
    FrameTimeline,
    build_timeline,
    compute_tau,
    in_interval,
)

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 4, 8, 16, 32)

TAU_RULE = "min(duration_s / (2 * k), 10)"


# ---------------------------------------------------------------------------
# Dataset records
# ---------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class QuestionRecord:
    """A 5-option MCQ anchored to a ground-truth interval of its video."""

    question_id: str
    video_id: str
    duration_s: float
    question: str
    options: tuple[str, ...]
    answer: str
    interval: EvidenceInterval
    split: str = "test"

    def __post_init__(self):
        if len(self.options) != len(LETTERS):
            raise ValueError(f"expected {len(LETTERS)} options, got {len(self.options)}")
        if self.answer not in LETTERS:
            raise ValueError(f"answer must be one of {LETTERS}, got {self.answer!r}")
        if self.interval.end_s > self.duration_s + TIME_EPS:
            raise ValueError("ground-truth interval exceeds the video duration")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class CaptionRecord:
    """A clip caption anchored to a ground-truth interval (no options)."""

    caption_id: str
    video_id: str
    duration_s: float
    caption: str
    interval: EvidenceInterval

    def __post_init__(self):
        if self.interval.end_s > self.duration_s + TIME_EPS:
            raise ValueError("ground-truth interval exceeds the video duration")


Record = QuestionRecord | CaptionRecord


def record_id(record: Record) -> str:
    return record.question_id if isinstance(record, QuestionRecord) else record.caption_id


def record_query(record: Record) -> str:
    return record.question if isinstance(record, QuestionRecord) else record.caption


def record_options(record: Record) -> tuple[str, ...]:
    return record.options if isinstance(record, QuestionRecord) else ()


def combined_query(question: str, options: Sequence[str]) -> str:
    """The single-query text: question followed by the lettered options."""
    parts = [question] + [f"{letter}) {text}" for letter, text in zip(LETTERS, options)]
    return " ".join(parts)


# ---------------------------------------------------------------------------
# JSON Lines files
# ---------------------------------------------------------------------------


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{line_no}: bad JSON: {exc.msg}") from exc
    return rows


def write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    """Atomic JSON Lines write (temp file + rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_questions(path: Path | str) -> list[QuestionRecord]:
    records = []
    for row in _read_jsonl(Path(path)):
        options = row["options"]
        records.append(
            QuestionRecord(
                question_id=str(row["question_id"]),
                video_id=str(row["video_id"]),
                duration_s=float(row["duration_s"]),
                question=str(row["question"]),
                options=tuple(str(options[letter]) for letter in LETTERS),
                answer=str(row["answer"]),
                interval=EvidenceInterval(float(row["gt_start_s"]), float(row["gt_end_s"])),
                split=str(row.get("split", "test")),
            )
        )
    return records


def write_questions(path: Path | str, records: Sequence[QuestionRecord]) -> None:
    write_jsonl(
        Path(path),
        [
            {
                "question_id": r.question_id,
                "video_id": r.video_id,
                "duration_s": r.duration_s,
                "question": r.question,
                "options": dict(zip(LETTERS, r.options)),
                "answer": r.answer,
                "gt_start_s": r.interval.start_s,
                "gt_end_s": r.interval.end_s,
                "split": r.split,
            }
            for r in records
        ],
    )


def read_captions(path: Path | str) -> list[CaptionRecord]:
    return [
        CaptionRecord(
            caption_id=str(row["caption_id"]),
            video_id=str(row["video_id"]),
            duration_s=float(row["duration_s"]),
            caption=str(row["caption"]),
            interval=EvidenceInterval(float(row["gt_start_s"]), float(row["gt_end_s"])),
        )
        for row in _read_jsonl(Path(path))
    ]


def write_captions(path: Path | str, records: Sequence[CaptionRecord]) -> None:
    write_jsonl(
        Path(path),
        [
            {
                "caption_id": r.caption_id,
                "video_id": r.video_id,
                "duration_s": r.duration_s,
                "caption": r.caption,
                "gt_start_s": r.interval.start_s,
                "gt_end_s": r.interval.end_s,
            }
            for r in records
        ],
    )


def write_selections(
    path: Path | str,
    rows: Sequence[tuple[SelectionResult, int, float]],
) -> None:
    """Selection file: one line per record with budget and gap echoed."""
    write_jsonl(
        Path(path),
        [
            {
                "question_id": sel.question_id,
                "k": k,
                "tau": tau,
                "timestamps": list(sel.timestamps),
                "pick_order": list(sel.selection_order),
            }
            for sel, k, tau in rows
        ],
    )


def read_selections(path: Path | str) -> dict[str, tuple[SelectionResult, int, float]]:
    out: dict[str, tuple[SelectionResult, int, float]] = {}
    for row in _read_jsonl(Path(path)):
        sel = SelectionResult(
            question_id=str(row["question_id"]),
            timestamps=tuple(float(t) for t in row["timestamps"]),
            selection_order=tuple(float(t) for t in row["pick_order"]),
        )
        out[sel.question_id] = (sel, int(row["k"]), float(row["tau"]))
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def hit_at_k(
    selection: SelectionResult,
    interval: EvidenceInterval,
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, bool]:
    """For each K: does any of the first K *picked* frames land in the interval?

    Pick order (merged-rank order) defines "top", not temporal order.
    """
    picks = selection.selection_order
    out = {}
    for k in ks:
        out[k] = any(in_interval(t, interval) for t in picks[: min(k, len(picks))])
    return out


def normalized_recall(
    selection: SelectionResult,
    interval: EvidenceInterval,
    tau: float,
    k: int,
) -> float:
    """Selected-in-interval count over the interval's tau-packing capacity."""
    capacity = max_capacity(interval, tau, k)
    inside = sum(1 for t in set(selection.timestamps) if in_interval(t, interval))
    return inside / capacity


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def _snap_index(timeline: FrameTimeline, t: float) -> int:
    """Nearest grid index; exact midpoints go to the earlier frame."""
    idx = math.ceil(t * timeline.fps - 0.5 - 1e-9)
    return min(max(idx, 0), len(timeline) - 1)


def _selection_from_indices(
    timeline: FrameTimeline, indices: Sequence[int], question_id: str
) -> SelectionResult:
    seen: list[int] = []
    for idx in indices:
        if idx not in seen:
            seen.append(idx)
    stamps = tuple(timeline.timestamps[i] for i in sorted(seen))
    return SelectionResult(
        question_id=question_id,
        timestamps=stamps,
        selection_order=stamps,
    )


def uniform_baseline(timeline: FrameTimeline, k: int, question_id: str = "") -> SelectionResult:
    """k segment midpoints snapped to the grid, deduplicated."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= len(timeline):
        return _selection_from_indices(timeline, range(len(timeline)), question_id)
    step = timeline.duration_s / k
    indices = [_snap_index(timeline, (i + 0.5) * step) for i in range(k)]
    return _selection_from_indices(timeline, indices, question_id)


def oracle_baseline(
    interval: EvidenceInterval,
    timeline: FrameTimeline,
    k: int,
    question_id: str = "",
) -> SelectionResult:
    """k uniform midpoints inside the ground-truth interval, snapped to grid.

    Snapped frames are clamped into the interval whenever it contains at
    least one grid frame, so every returned frame is a true hit.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lo = math.ceil(interval.start_s * timeline.fps - TIME_EPS)
    hi = math.floor(interval.end_s * timeline.fps + TIME_EPS)
    lo = max(lo, 0)
    hi = min(hi, len(timeline) - 1)
    step = interval.length_s / k
    indices = []
    for i in range(k):
        idx = _snap_index(timeline, interval.start_s + (i + 0.5) * step)
        if lo <= hi:
            idx = min(max(idx, lo), hi)
        indices.append(idx)
    return _selection_from_indices(timeline, indices, question_id)


def siglipq_baseline(
    record: Record,
    scorer: FrameScorer,
    timeline: FrameTimeline,
    k: int,
    tau: float,
) -> SelectionResult:
    """Single scene-matcher call on the concatenated question and options,
    ranked and selected with greedy NMS; no planner, no OCR."""
    query = combined_query(record_query(record), record_options(record))
    vector = scorer.score(record.video_id, Tool.SCENE_MATCHER, query, timeline)
    ranks = scores_to_ranks(replace(vector, call_id="Q1"))
    ranking = finalize_ranking(ranks.ranks, MergeMode.RANK, timeline_ref=record.video_id)
    return greedy_nms(ranking, timeline, k, tau, question_id=record_id(record))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


class Answerer(Protocol):
    """Downstream QA model surface: one option letter or None (abstention)."""

    def answer(self, record: QuestionRecord, frame_timestamps: Sequence[float]) -> str | None: ...


@dataclass
class ProviderBundle:
    """All external capabilities a run may touch. Only the scorer is required."""

    scorer: FrameScorer
    planner: PlanService | None = None
    ocr_source: OcrSource | None = None
    judge: JudgeClient | None = None


@dataclass
class RunConfig:
    """One evaluation run's knobs; defaults mirror the standard setting."""

    k: int = 8
    fps: float = 2.0
    mode: MergeMode = MergeMode.RANK
    ocr: bool = True
    single_call: bool = False
    tau_override: float | None = None
    seed: int = 0
    workers: int = 1
    ks: tuple[int, ...] = DEFAULT_KS
    method_name: str = "framefuse"
    ocr_similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    ocr_dedup_window_s: float = DEFAULT_DEDUP_WINDOW_S
    min_ocr_confidence: float = 0.0
    drop_tools: frozenset[Tool] = frozenset()
    count_failures_as_misses: bool = True
    # Top up short selections with uniform frames. Off by default: padded
    # frames ignore the temporal gap and would contaminate retrieval metrics.
    pad_short_selections: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if self.tau_override is not None and self.tau_override <= 0:
            raise ValueError(f"tau override must be > 0, got {self.tau_override}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def tau_for(self, duration_s: float) -> float:
        if self.tau_override is not None:
            return self.tau_override
        return compute_tau(duration_s, self.k)

    def echo(self) -> dict:
        return {
            "k": self.k,
            "fps": self.fps,
            "mode": self.mode.value,
            "ocr": self.ocr,
            "single_call": self.single_call,
            "tau_rule": TAU_RULE if self.tau_override is None else f"override:{self.tau_override:g}",
            "seed": self.seed,
            "ks": list(self.ks),
            "drop_tools": sorted(t.value for t in self.drop_tools),
            "pad_short_selections": self.pad_short_selections,
        }


def _resolve_plan(record: Record, providers: ProviderBundle, config: RunConfig) -> tuple[Plan, bool]:
    """Planner output, or the single-call fallback when it is unusable."""
    fallback_query = combined_query(record_query(record), record_options(record))
    if config.single_call:
        return single_query_plan(fallback_query), False
    if providers.planner is None:
        return single_query_plan(fallback_query), True
    used_fallback = False
    try:
        raw = providers.planner.plan_query(
            record_id(record),
            record_query(record),
            record_options(record),
            record.duration_s,
            config.fps,
        )
        plan = parse_plan(raw)
    except (PlanParseError, PlanValidationError, ProviderError) as exc:
        log.warning("plan for %s unusable (%s); falling back to a single call", record_id(record), exc)
        return single_query_plan(fallback_query), True
    if config.drop_tools:
        filtered = filter_plan(plan, config.drop_tools)
        if filtered is None:
            return single_query_plan(fallback_query), True
        plan = filtered
    return plan, used_fallback


def run_question(record: Record, providers: ProviderBundle, config: RunConfig) -> SelectionResult:
    """Full pipeline for one record: plan, score, fuse, inject OCR, select.

    Any stage failure raises StageError tagged with the stage name.
    """
    try:
        timeline = build_timeline(record.video_id, record.duration_s, config.fps)
        tau = config.tau_for(record.duration_s)
    except Exception as exc:
        raise StageError("timeline", exc) from exc

    try:
        plan, _ = _resolve_plan(record, providers, config)
    except Exception as exc:
        raise StageError("plan", exc) from exc

    try:
        if plan.ocr_only:
            # No visual queries: fall back to temporal order, OCR may inject.
            ranking = finalize_ranking(
                np.arange(1, len(timeline) + 1),
                MergeMode.RANK,
                timeline_ref=record.video_id,
            )
        else:
            vectors = {
                call.id: replace(
                    providers.scorer.score(record.video_id, call.tool, call.query, timeline),
                    call_id=call.id,
                )
                for call in plan.calls
            }
            if config.mode is MergeMode.RANK:
                merged = eval_combine(plan.combine, {cid: scores_to_ranks(v) for cid, v in vectors.items()})
            else:
                merged = eval_combine_raw(plan.combine, vectors)
            ranking = finalize_ranking(merged, config.mode, timeline_ref=record.video_id)
    except Exception as exc:
        raise StageError("score", exc) from exc

    if config.ocr and providers.ocr_source is not None:
        try:
            extractions = providers.ocr_source.extractions(record.video_id, timeline)
            extractions = [e for e in extractions if e.confidence >= config.min_ocr_confidence]
            window = max(1, round(config.ocr_dedup_window_s * config.fps))
            deduped = dedup_ocr(extractions, config.ocr_similarity_threshold, window)
            judge = providers.judge if providers.judge is not None else ConstantJudge(False)
            query = combined_query(record_query(record), record_options(record))
            kept = judge_relevance(deduped, query, judge)
            evidence = group_ocr_frames(kept, tau, timeline)
            ranking = inject_ocr(ranking, evidence, timeline)
        except Exception as exc:
            raise StageError("ocr", exc) from exc

    try:
        selection = greedy_nms(ranking, timeline, config.k, tau, question_id=record_id(record))
        if config.pad_short_selections:
            selection = _pad_selection(selection, timeline, config.k)
        return selection
    except Exception as exc:
        raise StageError("select", exc) from exc


def _pad_selection(selection: SelectionResult, timeline: FrameTimeline, k: int) -> SelectionResult:
    """Append uniform midpoint frames until k frames (padding is unranked)."""
    if len(selection) >= k:
        return selection
    picks = list(selection.selection_order)
    have = set(picks)
    for t in uniform_baseline(timeline, k).timestamps:
        if t not in have:
            picks.append(t)
            have.add(t)
            if len(picks) == k:
                break
    return SelectionResult(
        question_id=selection.question_id,
        timestamps=tuple(sorted(picks)),
        selection_order=tuple(picks),
    )


# ---------------------------------------------------------------------------
# Dataset evaluation and reports
# ---------------------------------------------------------------------------

MethodRunner = Callable[[Record], SelectionResult]


@dataclass
class MethodResult:
    """Aggregated rates for one method, percentages at one decimal."""

    hit_at_k: dict[int, float]
    records: int
    failed: int
    qa_accuracy: float | None = None


@dataclass
class RetrievalReport:
    """Evaluation summary: per-method rates plus the configuration echo."""

    methods: dict[str, MethodResult]
    counts: dict[str, int]
    config: dict = field(default_factory=dict)

    def to_canonical_json(self) -> str:
        payload = {
            "schema": "report/1",
            "config": self.config,
            "counts": self.counts,
            "methods": {
                name: {
                    "hit_at_k": {str(k): v for k, v in sorted(result.hit_at_k.items())},
                    "records": result.records,
                    "failed": result.failed,
                    "qa_accuracy": result.qa_accuracy,
                }
                for name, result in self.methods.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def render_table(self) -> str:
        ks = sorted({k for result in self.methods.values() for k in result.hit_at_k})
        header = ["method"] + [f"HIT@{k}" for k in ks] + ["QA", "failed"]
        rows = [header]
        for name in sorted(self.methods):
            result = self.methods[name]
            rows.append(
                [name]
                + [f"{result.hit_at_k.get(k, float('nan')):.1f}" for k in ks]
                + [("-" if result.qa_accuracy is None else f"{result.qa_accuracy:.1f}")]
                + [str(result.failed)]
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = [
            "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
            for row in rows
        ]
        return "\n".join(lines) + "\n"


def merge_reports(reports: Sequence[RetrievalReport]) -> RetrievalReport:
    """Combine single-method reports produced under one configuration."""
    if not reports:
        raise ValueError("no reports to merge")
    base = reports[0]
    methods: dict[str, MethodResult] = {}
    for report in reports:
        if report.config != base.config or report.counts != base.counts:
            raise ValueError("cannot merge reports with differing config or counts")
        overlapping = set(methods) & set(report.methods)
        if overlapping:
            raise ValueError(f"duplicate method name(s): {sorted(overlapping)}")
        methods.update(report.methods)
    return RetrievalReport(methods=methods, counts=dict(base.counts), config=dict(base.config))


def _pct(numerator: int, denominator: int) -> float:
    return round(100.0 * numerator / denominator, 1) if denominator else 0.0


def evaluate_dataset(
    records: Sequence[Record],
    method_runner: MethodRunner,
    config: RunConfig,
    answerer: Answerer | None = None,
) -> tuple[RetrievalReport, dict[str, SelectionResult]]:
    """Run one method over a dataset and aggregate HIT@K (and QA accuracy).

    Per-record failures are recorded and count as misses/wrong answers unless
    configured otherwise; a run where every record fails raises RunError.
    """
    if not records:
        raise ValueError("records must be non-empty")

    def run_one(record: Record) -> SelectionResult | StageError:
        try:
            return method_runner(record)
        except StageError as exc:
            return exc
        except Exception as exc:  # non-pipeline failure, still tagged
            return StageError("method", exc)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(run_one, records))
    else:
        outcomes = [run_one(record) for record in records]

    selections: dict[str, SelectionResult] = {}
    failures: dict[str, str] = {}
    for record, outcome in zip(records, outcomes):
        if isinstance(outcome, StageError):
            failures[record_id(record)] = str(outcome)
            log.warning("record %s failed: %s", record_id(record), outcome)
        else:
            selections[record_id(record)] = outcome
    if not selections:
        raise RunError(f"all {len(records)} records failed; first error: {next(iter(failures.values()))}")

    hit_counts = {k: 0 for k in config.ks}
    considered = 0
    qa_correct = 0
    qa_considered = 0
    for record in records:
        rid = record_id(record)
        selection = selections.get(rid)
        if selection is None and not config.count_failures_as_misses:
            continue
        considered += 1
        if selection is not None:
            hits = hit_at_k(selection, record.interval, config.ks)
            for k in config.ks:
                hit_counts[k] += hits[k]
        if answerer is not None and isinstance(record, QuestionRecord):
            qa_considered += 1
            if selection is not None:
                letter = answerer.answer(record, selection.timestamps)
                qa_correct += letter == record.answer

    result = MethodResult(
        hit_at_k={k: _pct(hit_counts[k], considered) for k in config.ks},
        records=len(records),
        failed=len(failures),
        qa_accuracy=_pct(qa_correct, qa_considered) if qa_considered else None,
    )
    report = RetrievalReport(
        methods={config.method_name: result},
        counts={"records": len(records)},
        config=config.echo(),
    )
    return report, selections
