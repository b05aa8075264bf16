"""Planted-evidence datasets: deterministic generation and on-disk materialization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FrameFuseError
from .eval import QuestionRecord, combined_query, write_jsonl, write_questions
from .plan import TOOL_WIRE_NAMES, WIRE_TOOL_NAMES, Tool, parse_plan, plan_payload
from .providers import (
    LETTERS,
    OcrPlant,
    SignalSpec,
    SyntheticProvider,
    SyntheticSpec,
    _rng,
    draw_interval,
    ocr_file_path,
    planted_query,
    score_file_path,
    synth_generate,
    write_ocr_file,
    write_score_file,
)

SYNTH_SPEC_FORMAT = "synthspec/1"

_OPTION_TEXTS = (
    "a red circular marker",
    "a blue square marker",
    "a green triangular marker",
    "a yellow striped marker",
    "a white dotted marker",
)


@dataclass(frozen=True)
class SynthCall:
    """One planted tool signal shared by every video in the dataset."""

    id: str
    tool: Tool
    mu: float
    present: bool = True


@dataclass(frozen=True)
class SynthDatasetConfig:
    """Recipe for a planted-evidence dataset."""

    seed: int
    videos: int
    duration_s: float
    fps: float
    interval_len_s: float
    calls: tuple[SynthCall, ...]
    combine: str
    noise_sigma: float = 0.0
    ocr_text: str | None = None

    def __post_init__(self):
        if self.videos < 1:
            raise ValueError("videos must be >= 1")
        if not self.calls:
            raise ValueError("at least one planted call is required")


def load_synth_config(path: Path | str) -> SynthDatasetConfig:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != SYNTH_SPEC_FORMAT:
        raise FrameFuseError(f"unsupported synth spec format {payload.get('format')!r}")
    calls = tuple(
        SynthCall(
            id=str(c["id"]),
            tool=WIRE_TOOL_NAMES[c.get("tool", "siglip")],
            mu=float(c.get("mu", 1.0)),
            present=bool(c.get("present", True)),
        )
        for c in payload["calls"]
    )
    return SynthDatasetConfig(
        seed=int(payload["seed"]),
        videos=int(payload["videos"]),
        duration_s=float(payload["duration_s"]),
        fps=float(payload["fps"]),
        interval_len_s=float(payload["interval_len_s"]),
        calls=calls,
        combine=str(payload["combine"]),
        noise_sigma=float(payload.get("noise_sigma", 0.0)),
        ocr_text=payload.get("ocr_text"),
    )


def dump_synth_config(cfg: SynthDatasetConfig) -> dict:
    return {
        "format": SYNTH_SPEC_FORMAT,
        "seed": cfg.seed,
        "videos": cfg.videos,
        "duration_s": cfg.duration_s,
        "fps": cfg.fps,
        "interval_len_s": cfg.interval_len_s,
        "noise_sigma": cfg.noise_sigma,
        "calls": [
            {
                "id": call.id,
                "tool": TOOL_WIRE_NAMES[call.tool],
                "mu": call.mu,
                "present": call.present,
            }
            for call in cfg.calls
        ],
        "combine": cfg.combine,
        "ocr_text": cfg.ocr_text,
    }


@dataclass(frozen=True)
class SynthInstance:
    """One generated video: its question record, spec, and raw planner text."""

    record: QuestionRecord
    spec: SyntheticSpec
    raw_plan: str


def _raw_plan_text(cfg: SynthDatasetConfig) -> str:
    queries = [
        {"tool": TOOL_WIRE_NAMES[call.tool], "query": planted_query(call.id), "id": call.id}
        for call in cfg.calls
    ]
    body = json.dumps({"queries": queries, "combine": cfg.combine})
    reasoning = (
        "Each planted signal marks the flagged clip; search every signal and "
        "combine them as specified."
    )
    return f"{reasoning}\n```json\n{body}\n```\n"


def build_instances(cfg: SynthDatasetConfig) -> list[SynthInstance]:
    """Deterministically expand a dataset config into per-video instances."""
    raw_plan = _raw_plan_text(cfg)
    parse_plan(raw_plan)  # fail fast on a bad combine string
    instances = []
    for i in range(cfg.videos):
        seed = cfg.seed + i
        video_id = f"synth-{cfg.seed}-{i:04d}"
        interval = draw_interval(seed, cfg.duration_s, cfg.interval_len_s)
        answer = LETTERS[int(_rng(seed, "answer").integers(0, len(LETTERS)))]
        plants: tuple[OcrPlant, ...] = ()
        if cfg.ocr_text:
            mid = (interval.start_s + interval.end_s) / 2.0
            plants = (OcrPlant(t_s=mid, text=f"{cfg.ocr_text} {video_id}"),)
        spec = SyntheticSpec(
            seed=seed,
            duration_s=cfg.duration_s,
            fps=cfg.fps,
            interval=interval,
            signal_by_call={call.id: SignalSpec(call.mu, call.present) for call in cfg.calls},
            noise_sigma=cfg.noise_sigma,
            video_id=video_id,
            ocr_plants=plants,
        )
        record = QuestionRecord(
            question_id=f"q-{video_id}",
            video_id=video_id,
            duration_s=cfg.duration_s,
            question=f"Which marker does {video_id} show during its flagged clip?",
            options=_OPTION_TEXTS,
            answer=answer,
            interval=interval,
            split="test",
        )
        instances.append(SynthInstance(record=record, spec=spec, raw_plan=raw_plan))
    return instances


def provider_for(instances: list[SynthInstance]) -> SyntheticProvider:
    return SyntheticProvider([inst.spec for inst in instances])


def plan_preset(instances: list[SynthInstance]) -> dict[str, str]:
    return {inst.record.question_id: inst.raw_plan for inst in instances}


def plan_cache_rows(instances: list[SynthInstance]) -> list[dict]:
    rows = []
    for inst in instances:
        plan = parse_plan(inst.raw_plan)
        rows.append(
            {
                "question_id": inst.record.question_id,
                "raw": inst.raw_plan,
                "plan": plan_payload(plan),
                "fallback": False,
            }
        )
    return rows


def materialize(
    instances: list[SynthInstance],
    cfg: SynthDatasetConfig,
    out_dir: Path,
    force: bool = False,
) -> dict[str, Path]:
    """Write the dataset to disk so a file-backend run reproduces the
    synthetic-backend run bit-exactly.

    Emits questions.jsonl, plans.jsonl, per-call score files, the score file
    for each record's single-query fallback, OCR files, and a manifest.
    """
    out_dir = Path(out_dir)
    targets = [out_dir / "questions.jsonl", out_dir / "plans.jsonl", out_dir / "manifest.json"]
    collisions = [p for p in targets if p.exists()]
    if collisions and not force:
        raise FrameFuseError(
            f"refusing to overwrite {', '.join(str(p) for p in collisions)}; pass force"
        )
    out_dir.mkdir(parents=True, exist_ok=True)

    provider = provider_for(instances)
    for inst in instances:
        spec = inst.spec
        timeline, vectors, _ = synth_generate(spec)
        for call in cfg.calls:
            write_score_file(
                score_file_path(out_dir, spec.video_id, call.tool, planted_query(call.id)),
                video_id=spec.video_id,
                tool=call.tool,
                query=planted_query(call.id),
                fps=spec.fps,
                duration_s=spec.duration_s,
                scores=vectors[call.id].scores,
            )
        # Single-query fallback scores, so baseline runs work offline too.
        fallback_query = combined_query(inst.record.question, list(inst.record.options))
        fallback_vector = provider.score(spec.video_id, Tool.SCENE_MATCHER, fallback_query, timeline)
        write_score_file(
            score_file_path(out_dir, spec.video_id, Tool.SCENE_MATCHER, fallback_query),
            video_id=spec.video_id,
            tool=Tool.SCENE_MATCHER,
            query=fallback_query,
            fps=spec.fps,
            duration_s=spec.duration_s,
            scores=fallback_vector.scores,
        )
        write_ocr_file(
            ocr_file_path(out_dir, spec.video_id),
            video_id=spec.video_id,
            records=[(p.t_s, p.text, p.confidence) for p in spec.ocr_plants],
        )

    questions_path = out_dir / "questions.jsonl"
    plans_path = out_dir / "plans.jsonl"
    write_questions(questions_path, [inst.record for inst in instances])
    write_jsonl(plans_path, plan_cache_rows(instances))
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {
                "format": "synthdataset/1",
                "spec": dump_synth_config(cfg),
                "questions": questions_path.name,
                "plans": plans_path.name,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return {"questions": questions_path, "plans": plans_path, "manifest": manifest_path}
