"""Emit engine-format score files and OCR extraction files for one video."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .matchers import load_matcher, region_scores, whole_frame_scores
from .ocr import load_ocr_backend
from .video import iter_samples, probe, sample_count

SCORE_FILE_FORMAT = "scorefile/1"
TOOLS = ("siglip", "tren")


@dataclass(frozen=True)
class AdapterJob:
    """One video's worth of work: which queries to score, where to write."""

    video_path: Path
    fps: float
    queries: tuple[tuple[str, str], ...]  # (tool, query), tool in TOOLS
    out_dir: Path
    video_id: str = ""
    matcher: str = "hash"
    region_grid: int = 3
    region_aggregate: str = "max"
    ocr_backend: str = "auto"
    min_ocr_confidence: float = 0.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        for tool, _ in self.queries:
            if tool not in TOOLS:
                raise ValueError(f"unknown tool {tool!r}; expected one of {TOOLS}")
        if not self.video_id:
            object.__setattr__(self, "video_id", Path(self.video_path).stem)


def query_hash(query: str) -> str:
    """Filesystem-safe query key; must match the engine's score-file layout."""
    return hashlib.sha1(query.encode("utf-8")).hexdigest()[:16]


def score_path(root: Path, video_id: str, tool: str, query: str) -> Path:
    return Path(root) / "scores" / video_id / f"{tool}-{query_hash(query)}.json"


def ocr_path(root: Path, video_id: str) -> Path:
    return Path(root) / "ocr" / f"{video_id}.jsonl"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def emit_scores(job: AdapterJob) -> list[Path]:
    """Write one score file v1 per (tool, query); vector length matches the
    engine grid for (duration, fps)."""
    info = probe(job.video_path)
    frames = [frame for _, frame in iter_samples(info, job.fps)]
    expected = sample_count(info.duration_s, job.fps)
    if len(frames) != expected:
        raise RuntimeError(f"sampled {len(frames)} frames, grid wants {expected}")

    matcher = load_matcher(job.matcher)
    written = []
    for tool, query in job.queries:
        if tool == "siglip":
            scores = whole_frame_scores(matcher, frames, query)
        else:
            scores = region_scores(
                matcher, frames, query, grid=job.region_grid, aggregate=job.region_aggregate
            )
        payload = {
            "format": SCORE_FILE_FORMAT,
            "video_id": job.video_id,
            "tool": tool,
            "query": query,
            "fps": job.fps,
            "duration_s": info.duration_s,
            "scores": [float(s) for s in scores],
        }
        path = score_path(job.out_dir, job.video_id, tool, query)
        _atomic_write(path, json.dumps(payload))
        written.append(path)
    return written


def emit_ocr(job: AdapterJob) -> Path:
    """Write the OCR extraction file: one JSON line per detection, sorted by t."""
    info = probe(job.video_path)
    backend = load_ocr_backend(job.ocr_backend)
    records = []
    for t, frame in iter_samples(info, job.fps):
        for text, conf in backend.detect(frame):
            if conf >= job.min_ocr_confidence:
                records.append({"video_id": job.video_id, "t": t, "text": text, "conf": conf})
    records.sort(key=lambda r: r["t"])
    path = ocr_path(job.out_dir, job.video_id)
    _atomic_write(path, "".join(json.dumps(r) + "\n" for r in records))
    return path
