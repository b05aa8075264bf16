"""Pluggable backends for frame scoring, OCR, planning, judging, and answering."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, MutableMapping, Protocol, Sequence

import numpy as np

from .errors import MissingDataError, ProviderError
from .merge import ScoreVector
from .ocr import OcrExtraction
from .plan import TOOL_WIRE_NAMES, Tool
from .timeline import EvidenceInterval, FrameTimeline, build_timeline, in_interval

log = logging.getLogger(__name__)

SCORE_FILE_FORMAT = "scorefile/1"

ENV_ENDPOINT = "RM_ENDPOINT"
ENV_API_KEY = "RM_API_KEY"
ENV_CACHE_DIR = "RM_CACHE_DIR"

LETTERS = ("A", "B", "C", "D", "E")


class Backend(str, Enum):
    FILE = "file"
    SYNTHETIC = "synthetic"
    REMOTE = "remote"


@dataclass(frozen=True)
class ProviderConfig:
    """Backend selection plus transport limits."""

    backend: Backend
    root_path: Path | None = None
    endpoint: str | None = None
    api_key: str | None = None
    timeout_ms: int = 30_000
    max_concurrent_requests: int = 4
    retry_count: int = 2

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.retry_count < 0:
            raise ValueError("retry_count must be >= 0")


def config_from_env(backend: Backend, root_path: Path | None = None) -> ProviderConfig:
    """Provider config taking endpoint/key from RM_* environment variables."""
    return ProviderConfig(
        backend=backend,
        root_path=root_path,
        endpoint=os.environ.get(ENV_ENDPOINT),
        api_key=os.environ.get(ENV_API_KEY),
    )


# ---------------------------------------------------------------------------
# Provider contracts
# ---------------------------------------------------------------------------


class FrameScorer(Protocol):
    """Scores every timeline frame against a query with one visual tool."""

    def score(self, video_id: str, tool: Tool, query: str, timeline: FrameTimeline) -> ScoreVector: ...


class OcrSource(Protocol):
    """Yields raw per-frame text extractions for a video."""

    def extractions(self, video_id: str, timeline: FrameTimeline) -> list[OcrExtraction]: ...


class ChatClient(Protocol):
    """Generic chat-completion client used by planner, judge, and answerer."""

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str: ...


# ---------------------------------------------------------------------------
# Deterministic generation
# ---------------------------------------------------------------------------


def _rng(*parts: object) -> np.random.Generator:
    """Counter-based generator keyed by the parts; reproducible anywhere."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def query_hash(query: str) -> str:
    """Filesystem-safe key for a query string."""
    return hashlib.sha1(query.encode("utf-8")).hexdigest()[:16]


def planted_query(call_id: str) -> str:
    """Canonical query text addressing a planted synthetic signal."""
    return f"signal:{call_id}"


def _planted_call_id(query: str) -> str | None:
    if query.startswith("signal:"):
        return query[len("signal:") :]
    return None


@dataclass(frozen=True)
class SignalSpec:
    """Strength and placement of one planted tool signal."""

    mu: float
    present_in_interval: bool = True


@dataclass(frozen=True)
class OcrPlant:
    """A text string planted at one timestamp for the synthetic OCR source."""

    t_s: float
    text: str
    confidence: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-evidence description of one synthetic video."""

    seed: int
    duration_s: float
    fps: float
    interval: EvidenceInterval
    signal_by_call: Mapping[str, SignalSpec]
    noise_sigma: float = 0.0
    video_id: str = ""
    ocr_plants: tuple[OcrPlant, ...] = ()

    def __post_init__(self):
        if self.interval.end_s > self.duration_s:
            raise ValueError("evidence interval exceeds the video duration")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.video_id:
            object.__setattr__(self, "video_id", f"synth-{self.seed}")


def draw_interval(seed: int, duration_s: float, length_s: float) -> EvidenceInterval:
    """Deterministic interval placement for a synthetic video seed."""
    if length_s >= duration_s:
        raise ValueError("interval length must be shorter than the video")
    u = float(_rng(seed, "interval").random())
    start = u * (duration_s - length_s)
    return EvidenceInterval(start, start + length_s)


def _planted_scores(spec: SyntheticSpec, key: str, signal: SignalSpec | None, n: int) -> np.ndarray:
    t = np.arange(n) / spec.fps
    scores = np.zeros(n, dtype=np.float64)
    if signal is not None and signal.present_in_interval:
        inside = (t >= spec.interval.start_s) & (t <= spec.interval.end_s)
        scores[inside] = signal.mu
    if spec.noise_sigma > 0:
        scores = scores + spec.noise_sigma * _rng(spec.seed, key).standard_normal(n)
    return scores


def synth_generate(
    spec: SyntheticSpec,
) -> tuple[FrameTimeline, dict[str, ScoreVector], EvidenceInterval]:
    """Materialize one synthetic instance: timeline, per-call scores, interval."""
    timeline = build_timeline(spec.video_id, spec.duration_s, spec.fps)
    vectors = {
        call_id: ScoreVector(
            call_id=call_id,
            timeline_ref=spec.video_id,
            scores=_planted_scores(spec, call_id, signal, len(timeline)),
        )
        for call_id, signal in spec.signal_by_call.items()
    }
    return timeline, vectors, spec.interval


class SyntheticProvider:
    """Scorer and OCR source backed by planted-evidence specs, keyed by video."""

    def __init__(self, specs: Mapping[str, SyntheticSpec] | Sequence[SyntheticSpec]):
        if not isinstance(specs, Mapping):
            specs = {spec.video_id: spec for spec in specs}
        self._specs = dict(specs)

    def spec_for(self, video_id: str) -> SyntheticSpec:
        try:
            return self._specs[video_id]
        except KeyError:
            raise MissingDataError(f"no synthetic spec for video {video_id!r}") from None

    def score(self, video_id: str, tool: Tool, query: str, timeline: FrameTimeline) -> ScoreVector:
        spec = self.spec_for(video_id)
        call_id = _planted_call_id(query)
        if call_id is not None and call_id in spec.signal_by_call:
            key, signal = call_id, spec.signal_by_call[call_id]
        else:
            # Unplanted query: pure noise, still deterministic per query text.
            key, signal = f"q:{TOOL_WIRE_NAMES[tool]}:{query_hash(query)}", None
        scores = _planted_scores(spec, key, signal, len(timeline))
        return ScoreVector(call_id=key, timeline_ref=video_id, scores=scores)

    def extractions(self, video_id: str, timeline: FrameTimeline) -> list[OcrExtraction]:
        spec = self.spec_for(video_id)
        out = [
            OcrExtraction(
                frame_index=timeline.index_near(plant.t_s),
                text=plant.text,
                confidence=plant.confidence,
            )
            for plant in spec.ocr_plants
        ]
        return sorted(out, key=lambda e: e.frame_index)


# ---------------------------------------------------------------------------
# File backend
# ---------------------------------------------------------------------------


def score_file_path(root: Path, video_id: str, tool: Tool, query: str) -> Path:
    return root / "scores" / video_id / f"{TOOL_WIRE_NAMES[tool]}-{query_hash(query)}.json"


def ocr_file_path(root: Path, video_id: str) -> Path:
    return root / "ocr" / f"{video_id}.jsonl"


def write_score_file(
    path: Path,
    video_id: str,
    tool: Tool,
    query: str,
    fps: float,
    duration_s: float,
    scores: Sequence[float],
) -> None:
    """Emit a score file v1; floats serialize through repr and round-trip."""
    payload = {
        "format": SCORE_FILE_FORMAT,
        "video_id": video_id,
        "tool": TOOL_WIRE_NAMES[tool],
        "query": query,
        "fps": fps,
        "duration_s": duration_s,
        "scores": [float(s) for s in scores],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload), encoding="utf-8")
    os.replace(tmp, path)


def parse_score_payload(payload: Mapping, timeline: FrameTimeline, origin: str) -> ScoreVector:
    """Validate a score file v1 body against a timeline."""
    if payload.get("format") != SCORE_FILE_FORMAT:
        raise ProviderError(f"{origin}: unsupported score format {payload.get('format')!r}")
    scores = payload.get("scores")
    if not isinstance(scores, list):
        raise ProviderError(f"{origin}: 'scores' must be an array")
    if len(scores) != len(timeline):
        raise ProviderError(
            f"{origin}: {len(scores)} scores for a {len(timeline)}-frame timeline"
        )
    return ScoreVector(call_id="", timeline_ref=timeline.video_id, scores=np.asarray(scores))


class FileProvider:
    """Reads score files and OCR extraction files from a directory tree."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def score(self, video_id: str, tool: Tool, query: str, timeline: FrameTimeline) -> ScoreVector:
        path = score_file_path(self.root, video_id, tool, query)
        if not path.exists():
            raise MissingDataError(f"score file not found: {path}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        return parse_score_payload(payload, timeline, origin=str(path))

    def extractions(self, video_id: str, timeline: FrameTimeline) -> list[OcrExtraction]:
        path = ocr_file_path(self.root, video_id)
        if not path.exists():
            raise MissingDataError(f"OCR extraction file not found: {path}")
        out: list[OcrExtraction] = []
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out.append(
                    OcrExtraction(
                        frame_index=timeline.index_near(float(record["t"])),
                        text=str(record["text"]),
                        confidence=float(record.get("conf", 1.0)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderError(f"{path}:{line_no}: bad OCR record: {exc}") from exc
        return sorted(out, key=lambda e: e.frame_index)


def write_ocr_file(path: Path, video_id: str, records: Sequence[tuple[float, str, float]]) -> None:
    """Write OCR extractions as JSON Lines sorted by timestamp."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps({"video_id": video_id, "t": float(t), "text": text, "conf": float(conf)})
        for t, text, conf in sorted(records, key=lambda r: r[0])
    ]
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------

# transport(url, payload, timeout_s, headers) -> (status_code, decoded_json)
Transport = Callable[[str, Mapping, float, Mapping[str, str]], tuple[int, object]]


def _requests_transport(url: str, payload: Mapping, timeout_s: float, headers: Mapping[str, str]):
    import requests

    resp = requests.post(url, json=payload, timeout=timeout_s, headers=dict(headers))
    try:
        body = resp.json()
    except ValueError:
        body = {"error": resp.text[:500]}
    return resp.status_code, body


class _RemoteBase:
    """Shared retry/concurrency machinery for HTTP backends."""

    def __init__(self, config: ProviderConfig, transport: Transport | None = None):
        if not config.endpoint:
            raise ValueError("remote backend requires an endpoint")
        self.config = config
        self._transport = transport or _requests_transport
        self._sem = threading.BoundedSemaphore(config.max_concurrent_requests)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def _post(self, path: str, payload: Mapping) -> object:
        url = self.config.endpoint.rstrip("/") + path
        timeout_s = self.config.timeout_ms / 1000.0
        last_error: Exception | None = None
        for attempt in range(self.config.retry_count + 1):
            if attempt:
                time.sleep(min(0.1 * 2**attempt, 2.0))
            try:
                with self._sem:
                    status, body = self._transport(url, payload, timeout_s, self._headers())
            except Exception as exc:
                last_error = exc
                continue
            if 200 <= status < 300:
                return body
            detail = body.get("error") if isinstance(body, Mapping) else body
            last_error = ProviderError(f"POST {path} -> {status}: {detail}")
        raise ProviderError(
            f"POST {path} failed after {self.config.retry_count + 1} attempt(s): {last_error}"
        ) from last_error


class RemoteScorer(_RemoteBase):
    """Client for the /score endpoint; responses are score file v1 bodies."""

    def score(self, video_id: str, tool: Tool, query: str, timeline: FrameTimeline) -> ScoreVector:
        body = self._post(
            "/score",
            {"video_id": video_id, "tool": TOOL_WIRE_NAMES[tool], "query": query},
        )
        if not isinstance(body, Mapping):
            raise ProviderError("/score returned a non-object body")
        return parse_score_payload(body, timeline, origin=f"{self.config.endpoint}/score")


class HttpChatClient(_RemoteBase):
    """Chat-completion client pinned to temperature 0."""

    def __init__(self, config: ProviderConfig, model: str, transport: Transport | None = None):
        super().__init__(config, transport)
        self.model = model

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        body = self._post(
            "/chat/completions",
            {"model": self.model, "messages": list(messages), "temperature": 0},
        )
        if isinstance(body, Mapping):
            choices = body.get("choices")
            if isinstance(choices, list) and choices:
                message = choices[0].get("message", {})
                content = message.get("content")
                if isinstance(content, str):
                    return content
            text = body.get("text")
            if isinstance(text, str):
                return text
        raise ProviderError("chat response carried no text content")


# ---------------------------------------------------------------------------
# Planner and answerer plumbing
# ---------------------------------------------------------------------------


def _load_data_text(name: str) -> str:
    return resources.files("framefuse").joinpath("data", name).read_text(encoding="utf-8")


def format_options(options: Sequence[str]) -> str:
    """Render answer options as lettered lines; 'N/A' when there are none."""
    if not options:
        return "N/A"
    return "\n".join(f"{letter}) {text}" for letter, text in zip(LETTERS, options))


def fill_planner_prompt(question: str, options: Sequence[str], duration_s: float, fps: float) -> str:
    template = _load_data_text("planner_prompt.txt")
    return template.format(
        question=question,
        options=format_options(options),
        duration=f"{duration_s:g}",
        fps=f"{fps:g}",
    )


def fill_answer_prompt(question: str, options: Sequence[str], frame_timestamps: Sequence[float]) -> str:
    template = _load_data_text("answer_prompt.txt")
    stamps = ", ".join(f"{t:.2f}" for t in frame_timestamps) if frame_timestamps else "none"
    return template.format(
        question=question,
        options=format_options(options),
        timestamps=stamps,
    )


class PlanService:
    """Fills the planner prompt, calls the client, and caches raw completions.

    Cache hits are observable through the call counter; a preset cache (for
    offline runs) short-circuits the client entirely.
    """

    def __init__(
        self,
        client: ChatClient | None = None,
        cache: MutableMapping[str, str] | None = None,
    ):
        self.client = client
        self.cache = cache if cache is not None else {}
        self.calls = 0

    def plan_query(
        self,
        question_id: str,
        question: str,
        options: Sequence[str],
        duration_s: float,
        fps: float,
    ) -> str:
        if question_id in self.cache:
            return self.cache[question_id]
        if self.client is None:
            raise ProviderError(f"no cached plan for {question_id!r} and no planner client configured")
        prompt = fill_planner_prompt(question, options, duration_s, fps)
        try:
            raw = self.client.complete([{"role": "user", "content": prompt}])
        except Exception as exc:
            raise ProviderError(f"planner call failed for {question_id!r}: {exc}") from exc
        self.calls += 1
        self.cache[question_id] = raw
        return raw


def extract_letter(text: str) -> str | None:
    """First-letter extraction: the leading character must be an option letter."""
    stripped = text.strip().upper()
    if stripped and stripped[0] in LETTERS:
        return stripped[0]
    return None


def answer(
    question: str,
    options: Sequence[str],
    frame_timestamps: Sequence[float],
    answerer_client: ChatClient,
) -> str | None:
    """Ask the answerer for one option letter; None means abstention (wrong).

    Zero frames is legal (blind mode); transport errors abstain and the run
    continues.
    """
    prompt = fill_answer_prompt(question, options, frame_timestamps)
    try:
        text = answerer_client.complete([{"role": "user", "content": prompt}])
    except Exception as exc:
        log.warning("answerer call failed: %s", exc)
        return None
    return extract_letter(text)


# ---------------------------------------------------------------------------
# Test and offline stubs
# ---------------------------------------------------------------------------


class StaticChatClient:
    """Chat client returning a fixed completion; counts calls."""

    def __init__(self, text: str):
        self.text = text
        self.calls = 0

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        self.calls += 1
        return self.text


class ConstantJudge:
    """Judge that marks every extraction with one fixed verdict."""

    def __init__(self, verdict: bool):
        self.verdict = verdict

    def judge(self, query: str, texts: Sequence[str]) -> list[bool]:
        return [self.verdict] * len(texts)


class KeywordJudge:
    """Judge that keeps a text iff it shares a word token with the query."""

    @staticmethod
    def _tokens(text: str) -> set[str]:
        return set(re.findall(r"[\w-]+", text.lower()))

    def judge(self, query: str, texts: Sequence[str]) -> list[bool]:
        tokens = self._tokens(query)
        return [bool(tokens & self._tokens(text)) for text in texts]


class ChatJudge:
    """Relevance judge backed by a chat client: one yes/no per text."""

    def __init__(self, client: ChatClient):
        self.client = client

    def judge(self, query: str, texts: Sequence[str]) -> list[bool]:
        listing = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(texts))
        prompt = (
            "You judge whether on-screen text extracted from video frames is "
            "relevant to a query.\n\n"
            f"Query: {query}\n\nExtracted texts:\n{listing}\n\n"
            f"Reply with a JSON array of exactly {len(texts)} booleans, one per "
            "text in order, true when the text is relevant to the query."
        )
        raw = self.client.complete([{"role": "user", "content": prompt}])
        start, end = raw.find("["), raw.rfind("]")
        if start < 0 or end <= start:
            raise ProviderError("judge response carried no JSON array")
        verdicts = json.loads(raw[start : end + 1])
        if not isinstance(verdicts, list) or len(verdicts) != len(texts):
            raise ProviderError("judge returned a malformed verdict array")
        return [bool(v) for v in verdicts]


class ChatAnswerer:
    """Answerer surface backed by a chat client."""

    def __init__(self, client: ChatClient):
        self.client = client

    def answer(self, record, frame_timestamps: Sequence[float]) -> str | None:
        return answer(record.question, record.options, frame_timestamps, self.client)


class IntervalOracleAnswerer:
    """Stub answerer: gold letter iff any frame lies inside the gold interval."""

    def __init__(self, wrong_letter: str = "E"):
        self.wrong_letter = wrong_letter

    def answer(self, record, frame_timestamps: Sequence[float]) -> str:
        if any(in_interval(t, record.interval) for t in frame_timestamps):
            return record.answer
        return self.wrong_letter if record.answer != self.wrong_letter else "D"


class RandomAnswerer:
    """Stub answerer picking a uniform-random option letter per question."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def answer(self, record, frame_timestamps: Sequence[float]) -> str:
        idx = int(_rng(self.seed, "answer", record.question_id).integers(0, len(LETTERS)))
        return LETTERS[idx]
