"""Sampled frame grid of a video and the temporal-gap parameter."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Absolute tolerance for all time comparisons, in seconds.
TIME_EPS = 1e-6

TAU_CAP_S = 10.0


@dataclass(frozen=True)
class EvidenceInterval:
    """Closed ground-truth interval [start_s, end_s] within a video."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0.0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid interval [{self.start_s}, {self.end_s}]")

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class FrameTimeline:
    """Uniform frame grid: frame i sits at i / fps seconds."""

    video_id: str
    duration_s: float
    fps: float
    timestamps: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.timestamps)

    def index_near(self, t: float) -> int:
        """Nearest grid index for a timestamp, clamped to the grid."""
        idx = int(round(t * self.fps))
        return min(max(idx, 0), len(self.timestamps) - 1)


def build_timeline(video_id: str, duration_s: float, fps: float) -> FrameTimeline:
    """Grid {0, 1/fps, 2/fps, ...} up to and excluding duration_s.

    Frame count is floor(duration * fps), rounded instead when duration * fps
    lands within TIME_EPS of an integer; always at least one frame.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    if fps <= 0:
        raise ValueError(f"fps must be > 0, got {fps}")
    exact = duration_s * fps
    n = round(exact) if abs(exact - round(exact)) <= TIME_EPS else math.floor(exact)
    n = max(n, 1)
    return FrameTimeline(video_id, duration_s, fps, tuple(i / fps for i in range(n)))


def compute_tau(duration_s: float, k: int) -> float:
    """Temporal gap in seconds: min(duration_s / (2k), 10).

    duration_s is always the full video duration, never the clip length.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return min(duration_s / (2.0 * k), TAU_CAP_S)


def in_interval(t: float, interval: EvidenceInterval) -> bool:
    """Closed-interval membership: start_s <= t <= end_s."""
    return interval.start_s <= t <= interval.end_s
