"""Video probing and frame sampling onto the engine's uniform grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

# Same rounding convention as the engine's timeline: floor(duration * fps),
# rounded instead within this tolerance of an integer, never below one frame.
GRID_EPS = 1e-6


class VideoError(Exception):
    """Decoding or probing failed; the message carries the stage."""


@dataclass(frozen=True)
class VideoInfo:
    path: Path
    duration_s: float
    native_fps: float
    frame_count: int


def probe(path: Path | str) -> VideoInfo:
    path = Path(path)
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise VideoError(f"decode: cannot open {path}")
        native_fps = cap.get(cv2.CAP_PROP_FPS)
        frame_count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        if native_fps <= 0 or frame_count <= 0:
            raise VideoError(f"decode: no usable frames in {path}")
        return VideoInfo(
            path=path,
            duration_s=frame_count / native_fps,
            native_fps=native_fps,
            frame_count=frame_count,
        )
    finally:
        cap.release()


def sample_count(duration_s: float, fps: float) -> int:
    """Number of grid frames for (duration, fps); matches the engine's grid."""
    if duration_s <= 0 or fps <= 0:
        raise ValueError("duration_s and fps must be > 0")
    exact = duration_s * fps
    n = round(exact) if abs(exact - round(exact)) <= GRID_EPS else math.floor(exact)
    return max(n, 1)


def sample_timestamps(duration_s: float, fps: float) -> list[float]:
    return [i / fps for i in range(sample_count(duration_s, fps))]


def iter_samples(info: VideoInfo, fps: float) -> Iterator[tuple[float, np.ndarray]]:
    """Yield (timestamp, BGR frame) for every grid timestamp.

    Decodes sequentially and serves each target timestamp from the nearest
    source frame; source frames are never decoded twice.
    """
    targets = sample_timestamps(info.duration_s, fps)
    cap = cv2.VideoCapture(str(info.path))
    try:
        if not cap.isOpened():
            raise VideoError(f"decode: cannot open {info.path}")
        src_index = -1
        frame = None
        for t in targets:
            want = min(info.frame_count - 1, round(t * info.native_fps))
            while src_index < want:
                ok, nxt = cap.read()
                if not ok:
                    break
                frame = nxt
                src_index += 1
            if frame is None:
                raise VideoError(f"decode: failed before {t:.2f}s in {info.path}")
            yield t, frame
    finally:
        cap.release()
