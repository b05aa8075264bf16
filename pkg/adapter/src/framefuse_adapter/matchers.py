"""Frame/text matchers behind a small pluggable surface.

The default matcher is a deterministic feature-hash stand-in: it keeps the
whole emit pipeline and its file contracts runnable on any machine with no
model weights. Real checkpoints plug in through --matcher module:factory.
"""

from __future__ import annotations

import hashlib
from importlib import import_module
from typing import Protocol, Sequence

import cv2
import numpy as np


class FrameTextMatcher(Protocol):
    """Embeds queries and frames into one space; scores are cosines."""

    def text_vector(self, query: str) -> np.ndarray: ...

    def frame_vector(self, frame_bgr: np.ndarray) -> np.ndarray: ...


class HashMatcher:
    """Deterministic stand-in matcher (no semantics, stable everywhere).

    Text becomes a hashed character-trigram bag; frames become a fixed random
    projection of a downsampled RGB thumbnail. Useful for wiring, contracts,
    and tests; replace with a real image/text model for actual retrieval.
    """

    dim = 256
    _thumb = 16

    def __init__(self):
        rng = np.random.Generator(np.random.Philox(key=np.array([0xF00D, 0xBEEF], dtype=np.uint64)))
        self._projection = rng.standard_normal((self._thumb * self._thumb * 3, self.dim))

    def text_vector(self, query: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f"  {query.lower()} "
        for i in range(len(padded) - 2):
            trigram = padded[i : i + 3]
            bucket = int.from_bytes(hashlib.blake2b(trigram.encode(), digest_size=4).digest(), "big")
            vec[bucket % self.dim] += 1.0
        return _unit(vec)

    def frame_vector(self, frame_bgr: np.ndarray) -> np.ndarray:
        thumb = cv2.resize(frame_bgr, (self._thumb, self._thumb), interpolation=cv2.INTER_AREA)
        flat = thumb.astype(np.float64).reshape(-1) / 255.0
        return _unit(flat @ self._projection)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def whole_frame_scores(matcher: FrameTextMatcher, frames: Sequence[np.ndarray], query: str) -> np.ndarray:
    text = matcher.text_vector(query)
    return np.array([float(matcher.frame_vector(f) @ text) for f in frames])


def region_scores(
    matcher: FrameTextMatcher,
    frames: Sequence[np.ndarray],
    query: str,
    grid: int = 3,
    aggregate: str = "max",
) -> np.ndarray:
    """Score each frame by its best (or mean) grid-crop/text similarity.

    Max-over-regions is the default aggregation for entity queries; mean is
    available as config.
    """
    if aggregate not in ("max", "mean"):
        raise ValueError(f"aggregate must be 'max' or 'mean', got {aggregate!r}")
    text = matcher.text_vector(query)
    out = np.empty(len(frames))
    for i, frame in enumerate(frames):
        h, w = frame.shape[:2]
        sims = []
        for r in range(grid):
            for c in range(grid):
                crop = frame[r * h // grid : (r + 1) * h // grid, c * w // grid : (c + 1) * w // grid]
                if crop.size == 0:
                    continue
                sims.append(float(matcher.frame_vector(crop) @ text))
        out[i] = max(sims) if aggregate == "max" else sum(sims) / len(sims)
    return out


def load_matcher(spec: str) -> FrameTextMatcher:
    """Resolve a matcher: 'hash' or a 'module:factory' dotted path."""
    if spec == "hash":
        return HashMatcher()
    if ":" in spec:
        module_name, factory_name = spec.split(":", 1)
        factory = getattr(import_module(module_name), factory_name)
        return factory()
    raise ValueError(f"unknown matcher {spec!r}; use 'hash' or 'module:factory'")
