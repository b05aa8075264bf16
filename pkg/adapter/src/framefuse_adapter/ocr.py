"""OCR backends: easyocr when installed, otherwise an explicit null backend."""

from __future__ import annotations

import logging
from typing import Protocol

import numpy as np

log = logging.getLogger(__name__)


class OcrBackend(Protocol):
    """Detects text in one frame: (text, confidence) pairs."""

    name: str

    def detect(self, frame_bgr: np.ndarray) -> list[tuple[str, float]]: ...


class NullOcr:
    """Backend that detects nothing; emitted files stay schema-valid."""

    name = "none"

    def detect(self, frame_bgr: np.ndarray) -> list[tuple[str, float]]:
        return []


class EasyOcr:
    """easyocr-backed detector; the reader loads lazily on first use."""

    name = "easyocr"

    def __init__(self, languages: tuple[str, ...] = ("en",)):
        import easyocr  # deferred: heavy import, optional dependency

        self._reader = easyocr.Reader(list(languages), gpu=False, verbose=False)

    def detect(self, frame_bgr: np.ndarray) -> list[tuple[str, float]]:
        results = self._reader.readtext(frame_bgr)
        return [(text, float(conf)) for _, text, conf in results if text.strip()]


def load_ocr_backend(name: str) -> OcrBackend:
    """Resolve a backend. 'auto' prefers easyocr and falls back to none."""
    if name == "none":
        return NullOcr()
    if name == "easyocr":
        return EasyOcr()
    if name == "auto":
        try:
            return EasyOcr()
        except ImportError:
            log.warning("easyocr is not installed; emitting empty OCR extractions")
            return NullOcr()
    raise ValueError(f"unknown OCR backend {name!r}")
