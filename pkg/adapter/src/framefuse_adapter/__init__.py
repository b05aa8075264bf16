"""Offline batch adapter: videos in, framefuse-format score/OCR files out."""

from .emit import AdapterJob, emit_ocr, emit_scores, ocr_path, score_path
from .matchers import HashMatcher, load_matcher
from .video import VideoInfo, iter_samples, probe, sample_count, sample_timestamps

__version__ = "0.1.0"
