"""Batch CLI: turn a video into score files and OCR extractions."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from .emit import AdapterJob, emit_ocr, emit_scores
from .video import probe, sample_count


@click.group()
@click.option("--verbose", is_flag=True)
def main(verbose: bool):
    """Offline adapter emitting framefuse-format inputs from videos."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


def _parse_queries(values: tuple[str, ...]) -> tuple[tuple[str, str], ...]:
    queries = []
    for value in values:
        tool, sep, text = value.partition(":")
        if not sep or not text.strip():
            raise click.UsageError(f"bad --query {value!r}; expected tool:text")
        queries.append((tool.strip(), text.strip()))
    return tuple(queries)


@main.command("score")
@click.option("--video", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fps", default=2.0, show_default=True)
@click.option("--video-id", default="", help="Defaults to the video filename stem.")
@click.option("--query", "queries", multiple=True, required=True, help="tool:text, e.g. 'siglip:person crossing river'. Repeatable.")
@click.option("--matcher", default="hash", show_default=True, help="'hash' or module:factory for a real model.")
@click.option("--region-grid", default=3, show_default=True)
@click.option("--region-aggregate", type=click.Choice(["max", "mean"]), default="max", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def cmd_score(video, fps, video_id, queries, matcher, region_grid, region_aggregate, out_dir):
    """Score the video's frame grid against each query; write score files."""
    job = AdapterJob(
        video_path=video,
        fps=fps,
        queries=_parse_queries(queries),
        out_dir=out_dir,
        video_id=video_id,
        matcher=matcher,
        region_grid=region_grid,
        region_aggregate=region_aggregate,
    )
    try:
        for path in emit_scores(job):
            click.echo(str(path))
    except Exception as exc:
        raise click.ClickException(f"score: {exc}")


@main.command("ocr")
@click.option("--video", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fps", default=2.0, show_default=True)
@click.option("--video-id", default="")
@click.option("--backend", default="auto", show_default=True, help="auto | easyocr | none")
@click.option("--min-confidence", default=0.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def cmd_ocr(video, fps, video_id, backend, min_confidence, out_dir):
    """Run OCR on every sampled frame; write the extraction file."""
    job = AdapterJob(
        video_path=video,
        fps=fps,
        queries=(),
        out_dir=out_dir,
        video_id=video_id,
        ocr_backend=backend,
        min_ocr_confidence=min_confidence,
    )
    try:
        click.echo(str(emit_ocr(job)))
    except Exception as exc:
        raise click.ClickException(f"ocr: {exc}")


@main.command("probe")
@click.option("--video", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fps", default=2.0, show_default=True)
def cmd_probe(video, fps):
    """Print the video's duration, native fps, and grid size at --fps."""
    info = probe(video)
    click.echo(f"duration_s={info.duration_s:.3f} native_fps={info.native_fps:.3f} frames={info.frame_count}")
    click.echo(f"grid frames at {fps} fps: {sample_count(info.duration_s, fps)}")


if __name__ == "__main__":
    main()
