"""Batch command-line surface: synth, plan, run, eval."""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .errors import FrameFuseError, PlanParseError, PlanValidationError
from .eval import (
    DEFAULT_KS,
    MethodResult,
    ProviderBundle,
    Record,
    RetrievalReport,
    RunConfig,
    combined_query,
    evaluate_dataset,
    hit_at_k,
    merge_reports,
    oracle_baseline,
    read_captions,
    read_questions,
    read_selections,
    record_id,
    record_options,
    record_query,
    run_question,
    siglipq_baseline,
    uniform_baseline,
    write_jsonl,
    write_selections,
)
from .merge import MergeMode
from .plan import Tool, parse_plan, plan_payload, single_query_plan
from .providers import (
    Backend,
    ChatAnswerer,
    ChatJudge,
    ConstantJudge,
    FileProvider,
    HttpChatClient,
    IntervalOracleAnswerer,
    KeywordJudge,
    PlanService,
    ProviderConfig,
    RandomAnswerer,
    RemoteScorer,
    config_from_env,
)
from .synth import build_instances, load_synth_config, materialize, plan_preset, provider_for
from .timeline import build_timeline

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL_FAILURES = 1
EXIT_CONFIG_ERROR = 2


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(sorted({int(part) for part in text.split(",") if part.strip()}))
    except ValueError:
        raise click.UsageError(f"bad K list {text!r}; expected comma-separated integers")
    if not ks or any(k < 1 for k in ks):
        raise click.UsageError(f"bad K list {text!r}")
    return ks


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load_records(dataset: Path, captions: bool) -> list[Record]:
    return list(read_captions(dataset) if captions else read_questions(dataset))


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Query-conditioned keyframe retrieval and evaluation."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command("synth")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--force", is_flag=True, help="Overwrite an existing dataset.")
def cmd_synth(spec_path: Path, out_dir: Path, force: bool):
    """Materialize a planted-evidence dataset (questions, plans, score files)."""
    try:
        cfg = load_synth_config(spec_path)
        instances = build_instances(cfg)
        paths = materialize(instances, cfg, out_dir, force=force)
    except (FrameFuseError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"bad synth spec or dataset collision: {exc}")
    click.echo(f"wrote {len(instances)} videos under {out_dir}")
    for name, path in paths.items():
        click.echo(f"  {name}: {path}")


def _default_plan_cache() -> Path | None:
    cache_dir = os.environ.get("RM_CACHE_DIR")
    return Path(cache_dir) / "plans.jsonl" if cache_dir else None


@main.command("plan")
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--captions", is_flag=True, help="Dataset is a captions file.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), help="Plan cache path (default: $RM_CACHE_DIR/plans.jsonl).")
@click.option("--synth-spec", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Derive plans from a synthetic spec instead of a planner endpoint.")
@click.option("--endpoint", default=None, help="Chat endpoint for the planner (default: RM_ENDPOINT).")
@click.option("--model", default="planner", show_default=True)
@click.option("--fps", default=2.0, show_default=True)
def cmd_plan(dataset: Path, captions: bool, out_path: Path | None, synth_spec: Path | None, endpoint: str | None, model: str, fps: float):
    """Generate and cache raw plans for every record; idempotent via the cache."""
    out_path = out_path or _default_plan_cache()
    if out_path is None:
        raise click.UsageError("pass --out or set RM_CACHE_DIR")
    records = _load_records(dataset, captions)
    cache_rows: dict[str, dict] = {}
    if out_path.exists():
        for line in out_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                cache_rows[row["question_id"]] = row

    service = _planner_service(synth_spec, endpoint, model, preset_cache={})
    failures = 0
    for record in records:
        rid = record_id(record)
        if rid in cache_rows:
            continue
        row = {"question_id": rid, "raw": "", "plan": None, "fallback": False}
        try:
            raw = service.plan_query(rid, record_query(record), record_options(record), record.duration_s, fps)
            row["raw"] = raw
            row["plan"] = plan_payload(parse_plan(raw))
        except (PlanParseError, PlanValidationError) as exc:
            log.warning("plan for %s is unusable (%s); caching the fallback", rid, exc)
            fallback = single_query_plan(combined_query(record_query(record), record_options(record)))
            row["plan"] = plan_payload(fallback)
            row["fallback"] = True
        except FrameFuseError as exc:
            log.error("planner failed for %s: %s", rid, exc)
            failures += 1
            continue
        cache_rows[rid] = row

    write_jsonl(out_path, [cache_rows[rid] for rid in sorted(cache_rows)])
    click.echo(f"cached {len(cache_rows)} plan(s) at {out_path}; {failures} planner failure(s)")
    if failures and failures == len(records):
        sys.exit(EXIT_PARTIAL_FAILURES)


def _planner_service(synth_spec: Path | None, endpoint: str | None, model: str, preset_cache: dict) -> PlanService:
    if synth_spec is not None:
        instances = build_instances(load_synth_config(synth_spec))
        return PlanService(client=None, cache=dict(plan_preset(instances)))
    endpoint = endpoint or os.environ.get("RM_ENDPOINT")
    if endpoint is None:
        raise click.UsageError("no planner configured: pass --synth-spec or --endpoint / RM_ENDPOINT")
    config = ProviderConfig(backend=Backend.REMOTE, endpoint=endpoint, api_key=os.environ.get("RM_API_KEY"))
    return PlanService(client=HttpChatClient(config, model=model), cache=preset_cache)


@main.command("run")
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Questions (or captions) file; optional for the synthetic backend.")
@click.option("--captions", is_flag=True, help="Dataset is a captions file.")
@click.option("--backend", type=click.Choice([b.value for b in Backend]), default=Backend.SYNTHETIC.value, show_default=True)
@click.option("--root", type=click.Path(file_okay=False, path_type=Path), help="Data root for the file backend.")
@click.option("--endpoint", default=None, help="Scoring/chat endpoint for the remote backend.")
@click.option("--synth-spec", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Synthetic dataset spec.")
@click.option("--plans", "plans_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Plan cache file from 'plan'.")
@click.option("--k", default=8, show_default=True)
@click.option("--fps", default=2.0, show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in MergeMode]), default=MergeMode.RANK.value, show_default=True)
@click.option("--ocr/--no-ocr", default=True, show_default=True)
@click.option("--no-tren", is_flag=True, help="Drop region-matcher calls from parsed plans.")
@click.option("--single-call", is_flag=True, help="Force one-leaf plans (ablation).")
@click.option("--tau", default=None, type=float, help="Override the temporal gap in seconds.")
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--ks", default=",".join(str(k) for k in DEFAULT_KS), show_default=True)
@click.option("--judge", type=click.Choice(["keyword", "constant-true", "constant-false", "remote"]), default="keyword", show_default=True)
@click.option("--answerer", type=click.Choice(["none", "interval-oracle", "random", "remote"]), default="none", show_default=True)
@click.option("--baselines", is_flag=True, help="Also evaluate uniform, oracle, and single-query baselines.")
@click.option("--fail-threshold", default=0.0, show_default=True, help="Exit 1 when the failed fraction exceeds this.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def cmd_run(**kw):
    """Run the full pipeline over a dataset; write selections and a report."""
    try:
        _cmd_run(**kw)
    except (FrameFuseError, ValueError) as exc:
        raise click.UsageError(str(exc))


def _cmd_run(
    dataset, captions, backend, root, endpoint, synth_spec, plans_path,
    k, fps, mode, ocr, no_tren, single_call, tau, seed, workers, ks,
    judge, answerer, baselines, fail_threshold, out_dir,
):
    backend = Backend(backend)
    config = RunConfig(
        k=k,
        fps=fps,
        mode=MergeMode(mode),
        ocr=ocr,
        single_call=single_call,
        tau_override=tau,
        seed=seed,
        workers=workers,
        ks=_parse_ks(ks),
        drop_tools=frozenset({Tool.REGION_MATCHER}) if no_tren else frozenset(),
    )

    # Records
    if dataset is not None:
        records = _load_records(dataset, captions)
    elif backend is Backend.SYNTHETIC and synth_spec is not None:
        records = [inst.record for inst in build_instances(load_synth_config(synth_spec))]
    else:
        raise click.UsageError("--dataset is required (unless --backend synthetic with --synth-spec)")

    # Providers
    if plans_path is None:
        default_cache = _default_plan_cache()
        if default_cache is not None and default_cache.exists():
            plans_path = default_cache
    preset: dict[str, str] = {}
    if plans_path is not None:
        for line in plans_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                preset[row["question_id"]] = row["raw"]

    chat_client = None
    if endpoint or os.environ.get("RM_ENDPOINT"):
        provider_config = ProviderConfig(
            backend=backend,
            endpoint=endpoint or os.environ.get("RM_ENDPOINT"),
            api_key=os.environ.get("RM_API_KEY"),
        )
        if backend is Backend.REMOTE or judge == "remote" or answerer == "remote":
            chat_client = HttpChatClient(provider_config, model="default")

    if backend is Backend.SYNTHETIC:
        if synth_spec is None:
            raise click.UsageError("--backend synthetic requires --synth-spec")
        instances = build_instances(load_synth_config(synth_spec))
        scorer = provider_for(instances)
        ocr_source = scorer
        if not preset:
            preset = plan_preset(instances)
    elif backend is Backend.FILE:
        if root is None:
            raise click.UsageError("--backend file requires --root")
        provider = FileProvider(root)
        scorer = provider
        ocr_source = provider
    else:
        remote_config = config_from_env(Backend.REMOTE)
        if endpoint:
            remote_config = ProviderConfig(
                backend=Backend.REMOTE, endpoint=endpoint, api_key=os.environ.get("RM_API_KEY")
            )
        scorer = RemoteScorer(remote_config)
        ocr_source = None  # remote scoring has no OCR endpoint; use file inputs instead

    judge_client = {
        "keyword": KeywordJudge(),
        "constant-true": ConstantJudge(True),
        "constant-false": ConstantJudge(False),
        "remote": ChatJudge(chat_client) if chat_client else None,
    }[judge]
    if judge == "remote" and judge_client is None:
        raise click.UsageError("--judge remote requires an endpoint")

    answer_client = {
        "none": None,
        "interval-oracle": IntervalOracleAnswerer(),
        "random": RandomAnswerer(seed=seed),
        "remote": ChatAnswerer(chat_client) if chat_client else None,
    }[answerer]
    if answerer == "remote" and answer_client is None:
        raise click.UsageError("--answerer remote requires an endpoint")

    providers = ProviderBundle(
        scorer=scorer,
        planner=PlanService(client=chat_client, cache=preset),
        ocr_source=ocr_source,
        judge=judge_client,
    )

    report, selections = evaluate_dataset(
        records, lambda record: run_question(record, providers, config), config, answerer=answer_client
    )

    if baselines:
        reports = [report]
        for name, runner in _baseline_runners(config, scorer).items():
            base_config = replace(config, method_name=name)
            base_report, _ = evaluate_dataset(records, runner, base_config, answerer=answer_client)
            reports.append(base_report)
        report = merge_reports(reports)

    out_dir = Path(out_dir)
    rows = []
    for record in records:
        sel = selections.get(record_id(record))
        if sel is not None:
            rows.append((sel, config.k, config.tau_for(record.duration_s)))
    write_selections(out_dir / "selections.jsonl", rows)
    _atomic_write_text(out_dir / "report.json", report.to_canonical_json())
    _atomic_write_text(out_dir / "report.txt", report.render_table())
    click.echo(report.render_table())
    click.echo(f"report: {out_dir / 'report.json'}")

    failed = report.methods[config.method_name].failed
    if failed and failed / len(records) > fail_threshold:
        sys.exit(EXIT_PARTIAL_FAILURES)


def _baseline_runners(config: RunConfig, scorer):
    def uniform_runner(record):
        timeline = build_timeline(record.video_id, record.duration_s, config.fps)
        return uniform_baseline(timeline, config.k, question_id=record_id(record))

    def oracle_runner(record):
        timeline = build_timeline(record.video_id, record.duration_s, config.fps)
        return oracle_baseline(record.interval, timeline, config.k, question_id=record_id(record))

    def siglipq_runner(record):
        timeline = build_timeline(record.video_id, record.duration_s, config.fps)
        return siglipq_baseline(record, scorer, timeline, config.k, config.tau_for(record.duration_s))

    return {"uniform": uniform_runner, "oracle": oracle_runner, "siglipq": siglipq_runner}


@main.command("eval")
@click.option("--selections", "selections_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--captions", is_flag=True, help="Dataset is a captions file.")
@click.option("--ks", default=",".join(str(k) for k in DEFAULT_KS), show_default=True)
@click.option("--method-name", default="selections", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path))
def cmd_eval(selections_path: Path, dataset: Path, captions: bool, ks: str, method_name: str, out_path: Path | None):
    """Re-score existing selections against ground truth (no providers needed)."""
    k_list = _parse_ks(ks)
    records = _load_records(dataset, captions)
    by_id = {record_id(r): r for r in records}
    selections = read_selections(selections_path)

    unknown = sorted(set(selections) - set(by_id))
    if unknown:
        raise click.UsageError(f"selections reference unknown record ids: {', '.join(unknown)}")
    if not set(selections) & set(by_id):
        raise click.UsageError("no overlapping ids between selections and dataset")

    hit_counts = {k: 0 for k in k_list}
    for rid, record in by_id.items():
        entry = selections.get(rid)
        if entry is None:
            continue  # counted as a miss
        sel, _, _ = entry
        hits = hit_at_k(sel, record.interval, k_list)
        for k in k_list:
            hit_counts[k] += hits[k]

    n = len(by_id)
    result = MethodResult(
        hit_at_k={k: round(100.0 * hit_counts[k] / n, 1) for k in k_list},
        records=n,
        failed=n - len(selections),
    )
    report = RetrievalReport(
        methods={method_name: result},
        counts={"records": n},
        config={"ks": list(k_list), "source": selections_path.name},
    )
    click.echo(report.render_table())
    if out_path is not None:
        _atomic_write_text(out_path, report.to_canonical_json())
        click.echo(f"report: {out_path}")


if __name__ == "__main__":
    main()
