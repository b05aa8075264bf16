"""Metrics, baselines, the end-to-end pipeline, and report aggregation."""

import json
import random

import numpy as np
import pytest

from framefuse.errors import RunError, StageError
from framefuse.eval import (
    CaptionRecord,
    ProviderBundle,
    QuestionRecord,
    RunConfig,
    combined_query,
    evaluate_dataset,
    hit_at_k,
    merge_reports,
    normalized_recall,
    oracle_baseline,
    read_captions,
    read_questions,
    read_selections,
    run_question,
    siglipq_baseline,
    uniform_baseline,
    write_captions,
    write_questions,
    write_selections,
)
from framefuse.merge import MergeMode
from framefuse.plan import Tool
from framefuse.providers import (
    IntervalOracleAnswerer,
    KeywordJudge,
    PlanService,
    RandomAnswerer,
    StaticChatClient,
)
from framefuse.select import SelectionResult, max_capacity
from framefuse.synth import SynthCall, SynthDatasetConfig, build_instances, plan_preset, provider_for
from framefuse.timeline import EvidenceInterval, build_timeline, compute_tau, in_interval
from oracles import hit_oracle


def _selection(picks, question_id="q"):
    return SelectionResult(
        question_id=question_id,
        timestamps=tuple(sorted(picks)),
        selection_order=tuple(picks),
    )


def _dataset(videos=5, sigma=0.0, seed=100, combine="Q1 AND Q2", n_calls=2, ocr_text=None, duration=600.0):
    tools = [Tool.SCENE_MATCHER, Tool.REGION_MATCHER]
    cfg = SynthDatasetConfig(
        seed=seed,
        videos=videos,
        duration_s=duration,
        fps=2.0,
        interval_len_s=15.0,
        calls=tuple(SynthCall(f"Q{i+1}", tools[i % 2], 1.0) for i in range(n_calls)),
        combine=combine,
        noise_sigma=sigma,
        ocr_text=ocr_text,
    )
    return cfg, build_instances(cfg)


def _bundle(instances, judge=None):
    provider = provider_for(instances)
    return ProviderBundle(
        scorer=provider,
        planner=PlanService(cache=plan_preset(instances)),
        ocr_source=provider,
        judge=judge,
    )


class TestHitAtK:
    def test_pick_order_prefix(self):
        sel = _selection([50.0, 9.0, 200.0])
        hits = hit_at_k(sel, EvidenceInterval(8, 12), ks=(1, 2))
        assert hits == {1: False, 2: True}

    def test_empty_selection_misses(self):
        sel = _selection([])
        assert hit_at_k(sel, EvidenceInterval(8, 12), ks=(1, 8)) == {1: False, 8: False}

    def test_monotone_in_k(self):
        rng = random.Random(0)
        for _ in range(100):
            picks = rng.sample([float(t) for t in range(300)], 8)
            sel = _selection(picks)
            start = rng.uniform(0, 280)
            hits = hit_at_k(sel, EvidenceInterval(start, start + 15), ks=(1, 2, 4, 8))
            values = [hits[k] for k in (1, 2, 4, 8)]
            assert values == sorted(values)

    def test_matches_membership_oracle(self):
        rng = random.Random(500)
        for _ in range(500):
            n = rng.randint(0, 8)
            picks = rng.sample([float(t) for t in range(400)], n)
            start = rng.uniform(0, 380)
            interval = EvidenceInterval(start, start + rng.uniform(1, 20))
            sel = _selection(picks)
            hits = hit_at_k(sel, interval, ks=(1, 2, 4, 8))
            for k in (1, 2, 4, 8):
                assert hits[k] == hit_oracle(picks, interval.start_s, interval.end_s, k)


class TestNormalizedRecall:
    def test_full_capacity(self):
        sel = _selection([20.0, 31.0, 100.0, 200.0, 300.0, 400.0, 500.0, 550.0])
        # interval [18, 33] holds capacity min(8, floor(15/10)+1) = 2; both 20 and 31 inside
        assert normalized_recall(sel, EvidenceInterval(18, 33), tau=10.0, k=8) == 1.0

    def test_zero_when_nothing_inside(self):
        sel = _selection([100.0, 200.0])
        assert normalized_recall(sel, EvidenceInterval(18, 33), tau=10.0, k=8) == 0.0

    def test_bounded_in_unit_interval(self):
        rng = random.Random(12)
        timeline = build_timeline("v", 600.0, 2.0)
        for _ in range(200):
            start = rng.uniform(0, 580)
            interval = EvidenceInterval(start, start + rng.uniform(1, 20))
            k = rng.randint(1, 8)
            tau = rng.choice([2.0, 5.0, 10.0])
            order = list(range(len(timeline)))
            rng.shuffle(order)
            from framefuse.merge import finalize_ranking
            from framefuse.select import greedy_nms

            values = np.empty(len(order))
            for pos, idx in enumerate(order):
                values[idx] = pos
            sel = greedy_nms(finalize_ranking(values, MergeMode.RANK), timeline, k, tau)
            r = normalized_recall(sel, interval, tau, k)
            assert 0.0 <= r <= 1.0
            inside = sum(1 for t in sel.timestamps if in_interval(t, interval))
            assert (r == 1.0) == (inside == max_capacity(interval, tau, k))


class TestUniformBaseline:
    def test_midpoint_rule(self):
        timeline = build_timeline("v", 80.0, 1.0)
        sel = uniform_baseline(timeline, 8)
        assert sel.timestamps == (5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0, 75.0)

    def test_budget_above_frame_count_returns_all(self):
        timeline = build_timeline("v", 4.0, 1.0)
        sel = uniform_baseline(timeline, 16)
        assert sel.timestamps == timeline.timestamps

    def test_small_grid_dedup(self):
        timeline = build_timeline("v", 2.0, 2.0)
        sel = uniform_baseline(timeline, 4)
        assert sel.timestamps == (0.0, 0.5, 1.0, 1.5)


class TestOracleBaseline:
    def test_always_hits_at_one(self):
        rng = random.Random(9)
        timeline = build_timeline("v", 600.0, 2.0)
        for _ in range(100):
            start = rng.uniform(0, 580)
            interval = EvidenceInterval(start, start + rng.uniform(1, 20))
            sel = oracle_baseline(interval, timeline, 8)
            assert hit_at_k(sel, interval, ks=(1,))[1]
            assert all(in_interval(t, interval) for t in sel.timestamps)

    def test_single_grid_frame_interval(self):
        timeline = build_timeline("v", 100.0, 1.0)
        sel = oracle_baseline(EvidenceInterval(49.9, 50.1), timeline, 8)
        assert sel.timestamps == (50.0,)


class TestSiglipQBaseline:
    def test_identical_to_one_leaf_pipeline(self):
        _, instances = _dataset(videos=3, sigma=2.0, seed=321)
        bundle = _bundle(instances)
        config = RunConfig(k=8, fps=2.0, ocr=False, single_call=True)
        for inst in instances:
            record = inst.record
            timeline = build_timeline(record.video_id, record.duration_s, config.fps)
            tau = compute_tau(record.duration_s, config.k)
            base = siglipq_baseline(record, bundle.scorer, timeline, config.k, tau)
            pipeline = run_question(record, bundle, config)
            assert pipeline.selection_order == base.selection_order
            assert pipeline.timestamps == base.timestamps

    def test_hit_equality_over_100_seeds(self):
        _, instances = _dataset(videos=100, sigma=2.0, seed=7000)
        bundle = _bundle(instances)
        config = RunConfig(k=8, fps=2.0, ocr=False, single_call=True)
        base_hits = 0
        pipe_hits = 0
        for inst in instances:
            record = inst.record
            timeline = build_timeline(record.video_id, record.duration_s, config.fps)
            tau = compute_tau(record.duration_s, config.k)
            base = siglipq_baseline(record, bundle.scorer, timeline, config.k, tau)
            pipeline = run_question(record, bundle, config)
            base_hits += hit_at_k(base, record.interval, (8,))[8]
            pipe_hits += hit_at_k(pipeline, record.interval, (8,))[8]
        assert base_hits == pipe_hits


class TestRunQuestion:
    def test_noiseless_and_plan_selects_inside_interval(self):
        _, instances = _dataset(videos=3, sigma=0.0)
        bundle = _bundle(instances)
        config = RunConfig(k=8, fps=2.0, ocr=False)
        for inst in instances:
            sel = run_question(inst.record, bundle, config)
            capacity = max_capacity(inst.record.interval, compute_tau(600.0, 8), 8)
            inside = [t for t in sel.selection_order[:capacity] if in_interval(t, inst.record.interval)]
            assert len(inside) == capacity

    def test_garbage_planner_falls_back(self):
        _, instances = _dataset(videos=1, sigma=1.0)
        provider = provider_for(instances)
        bundle = ProviderBundle(
            scorer=provider,
            planner=PlanService(client=StaticChatClient("no json here at all")),
        )
        sel = run_question(instances[0].record, bundle, RunConfig(ocr=False))
        assert len(sel) > 0

    def test_ocr_only_plan_injects_over_temporal_order(self):
        cfg, instances = _dataset(videos=1, sigma=0.0, ocr_text="GOAL")
        inst = instances[0]
        ocr_only_raw = '{"queries": []}'
        provider = provider_for(instances)
        bundle = ProviderBundle(
            scorer=provider,
            planner=PlanService(cache={inst.record.question_id: ocr_only_raw}),
            ocr_source=provider,
            judge=KeywordJudge(),
        )
        sel = run_question(inst.record, bundle, RunConfig(k=4, fps=2.0, ocr=True))
        # First pick is the injected mid-interval OCR frame, rest temporal.
        assert in_interval(sel.selection_order[0], inst.record.interval)

    def test_raw_mode_runs_and_differs_sensibly(self):
        _, instances = _dataset(videos=2, sigma=1.5, seed=888)
        bundle = _bundle(instances)
        sel_rank = run_question(instances[0].record, bundle, RunConfig(ocr=False, mode=MergeMode.RANK))
        sel_raw = run_question(instances[0].record, bundle, RunConfig(ocr=False, mode=MergeMode.RAW))
        assert len(sel_rank) == len(sel_raw) == 8

    def test_caption_records_run(self):
        _, instances = _dataset(videos=1, sigma=0.5)
        inst = instances[0]
        caption = CaptionRecord(
            caption_id="c1",
            video_id=inst.record.video_id,
            duration_s=inst.record.duration_s,
            caption="the marker clip",
            interval=inst.record.interval,
        )
        provider = provider_for(instances)
        bundle = ProviderBundle(
            scorer=provider,
            planner=PlanService(cache={"c1": inst.raw_plan}),
        )
        sel = run_question(caption, bundle, RunConfig(ocr=False))
        assert sel.question_id == "c1"
        assert len(sel) > 0

    def test_tau_override(self):
        _, instances = _dataset(videos=1, sigma=0.0)
        bundle = _bundle(instances)
        sel = run_question(instances[0].record, bundle, RunConfig(ocr=False, tau_override=2.0))
        stamps = sel.timestamps
        assert all(b - a >= 2.0 - 1e-6 for a, b in zip(stamps, stamps[1:]))

    def test_short_selection_padding_is_opt_in(self):
        # 20 s video with tau forced to its full length: NMS keeps 1 frame.
        _, instances = _dataset(videos=1, sigma=0.0, duration=20.0)
        bundle = _bundle(instances)
        short = run_question(
            instances[0].record, bundle, RunConfig(ocr=False, k=8, tau_override=25.0)
        )
        assert len(short) == 1
        padded = run_question(
            instances[0].record,
            bundle,
            RunConfig(ocr=False, k=8, tau_override=25.0, pad_short_selections=True),
        )
        assert len(padded) == 8
        assert padded.selection_order[0] == short.selection_order[0]

    def test_stage_error_carries_tag(self):
        class BoomScorer:
            def score(self, *a, **kw):
                raise RuntimeError("gpu on fire")

        _, instances = _dataset(videos=1)
        bundle = ProviderBundle(scorer=BoomScorer(), planner=PlanService(cache=plan_preset(instances)))
        with pytest.raises(StageError) as exc_info:
            run_question(instances[0].record, bundle, RunConfig(ocr=False))
        assert exc_info.value.stage == "score"


class TestEvaluateDataset:
    def test_fraction_aggregation(self):
        _, instances = _dataset(videos=4, sigma=0.0)
        records = [inst.record for inst in instances]
        hits = {records[i].question_id: i != 0 for i in range(4)}

        def runner(record):
            if hits[record.question_id]:
                mid = (record.interval.start_s + record.interval.end_s) / 2
                return _selection([mid], record.question_id)
            return _selection([0.0], record.question_id)

        report, _ = evaluate_dataset(records, runner, RunConfig(ks=(8,), method_name="m"))
        assert report.methods["m"].hit_at_k[8] == 75.0

    def test_oracle_runner_hits_everything(self):
        _, instances = _dataset(videos=5, sigma=0.0)
        records = [inst.record for inst in instances]
        config = RunConfig(ks=(1, 8), method_name="oracle")

        def runner(record):
            timeline = build_timeline(record.video_id, record.duration_s, config.fps)
            return oracle_baseline(record.interval, timeline, config.k, record.question_id)

        report, _ = evaluate_dataset(records, runner, config)
        assert report.methods["oracle"].hit_at_k[1] == 100.0

    def test_uniform_matches_per_instance_analytic_coverage(self):
        _, instances = _dataset(videos=200, sigma=0.0, seed=4000)
        records = [inst.record for inst in instances]
        config = RunConfig(ks=(8,), method_name="uniform")

        def runner(record):
            timeline = build_timeline(record.video_id, record.duration_s, config.fps)
            return uniform_baseline(timeline, config.k, record.question_id)

        report, _ = evaluate_dataset(records, runner, config)
        # Midpoints sit at 37.5 + 75 i; coverage per instance is direct membership.
        midpoints = [(i + 0.5) * 600.0 / 8 for i in range(8)]
        expected = [
            any(in_interval(m, r.interval) for m in midpoints) for r in records
        ]
        expected_rate = round(100.0 * sum(expected) / len(expected), 1)
        assert report.methods["uniform"].hit_at_k[8] == expected_rate
        # And the rate is near the analytic 15/75 = 20% coverage probability.
        assert abs(expected_rate - 20.0) < 5.0

    def test_failures_count_as_misses_and_are_reported(self):
        _, instances = _dataset(videos=4, sigma=0.0)
        records = [inst.record for inst in instances]
        bad = records[0].question_id

        def runner(record):
            if record.question_id == bad:
                raise StageError("score", RuntimeError("missing file"))
            mid = (record.interval.start_s + record.interval.end_s) / 2
            return _selection([mid], record.question_id)

        report, selections = evaluate_dataset(records, runner, RunConfig(ks=(1,), method_name="m"))
        assert report.methods["m"].failed == 1
        assert bad not in selections
        assert report.methods["m"].hit_at_k[1] == 75.0

    def test_all_failed_raises_run_error(self):
        _, instances = _dataset(videos=2)
        records = [inst.record for inst in instances]

        def runner(record):
            raise StageError("plan", RuntimeError("nope"))

        with pytest.raises(RunError):
            evaluate_dataset(records, runner, RunConfig())

    def test_qa_accuracy_with_interval_oracle(self):
        _, instances = _dataset(videos=5, sigma=0.0)
        records = [inst.record for inst in instances]
        bundle = _bundle(instances)
        config = RunConfig(ks=(8,), ocr=False)
        report, _ = evaluate_dataset(
            records,
            lambda r: run_question(r, bundle, config),
            config,
            answerer=IntervalOracleAnswerer(),
        )
        assert report.methods["framefuse"].qa_accuracy == 100.0

    def test_random_answerer_near_chance(self):
        _, instances = _dataset(videos=40, sigma=0.0, seed=2222)
        records = [inst.record for inst in instances]
        config = RunConfig(ks=(1,), method_name="m")

        def runner(record):
            return _selection([0.0], record.question_id)

        report, _ = evaluate_dataset(records, runner, config, answerer=RandomAnswerer(seed=5))
        assert 0.0 <= report.methods["m"].qa_accuracy <= 60.0

    def test_workers_do_not_change_results(self):
        _, instances = _dataset(videos=8, sigma=1.0, seed=505)
        records = [inst.record for inst in instances]
        bundle = _bundle(instances)
        serial, _ = evaluate_dataset(
            records, lambda r: run_question(r, bundle, RunConfig(ocr=False)), RunConfig(ocr=False)
        )
        parallel, _ = evaluate_dataset(
            records,
            lambda r: run_question(r, bundle, RunConfig(ocr=False, workers=4)),
            RunConfig(ocr=False, workers=4),
        )
        assert serial.methods["framefuse"].hit_at_k == parallel.methods["framefuse"].hit_at_k


class TestReports:
    def test_canonical_json_is_deterministic(self):
        _, instances = _dataset(videos=3, sigma=1.0, seed=99)
        records = [inst.record for inst in instances]
        bundle = _bundle(instances)
        config = RunConfig(ocr=False)
        a, _ = evaluate_dataset(records, lambda r: run_question(r, bundle, config), config)
        b, _ = evaluate_dataset(records, lambda r: run_question(r, bundle, config), config)
        assert a.to_canonical_json() == b.to_canonical_json()

    def test_hit_rates_monotone_in_report(self):
        _, instances = _dataset(videos=10, sigma=2.0, seed=3030)
        records = [inst.record for inst in instances]
        bundle = _bundle(instances)
        config = RunConfig(ocr=False)
        report, _ = evaluate_dataset(records, lambda r: run_question(r, bundle, config), config)
        rates = [report.methods["framefuse"].hit_at_k[k] for k in config.ks]
        assert rates == sorted(rates)

    def test_merge_reports_combines_methods(self):
        _, instances = _dataset(videos=2, sigma=0.0)
        records = [inst.record for inst in instances]
        config_a = RunConfig(ks=(1,), method_name="a")
        config_b = RunConfig(ks=(1,), method_name="b")

        def runner(record):
            return _selection([0.0], record.question_id)

        ra, _ = evaluate_dataset(records, runner, config_a)
        rb, _ = evaluate_dataset(records, runner, config_b)
        merged = merge_reports([ra, rb])
        assert set(merged.methods) == {"a", "b"}
        with pytest.raises(ValueError):
            merge_reports([ra, ra])

    def test_table_rendering_shows_columns(self):
        _, instances = _dataset(videos=2, sigma=0.0)
        records = [inst.record for inst in instances]
        report, _ = evaluate_dataset(
            records, lambda r: _selection([0.0], r.question_id), RunConfig(ks=(1, 2, 4, 8, 16, 32))
        )
        table = report.render_table()
        for k in (1, 2, 4, 8, 16, 32):
            assert f"HIT@{k}" in table


class TestRecordIO:
    def test_questions_round_trip(self, tmp_path):
        _, instances = _dataset(videos=3, sigma=0.0)
        records = [inst.record for inst in instances]
        path = tmp_path / "questions.jsonl"
        write_questions(path, records)
        assert read_questions(path) == records

    def test_captions_round_trip(self, tmp_path):
        captions = [
            CaptionRecord("c1", "v1", 120.0, "a man builds a chair", EvidenceInterval(10, 25)),
            CaptionRecord("c2", "v2", 300.0, "sunset over the bay", EvidenceInterval(200, 220)),
        ]
        path = tmp_path / "captions.jsonl"
        write_captions(path, captions)
        assert read_captions(path) == captions

    def test_selections_round_trip(self, tmp_path):
        rows = [
            (_selection([5.0, 1.0], "q1"), 8, 10.0),
            (_selection([2.0], "q2"), 8, 5.0),
        ]
        path = tmp_path / "selections.jsonl"
        write_selections(path, rows)
        got = read_selections(path)
        assert got["q1"][0].selection_order == (5.0, 1.0)
        assert got["q1"][1:] == (8, 10.0)
        assert got["q2"][0].timestamps == (2.0,)

    def test_invalid_record_validation(self):
        with pytest.raises(ValueError):
            QuestionRecord("q", "v", 10.0, "?", ("a",) * 5, "F", EvidenceInterval(1, 2))
        with pytest.raises(ValueError):
            QuestionRecord("q", "v", 10.0, "?", ("a",) * 4, "A", EvidenceInterval(1, 2))
        with pytest.raises(ValueError):
            QuestionRecord("q", "v", 10.0, "?", ("a",) * 5, "A", EvidenceInterval(1, 22))

    def test_combined_query_shape(self):
        q = combined_query("Where?", ("x", "y", "z", "w", "v"))
        assert q == "Where? A) x B) y C) z D) w E) v"
        assert combined_query("caption text", ()) == "caption text"
