"""Frame grid construction, tau formula, and interval membership."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from framefuse.timeline import (
    EvidenceInterval,
    build_timeline,
    compute_tau,
    in_interval,
)


class TestBuildTimeline:
    def test_two_seconds_at_two_fps(self):
        t = build_timeline("v1", 2.0, 2.0)
        assert t.timestamps == (0.0, 0.5, 1.0, 1.5)

    def test_single_frame_edge(self):
        t = build_timeline("v2", 1.0, 1.0)
        assert t.timestamps == (0.0,)

    def test_count_by_formula(self):
        t = build_timeline("v3", 600.0, 2.0)
        assert len(t) == 1200
        assert t.timestamps[-1] == pytest.approx(599.5)

    def test_fractional_duration_floors(self):
        t = build_timeline("v", 2.3, 2.0)  # 4.6 frames
        assert len(t) == 4

    def test_sub_frame_video_keeps_frame_zero(self):
        t = build_timeline("v", 0.3, 2.0)
        assert t.timestamps == (0.0,)

    @pytest.mark.parametrize("duration,fps", [(0.0, 2.0), (-1.0, 2.0), (10.0, 0.0), (10.0, -2.0)])
    def test_invalid_arguments(self, duration, fps):
        with pytest.raises(ValueError):
            build_timeline("v", duration, fps)

    @given(
        duration=st.floats(min_value=0.5, max_value=5000.0),
        fps=st.sampled_from([0.5, 1.0, 2.0, 5.0]),
    )
    def test_grid_invariants(self, duration, fps):
        t = build_timeline("v", duration, fps)
        assert len(t.timestamps) >= 1
        assert t.timestamps[0] >= 0.0
        assert t.timestamps[-1] <= duration
        diffs = [b - a for a, b in zip(t.timestamps, t.timestamps[1:])]
        assert all(abs(d - 1.0 / fps) <= 1e-6 for d in diffs)
        exact = duration * fps
        if abs(exact - round(exact)) > 1e-6 and math.floor(exact) >= 1:
            assert len(t) == math.floor(exact)

    def test_index_near_snaps_and_clamps(self):
        t = build_timeline("v", 10.0, 2.0)
        assert t.index_near(0.0) == 0
        assert t.index_near(3.5) == 7
        assert t.index_near(99.0) == len(t) - 1
        assert t.index_near(-5.0) == 0


class TestComputeTau:
    def test_long_video_capped(self):
        assert compute_tau(600, 8) == 10

    def test_short_video_scales(self):
        assert compute_tau(80, 8) == 5

    def test_boundary_exact(self):
        assert compute_tau(160, 8) == 10

    def test_zero_k_rejected(self):
        with pytest.raises(ValueError):
            compute_tau(600, 0)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError):
            compute_tau(0, 8)

    @given(
        duration=st.floats(min_value=1e-3, max_value=1e6),
        k=st.integers(min_value=1, max_value=128),
    )
    def test_cap_and_monotonicity(self, duration, k):
        tau = compute_tau(duration, k)
        assert 0 < tau <= 10
        assert compute_tau(duration, k + 1) <= tau
        if tau < 10:
            assert compute_tau(duration * 1.5, k) >= tau


class TestInInterval:
    def test_inside(self):
        assert in_interval(5.0, EvidenceInterval(3, 8))

    def test_closed_boundaries(self):
        assert in_interval(3.0, EvidenceInterval(3, 8))
        assert in_interval(8.0, EvidenceInterval(3, 8))

    def test_outside(self):
        assert not in_interval(8.5, EvidenceInterval(3, 8))

    @given(
        t=st.floats(min_value=0, max_value=100),
        start=st.floats(min_value=0, max_value=49),
        pad=st.floats(min_value=0, max_value=20),
        length=st.floats(min_value=0.1, max_value=50),
    )
    def test_membership_monotone_under_containment(self, t, start, pad, length):
        inner = EvidenceInterval(start + pad, start + pad + length)
        outer = EvidenceInterval(start, start + pad + length + pad + 0.1)
        if in_interval(t, inner):
            assert in_interval(t, outer)

    def test_degenerate_interval_rejected(self):
        with pytest.raises(ValueError):
            EvidenceInterval(5, 5)
        with pytest.raises(ValueError):
            EvidenceInterval(-1, 5)
