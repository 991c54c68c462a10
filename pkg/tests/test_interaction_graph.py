import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vesseldiff.ais_data import Journey
from vesseldiff.interaction_graph import aggregate, find_neighbors

STEP = 600


def track(journey_id, start_idx, n, lat0, lon0, dlat=0.001, dlon=0.001):
    times = (np.arange(n) + start_idx) * STEP
    return Journey(
        journey_id=journey_id,
        mmsi=219000000,
        times=times.astype(np.int64),
        lat=lat0 + np.arange(n) * dlat,
        lon=lon0 + np.arange(n) * dlon,
        rate_minutes=10.0,
    )


class TestFindNeighbors:
    def test_empty_scene(self):
        target = track("t:0", 0, 12, 0.5, 0.5)
        ns = find_neighbors(target, [], anchor_time=7 * STEP, threshold=0.05, history_len=8)
        assert ns.neighbor_histories == []

    def test_distance_exactly_threshold_included(self):
        # binary-exact offset: 0.0625 away with threshold 0.0625 -> included
        target = track("t:0", 0, 12, 0.5, 0.5, dlat=0.0, dlon=0.0)
        other = track("o:0", 0, 12, 0.5, 0.5625, dlat=0.0, dlon=0.0)
        ns = find_neighbors(target, [other], 7 * STEP, threshold=0.0625, history_len=8)
        assert len(ns.neighbor_histories) == 1

    def test_three_vessels_two_within(self):
        thr = 0.0625
        target = track("t:0", 0, 12, 0.5, 0.5, dlat=0.0, dlon=0.0)
        others = [
            track("a:0", 0, 12, 0.5, 0.5 + 0.5 * thr, dlat=0.0, dlon=0.0),
            track("b:0", 0, 12, 0.5, 0.5 + 1.5 * thr, dlat=0.0, dlon=0.0),
            track("c:0", 0, 12, 0.5, 0.5 + 0.9 * thr, dlat=0.0, dlon=0.0),
        ]
        ns = find_neighbors(target, others, 7 * STEP, thr, history_len=8)
        assert len(ns.neighbor_histories) == 2

    def test_target_excluded_from_own_set(self):
        target = track("t:0", 0, 12, 0.5, 0.5)
        ns = find_neighbors(target, [target], 7 * STEP, threshold=1.0, history_len=8)
        assert ns.neighbor_histories == []

    def test_partial_history_zero_padded_at_front(self):
        target = track("t:0", 0, 12, 0.5, 0.5)
        late = track("o:0", 5, 7, 0.5, 0.5)  # starts at index 5, present at anchor 7
        ns = find_neighbors(target, [late], 7 * STEP, threshold=1.0, history_len=8)
        hist = ns.neighbor_histories[0]
        assert hist.shape == (8, 2)
        np.testing.assert_array_equal(hist[:5], 0.0)
        assert (hist[5:] != 0.0).all()

    def test_absent_at_anchor_excluded(self):
        target = track("t:0", 0, 20, 0.5, 0.5)
        gone = track("o:0", 0, 5, 0.5, 0.5)  # ends before the anchor
        ns = find_neighbors(target, [gone], 10 * STEP, threshold=1.0, history_len=8)
        assert ns.neighbor_histories == []

    def test_distance_symmetry(self):
        a = track("a:0", 0, 12, 0.50, 0.50, dlat=0.0, dlon=0.0)
        b = track("b:0", 0, 12, 0.52, 0.53, dlat=0.0, dlon=0.0)
        t = 7 * STEP
        ab = find_neighbors(a, [b], t, 0.05, 8)
        ba = find_neighbors(b, [a], t, 0.05, 8)
        assert bool(ab.neighbor_histories) == bool(ba.neighbor_histories)

    def test_off_grid_anchor_rejected(self):
        target = track("t:0", 0, 12, 0.5, 0.5)
        with pytest.raises(ValueError):
            find_neighbors(target, [], anchor_time=7 * STEP + 1, threshold=0.05, history_len=8)


class TestAggregate:
    def test_empty_sum_is_zero(self):
        out = aggregate([], history_len=8)
        np.testing.assert_array_equal(out, np.zeros((8, 2)))

    def test_singleton_identity(self):
        h = np.random.default_rng(0).uniform(size=(8, 2))
        np.testing.assert_array_equal(aggregate([h], 8), h)

    def test_doubling(self):
        h = np.random.default_rng(1).uniform(size=(8, 2))
        np.testing.assert_allclose(aggregate([h, h], 8), 2 * h, atol=1e-15)

    def test_shape_mismatch_fatal(self):
        with pytest.raises(ValueError):
            aggregate([np.zeros((7, 2))], history_len=8)

    @given(st.integers(min_value=0, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        hists = [rng.uniform(size=(8, 2)) for _ in range(n)]
        perm = list(rng.permutation(n))
        a = aggregate(hists, 8)
        b = aggregate([hists[i] for i in perm], 8)
        np.testing.assert_allclose(a, b, atol=1e-12)

    @given(st.integers(min_value=0, max_value=4), st.integers(min_value=0, max_value=4))
    @settings(max_examples=30, deadline=None)
    def test_disjoint_additivity(self, n1, n2):
        rng = np.random.default_rng(n1 * 17 + n2)
        group_a = [rng.uniform(size=(8, 2)) for _ in range(n1)]
        group_b = [rng.uniform(size=(8, 2)) for _ in range(n2)]
        np.testing.assert_allclose(
            aggregate(group_a + group_b, 8),
            aggregate(group_a, 8) + aggregate(group_b, 8),
            atol=1e-12,
        )
