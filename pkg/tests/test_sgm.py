import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgm_oracle import best_prefix_energy
from stereosim.census import CostVolume
from stereosim.core import DisparityMap, ValidationError
from stereosim.sgm import (
    PATHS_8,
    AggregatedVolume,
    SgmParams,
    aggregate,
    aggregate_path,
    parabola_offset,
    right_disparity_from_volume,
    subpixel_refine,
    wta_disparity,
)


def volume(costs, max_cost=None):
    costs = np.asarray(costs)
    return CostVolume(costs, int(costs.max()) + 1 if max_cost is None else max_cost)


def restore(path_costs):
    """Undo the running-minimum subtraction along a path (W, D)."""
    mins = np.concatenate([[0], np.cumsum(path_costs.min(axis=1))[:-1]])
    return path_costs + mins[:, None]


class TestAggregateOracle:
    @pytest.mark.parametrize("seed", range(10))
    def test_left_to_right_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        costs = rng.integers(0, 32, (1, 6, 5))
        p = SgmParams(p1=int(rng.integers(1, 10)), p2=int(rng.integers(10, 40)))
        lr = aggregate_path(volume(costs), (1, 0), p)[0]
        assert np.array_equal(restore(lr), best_prefix_energy(costs[0], p.p1, p.p2))

    @pytest.mark.parametrize("direction", [(-1, 0), (0, 1), (0, -1)])
    def test_other_axis_paths(self, direction, rng):
        row = rng.integers(0, 20, (6, 4))
        p = SgmParams(p1=3, p2=11)
        if direction[1] == 0:
            vol = row[None]
            path = aggregate_path(volume(vol), direction, p)[0]
        else:
            vol = row[:, None, :]
            path = aggregate_path(volume(vol), direction, p)[:, 0]
        order = slice(None, None, -1) if -1 in direction else slice(None)
        expected = best_prefix_energy(row[order], p.p1, p.p2)
        assert np.array_equal(restore(path[order]), expected)

    def test_diagonal_path_follows_diagonal(self, rng):
        costs = rng.integers(0, 20, (5, 5, 3))
        p = SgmParams(p1=2, p2=7)
        path = aggregate_path(volume(costs), (1, 1), p)
        diag = costs[np.arange(5), np.arange(5)]
        got = path[np.arange(5), np.arange(5)]
        assert np.array_equal(restore(got), best_prefix_energy(diag, p.p1, p.p2))

    def test_full_row_energy_is_global_minimum(self, rng):
        costs = rng.integers(0, 16, (6, 4))
        p = SgmParams(p1=2, p2=9)
        e = best_prefix_energy(costs, p.p1, p.p2)
        lr = restore(aggregate_path(volume(costs[None]), (1, 0), p)[0])
        assert lr[-1].min() == e[-1].min()


class TestAggregate:
    def test_zero_penalties_scale_raw(self, rng):
        costs = rng.integers(0, 32, (7, 9, 5))
        for paths in (4, 8):
            agg = aggregate(volume(costs), SgmParams(0, 0, paths))
            assert np.array_equal(agg.values, paths * costs)

    def test_constant_volume_full_tie(self):
        agg = aggregate(volume(np.full((6, 7, 5), 9)), SgmParams())
        v = agg.values
        assert np.all(v == v[..., :1])

    def test_aggregated_at_least_raw(self, rng):
        costs = rng.integers(0, 32, (8, 10, 6))
        agg = aggregate(volume(costs))
        assert np.all(agg.values >= costs)

    def test_path_order_irrelevant(self, rng):
        costs = volume(rng.integers(0, 32, (9, 11, 6)))
        p = SgmParams()
        fwd = sum(aggregate_path(costs, d, p) for d in PATHS_8)
        rev = sum(aggregate_path(costs, d, p) for d in reversed(PATHS_8))
        assert np.array_equal(fwd, rev)
        assert np.array_equal(aggregate(costs, p).values, fwd)

    def test_per_path_bound(self, rng):
        costs = rng.integers(0, 32, (12, 12, 8))
        costs[rng.random(costs.shape) < 0.2] = 32
        p = SgmParams(8, 96)
        for d in PATHS_8:
            path = aggregate_path(volume(costs, 32), d, p)
            assert path.max() <= 32 + 96 + 32

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            SgmParams(p1=10, p2=5)
        with pytest.raises(ValidationError):
            SgmParams(paths=6)
        with pytest.raises(ValidationError):
            SgmParams(uniqueness_ratio=1.0)


class TestWta:
    def test_unique_zero(self):
        v = np.full((3, 4, 10), 50)
        v[..., 7] = 0
        d = wta_disparity(AggregatedVolume.from_array(v))
        assert d.mask.all() and np.all(d.values == 7)

    def test_two_equal_minima_invalid(self):
        v = np.full((2, 2, 12), 50)
        v[..., 3] = 5
        v[..., 9] = 5
        d = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=0.15))
        assert not d.mask.any()

    def test_ratio_zero_never_invalidates(self, rng):
        v = rng.integers(0, 1000, (6, 6, 9))
        d = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=0.0))
        assert d.mask.all()
        assert np.array_equal(d.values, np.argmin(v, axis=-1))

    def test_lowest_index_on_ties(self):
        v = np.full((1, 1, 6), 10)
        v[0, 0, [2, 3]] = 1
        d = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=0.1))
        assert d.values[0, 0] == 2 and d.mask[0, 0]

    def test_neighbours_excluded_from_uniqueness(self):
        v = np.full((1, 1, 8), 100)
        v[0, 0, 4] = 10
        v[0, 0, 5] = 10.5
        d = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=0.5))
        assert d.mask[0, 0]

    @given(st.integers(0, 2**31 - 1), st.floats(0, 0.98), st.floats(0, 0.98))
    @settings(max_examples=100, deadline=None)
    def test_uniqueness_monotone(self, seed, r1, r2):
        lo, hi = sorted((r1, r2))
        v = np.random.default_rng(seed).integers(0, 60, (5, 5, 8))
        a = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=lo))
        b = wta_disparity(AggregatedVolume.from_array(v), SgmParams(uniqueness_ratio=hi))
        assert not np.any(b.mask & ~a.mask)

    def test_undefined_left_pixels_invalid(self, rng):
        v = rng.integers(0, 50, (3, 3, 4)).astype(np.int32)
        ldef = np.ones((3, 3), bool)
        ldef[1, 1] = False
        d = wta_disparity(AggregatedVolume(v, ldef, np.ones((3, 3), bool)), SgmParams(uniqueness_ratio=0))
        assert not d.mask[1, 1] and d.mask.sum() == 8

    def test_zero_penalty_pipeline_equals_raw_wta(self, rng):
        costs = rng.integers(0, 32, (8, 9, 6))
        p = SgmParams(0, 0, 8, 0.0)
        d = wta_disparity(aggregate(volume(costs), p), p)
        assert np.array_equal(d.values, np.argmin(costs, axis=-1))


class TestSubpixel:
    @pytest.mark.parametrize(
        "c, expected", [((4, 1, 4), 0.0), ((2, 1, 4), -0.25), ((3, 3, 3), 0.0), ((5, 2, 3), 0.25), ((1, 1, 4), -0.5 + 1e-9)]
    )
    def test_offsets(self, c, expected):
        assert parabola_offset(*c) == pytest.approx(expected)
        v = np.full((1, 1, 5), 100)
        v[0, 0, 1:4] = c
        agg = AggregatedVolume.from_array(v)
        d = subpixel_refine(agg, DisparityMap(np.array([[2.0]])))
        assert d.values[0, 0] == pytest.approx(2 + expected)

    def test_boundary_left_unchanged(self):
        v = np.arange(5)[None, None, :] * np.ones((1, 2, 1))
        agg = AggregatedVolume.from_array(v)
        d = subpixel_refine(agg, DisparityMap(np.array([[0.0, 4.0]])))
        assert d.values.tolist() == [[0.0, 4.0]]

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_offsets_inside_half_pixel(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.integers(0, 20, (4, 4, 6))
        agg = AggregatedVolume.from_array(v)
        d = wta_disparity(agg, SgmParams(uniqueness_ratio=0))
        r = subpixel_refine(agg, d)
        off = r.values - d.values
        assert np.all(np.abs(off) < 0.5)

    def test_rejects_fractional_input(self):
        agg = AggregatedVolume.from_array(np.zeros((1, 1, 4)))
        with pytest.raises(ValidationError):
            subpixel_refine(agg, DisparityMap(np.array([[1.5]])))


class TestRightDisparity:
    def test_matches_reindexed_argmin(self, rng):
        v = rng.integers(0, 50, (4, 9, 5))
        r = right_disparity_from_volume(AggregatedVolume.from_array(v))
        for y in range(4):
            for x in range(9):
                cands = [(v[y, x + d, d], d) for d in range(5) if x + d < 9]
                assert r.mask[y, x]
                assert r.values[y, x] == min(cands)[1]

    def test_pure_translation(self, rng):
        v = rng.integers(10, 50, (3, 20, 8))
        v[:, :, 5] = 0
        r = right_disparity_from_volume(AggregatedVolume.from_array(v))
        assert np.all(r.values[:, : 20 - 5] == 5)

    def test_zero_dmax(self, rng):
        r = right_disparity_from_volume(AggregatedVolume.from_array(rng.integers(0, 9, (3, 4, 1))))
        assert r.mask.all() and np.all(r.values == 0)

    def test_no_candidate_invalid(self):
        v = np.zeros((1, 4, 3), dtype=np.int32)
        ldef = np.array([[True, True, False, False]])
        rdef = np.array([[True, True, True, False]])
        r = right_disparity_from_volume(AggregatedVolume(v, ldef, rdef))
        assert r.mask.tolist() == [[True, True, False, False]]


class TestSentinels:
    def test_sentinels_take_worst_defined_cost(self):
        from stereosim.sgm import neutral_costs

        c = np.array([[[3, 9, 20, 20], [20, 20, 20, 20]]])
        out = neutral_costs(CostVolume(c, 20))
        assert out.tolist() == [[[3, 9, 9, 9], [20, 20, 20, 20]]]

    def test_border_sentinels_add_no_preference(self):
        # zero evidence everywhere, sentinels at the left border like a real volume
        costs = np.zeros((4, 12, 6), dtype=np.int64)
        for x in range(12):
            costs[:, x, x + 1 :] = 33
        agg = aggregate(CostVolume(costs, 33))
        assert np.all(agg.values == agg.values[..., :1])
