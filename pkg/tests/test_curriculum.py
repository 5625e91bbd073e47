import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsrefine.curriculum import (
    CurriculumSchedule,
    SampledFrame,
    partition_top_h,
    sample_pool,
    select_top_h,
)
from tsrefine.errors import DegenerateDistribution, MissingScores
from tsrefine.plateau import PlateauParams, SamplingDistribution


def _dists(n, length=200):
    return [SamplingDistribution(PlateauParams(20.0 * i + 10, 8, 0.75), "v", i % 3, i, length) for i in range(n)]


def test_pool_size():
    assert len(sample_pool(_dists(10), np.random.default_rng(0), 5)) == 50


def test_point_mass_distribution_repeats_frame():
    d = SamplingDistribution(PlateauParams(50, 0.4, 1e3), "v", 0, 0, 100)
    pool = sample_pool([d], np.random.default_rng(0), 5)
    assert len({f.frame for f in pool}) == 1


def test_pool_deterministic():
    a = sample_pool(_dists(6), np.random.default_rng(4))
    b = sample_pool(_dists(6), np.random.default_rng(4))
    assert a == b


def test_pool_frames_in_bounds_and_labelled():
    dists = _dists(8)
    for f in sample_pool(dists, np.random.default_rng(1)):
        assert 0 <= f.frame < 200
        assert f.class_label == dists[f.source].class_label


def test_degenerate_names_annotation():
    bad = SamplingDistribution(PlateauParams(5, 1, 1), "clip7", 0, 3, 10)
    object.__setattr__(bad, "params", PlateauParams(-500, 1, 1))
    with pytest.raises(DegenerateDistribution, match="annotation 3 of video clip7"):
        sample_pool([bad], np.random.default_rng(0))


def _pool_one_class(scores):
    pool = [SampledFrame("v", i, 0, i) for i in range(len(scores))]
    matrix = np.zeros((len(scores), 2))
    matrix[:, 0] = scores
    return pool, {"v": matrix}


def test_half_of_hundred():
    pool, scores = _pool_one_class(np.linspace(0, 1, 100))
    assert len(select_top_h(pool, scores, 0.5)) == 50


def test_h_one_keeps_everything_in_rank_order():
    pool, scores = _pool_one_class([0.3, 0.9, 0.1, 0.5])
    got = select_top_h(pool, scores, 1.0)
    assert [f.frame for f in got] == [1, 3, 0, 2]


def test_top_third_of_three():
    pool, scores = _pool_one_class([0.9, 0.5, 0.1])
    assert [f.score for f in select_top_h(pool, scores, 0.33)] == [0.9]
    # ceiling rule: 0.34 * 3 = 1.02 rounds up to two frames
    assert len(select_top_h(pool, scores, 0.34)) == 2


def test_ties_broken_by_video_frame_source():
    pool = [SampledFrame("b", 1, 0, 0), SampledFrame("a", 5, 0, 2), SampledFrame("a", 5, 0, 1), SampledFrame("a", 2, 0, 0)]
    scores = {"a": np.full((10, 1), 0.5), "b": np.full((10, 1), 0.5)}
    got = select_top_h(pool, scores, 1.0)
    assert [f.order_key for f in got] == [("a", 2, 0), ("a", 5, 1), ("a", 5, 2), ("b", 1, 0)]


def test_missing_scores():
    pool = [SampledFrame("ghost", 1, 0, 0)]
    with pytest.raises(MissingScores):
        select_top_h(pool, {}, 0.5)


def test_invalid_h():
    pool, scores = _pool_one_class([0.5])
    for h in (0.0, 1.5):
        with pytest.raises(ValueError):
            select_top_h(pool, scores, h)


@given(
    st.lists(st.tuples(st.integers(0, 2), st.integers(0, 49), st.sampled_from([0.1, 0.2, 0.5, 0.7])), min_size=1, max_size=60),
    st.floats(0.01, 1.0),
)
def test_selection_properties(items, h):
    pool = [SampledFrame("v", x, k, i) for i, (k, x, _) in enumerate(items)]
    matrix = np.zeros((50, 3))
    for k, x, s in items:
        matrix[x, k] = s  # later writes win; scores are read back from the matrix
    selected, discarded = partition_top_h(pool, {"v": matrix}, h)
    assert len(selected) + len(discarded) == len(pool)
    for k in range(3):
        n = sum(1 for f in pool if f.class_label == k)
        sel = [f.score for f in selected if f.class_label == k]
        dis = [f.score for f in discarded if f.class_label == k]
        assert len(sel) == math.ceil(h * n - 1e-9)
        if sel and dis:
            assert min(sel) >= max(dis)


def test_default_schedule():
    s = CurriculumSchedule.default(0.5, 100, 100)
    assert s.ramp == ((125, 0.75), (150, 1.0))
    assert [s.h_at(e) for e in (0, 99, 124, 125, 149, 150, 199)] == [0.5, 0.5, 0.5, 0.75, 0.75, 1.0, 1.0]
    assert CurriculumSchedule.default(1.0, 100, 100).ramp == ()


def test_schedule_validation():
    with pytest.raises(ValueError):
        CurriculumSchedule(0.5, ((10, 0.4), (20, 1.0)))
    with pytest.raises(ValueError):
        CurriculumSchedule(0.5, ((10, 0.8),))
    with pytest.raises(ValueError):
        CurriculumSchedule(0.0)
