import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrefine.errors import FormatError, InfeasibleLayout
from tsrefine.synthdata import (
    GroundTruthSegment,
    generate_synthetic,
    load_dataset,
    save_dataset,
    simulate_ts,
    simulate_ts_in_gt,
)

from conftest import small_synth


def test_layout_invariants(small_dataset):
    for v in small_dataset.train:
        segs = v.gt_segments
        assert len(segs) == 3
        assert all(0 <= s.start < s.end <= v.length for s in segs)
        assert all(a.end <= b.start for a, b in zip(segs, segs[1:]))
        assert v.features.shape == (v.length, small_dataset.feature_dim)
        for protocol, anns in v.annotations.items():
            assert len(anns) == len(segs)
            stamps = [a.timestamp for a in anns]
            assert stamps == sorted(stamps)
            assert [a.instance_index for a in anns] == list(range(len(anns)))
            assert all(0 <= t < v.length for t in stamps)


def test_test_split_is_trimmed(small_dataset):
    assert len(small_dataset.test) == 2 * 3
    for v in small_dataset.test:
        assert len(v.gt_segments) == 1
        seg = v.gt_segments[0]
        assert (seg.start, seg.end) == (0, v.length)


def test_zero_noise_frames_equal_class_mean():
    ds = generate_synthetic(small_synth(num_classes=2, instances_per_video=1, noise_std=0.0))
    for v in ds.train:
        seg = v.gt_segments[0]
        block = v.features[seg.start:seg.end]
        assert np.all(block == block[0])
    # same class, same mean across videos
    means = {}
    for v in ds.train:
        seg = v.gt_segments[0]
        means.setdefault(seg.class_label, v.features[seg.start])
        np.testing.assert_array_equal(means[seg.class_label], v.features[seg.start])


def test_infeasible_layout():
    # infeasible under both the minimum and the maximum packing rules
    with pytest.raises(InfeasibleLayout):
        generate_synthetic(small_synth(video_length=100, instances_per_video=3, segment_length=(40, 50)))


def test_same_seed_same_bytes(tmp_path):
    a = save_dataset(generate_synthetic(small_synth()), tmp_path / "a")
    b = save_dataset(generate_synthetic(small_synth()), tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_different_seed_differs():
    a = generate_synthetic(small_synth(seed=1))
    b = generate_synthetic(small_synth(seed=2))
    assert a.train[0] != b.train[0]


def test_simulate_ts_bounds():
    seg = GroundTruthSegment(300, 400, 0)
    draws = {simulate_ts(seg, np.random.default_rng(i), 1.0, 30.0, 1000) for i in range(3000)}
    assert draws == set(range(270, 431))


def test_simulate_ts_clamped_at_start():
    seg = GroundTruthSegment(0, 10, 0)
    draws = [simulate_ts(seg, np.random.default_rng(i), 1.0, 30.0, 100) for i in range(500)]
    assert min(draws) == 0 and max(draws) <= 40


def test_simulate_ts_zero_pad_inside():
    seg = GroundTruthSegment(300, 400, 0)
    for i in range(500):
        assert 300 <= simulate_ts(seg, np.random.default_rng(i), 0.0, 30.0, 1000) <= 400


def test_ts_in_gt_zero_std():
    seg = GroundTruthSegment(300, 400, 0)
    assert simulate_ts_in_gt(seg, np.random.default_rng(0), 0.0, 30.0, 1000) == 350


def test_ts_in_gt_mean():
    seg = GroundTruthSegment(300, 400, 0)
    draws = [simulate_ts_in_gt(seg, np.random.default_rng(i), 1.0, 30.0, 1000) for i in range(10000)]
    assert np.mean(draws) == pytest.approx(350, abs=1.5)


def test_ts_in_gt_clamped_at_edge():
    seg = GroundTruthSegment(99, 100, 0)
    for i in range(200):
        assert 0 <= simulate_ts_in_gt(seg, np.random.default_rng(i), 1.0, 30.0, 100) <= 99


@settings(max_examples=40)
@given(st.integers(0, 900), st.integers(1, 99), st.floats(0, 3), st.integers(0, 2**32 - 1))
def test_simulate_ts_property(start, length, pad, seed):
    seg = GroundTruthSegment(start, start + length, 0)
    a = simulate_ts(seg, np.random.default_rng(seed), pad, 30.0, 1000)
    lo = max(0, int(np.ceil(start - pad * 30)))
    hi = min(999, int(np.floor(seg.end + pad * 30)))
    assert lo <= a <= hi
    assert a == simulate_ts(seg, np.random.default_rng(seed), pad, 30.0, 1000)


def test_round_trip(small_dataset, tmp_path):
    save_dataset(small_dataset, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.train == small_dataset.train
    assert back.test == small_dataset.test
    assert (back.num_classes, back.feature_dim, back.seed) == (
        small_dataset.num_classes, small_dataset.feature_dim, small_dataset.seed,
    )


def _record(tmp_path, small_dataset):
    root = save_dataset(small_dataset, tmp_path / "d")
    return root / "train" / f"{small_dataset.train[0].video_id}.txt"


def _segment_line(path, index):
    lines = path.read_text().splitlines()
    first = next(i for i, line in enumerate(lines) if line.startswith("segments")) + 1
    return lines, first + index


def test_load_rejects_reversed_segment(small_dataset, tmp_path):
    path = _record(tmp_path, small_dataset)
    lines, i = _segment_line(path, 1)
    start, end, k = lines[i].split(",")
    lines[i] = f"{end},{start},{k}"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="segment 1"):
        load_dataset(tmp_path / "d")


def test_load_rejects_overlap(small_dataset, tmp_path):
    path = _record(tmp_path, small_dataset)
    lines, i = _segment_line(path, 1)
    prev_end = int(lines[i - 1].split(",")[1])
    _, end, k = lines[i].split(",")
    lines[i] = f"{prev_end - 1},{end},{k}"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="overlap"):
        load_dataset(tmp_path / "d")


def test_load_rejects_truncated_features(small_dataset, tmp_path):
    path = _record(tmp_path, small_dataset)
    sidecar = path.with_suffix(".f32")
    sidecar.write_bytes(sidecar.read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d")


def test_load_missing_dir(tmp_path):
    with pytest.raises(FormatError, match="nope"):
        load_dataset(tmp_path / "nope")
