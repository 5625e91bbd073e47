"""Synthetic untrimmed feature streams with planted action segments.

Also holds the two single-timestamp simulators and the on-disk dataset
format (see ``docs/formats.md``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InfeasibleLayout

PROTOCOLS = ("ts", "ts-in-gt")
DATASET_FORMAT = "tsrefine-dataset 1"
RECORD_FORMAT = "tsrefine-video 1"

# independent generator streams derived from the dataset seed
_STREAM_LAYOUT, _STREAM_TS, _STREAM_TS_IN_GT, _STREAM_TEST = range(4)


@dataclass(frozen=True)
class GroundTruthSegment:
    """Action instance covering frames ``start .. end - 1``."""

    start: int
    end: int
    class_label: int

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class Annotation:
    video_id: str
    timestamp: int
    class_label: int
    instance_index: int


@dataclass
class VideoStream:
    video_id: str
    length: int
    features: np.ndarray  # float32, shape (length, d)
    gt_segments: list[GroundTruthSegment] = field(default_factory=list)
    annotations: dict[str, list[Annotation]] = field(default_factory=dict)
    frame_rate: float = 30.0

    def __eq__(self, other):
        if not isinstance(other, VideoStream):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.length == other.length
            and self.frame_rate == other.frame_rate
            and self.gt_segments == other.gt_segments
            and self.annotations == other.annotations
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


@dataclass
class Dataset:
    num_classes: int
    feature_dim: int
    frame_rate: float
    seed: int
    train: list[VideoStream]
    test: list[VideoStream]

    def video(self, video_id: str) -> VideoStream:
        for v in self.train:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)


@dataclass(frozen=True)
class SynthConfig:
    num_videos: int
    video_length: int
    num_classes: int
    instances_per_video: int
    feature_dim: int
    num_test_videos: int = 6
    segment_length: tuple[int, int] = (60, 150)
    gap_length: tuple[int, int] = (10, 60)
    class_signal: float = 0.45
    noise_std: float = 0.5
    background_signal: float = 0.0
    instance_jitter: float = 0.0
    noise_correlation: float = 0.0
    successor_bias: float = 0.0
    frame_rate: float = 30.0
    ts_pad_seconds: float = 1.0
    ts_in_gt_std_seconds: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        counts = {
            "num_videos": self.num_videos,
            "video_length": self.video_length,
            "num_classes": self.num_classes,
            "instances_per_video": self.instances_per_video,
            "feature_dim": self.feature_dim,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.num_test_videos < 0:
            raise ValueError("num_test_videos must be nonnegative")
        lo, hi = self.segment_length
        if not 1 <= lo <= hi:
            raise ValueError(f"segment_length range invalid: {self.segment_length}")
        glo, ghi = self.gap_length
        if not 0 <= glo <= ghi:
            raise ValueError(f"gap_length range invalid: {self.gap_length}")
        if self.noise_std < 0 or self.instance_jitter < 0 or self.frame_rate <= 0:
            raise ValueError("noise_std and instance_jitter must be >= 0, frame_rate > 0")
        if not 0.0 <= self.successor_bias <= 1.0:
            raise ValueError(f"successor_bias must lie in [0, 1], got {self.successor_bias}")
        if not 0.0 <= self.noise_correlation < 1.0:
            raise ValueError(f"noise_correlation must lie in [0, 1), got {self.noise_correlation}")
        n = self.instances_per_video
        needed = n * lo + (n + 1) * glo
        if needed > self.video_length:
            raise InfeasibleLayout(
                f"{n} segments of >= {lo} frames with gaps of >= {glo} frames need "
                f"{needed} frames, video has {self.video_length}"
            )


# -- timestamp simulation ---------------------------------------------------


def _clamp_frame(a: int, video_length: int | None) -> int:
    a = max(a, 0)
    if video_length is not None:
        a = min(a, video_length - 1)
    return int(a)


def simulate_ts(
    gt: GroundTruthSegment,
    rng: np.random.Generator,
    pad_seconds: float = 1.0,
    frame_rate: float = 30.0,
    video_length: int | None = None,
) -> int:
    """Uniform draw from the segment padded by ``pad_seconds`` on both sides."""
    pad = int(round(pad_seconds * frame_rate))
    a = int(rng.integers(gt.start - pad, gt.end + pad + 1))
    return _clamp_frame(a, video_length)


def simulate_ts_in_gt(
    gt: GroundTruthSegment,
    rng: np.random.Generator,
    std_seconds: float = 1.0,
    frame_rate: float = 30.0,
    video_length: int | None = None,
) -> int:
    """Rounded Gaussian draw around the segment midpoint (not truncated to the segment)."""
    a = int(np.rint(rng.normal(gt.center, std_seconds * frame_rate)))
    return _clamp_frame(a, video_length)


# -- generation --------------------------------------------------------------


def _unit_vectors(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ar1(white: np.ndarray, phi: float) -> np.ndarray:
    """Unit-variance AR(1) filtering of white noise along the time axis."""
    if phi == 0.0:
        return white
    out = np.empty_like(white)
    out[0] = white[0]
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, len(white)):
        out[t] = phi * out[t - 1] + scale * white[t]
    return out


def _layout(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, int]]:
    """Segment (start, end) pairs; lengths and gaps shrink toward their minima when they overflow."""
    n = cfg.instances_per_video
    lo, hi = cfg.segment_length
    glo, ghi = cfg.gap_length
    lengths = rng.integers(lo, hi + 1, size=n)
    # leading gap, n-1 inner gaps, trailing gap
    gaps = rng.integers(glo, ghi + 1, size=n + 1)
    excess = int(lengths.sum() + gaps.sum()) - cfg.video_length
    if excess > 0:
        slack = np.concatenate([lengths - lo, gaps - glo]).astype(np.int64)
        keep = (slack.sum() - excess) / slack.sum()
        slack = np.floor(slack * keep).astype(np.int64)
        lengths = lo + slack[:n]
        gaps = glo + slack[n:]
    segments = []
    pos = 0
    for i in range(n):
        pos += int(gaps[i])
        segments.append((pos, pos + int(lengths[i])))
        pos += int(lengths[i])
    return segments


def _class_sequence(rng: np.random.Generator, cfg: SynthConfig, n: int) -> np.ndarray:
    """Instance labels; each follows its predecessor's cyclic successor with prob. ``successor_bias``."""
    uniform = rng.integers(0, cfg.num_classes, size=n)
    follow = rng.random(n) < cfg.successor_bias
    labels = uniform.copy()
    for i in range(1, n):
        if follow[i]:
            labels[i] = (labels[i - 1] + 1) % cfg.num_classes
    return labels


def _emit_video(rng, cfg, video_id, class_means, bg_mean) -> VideoStream:
    bounds = _layout(rng, cfg)
    labels = _class_sequence(rng, cfg, len(bounds))
    # per-instance offset of the class mean; drawn even when unused to keep streams aligned
    offsets = cfg.instance_jitter * rng.normal(size=(len(bounds), cfg.feature_dim))
    means = np.repeat(bg_mean[None, :], cfg.video_length, axis=0)
    segments = []
    for (start, end), k, off in zip(bounds, labels, offsets):
        means[start:end] = class_means[k] + off
        segments.append(GroundTruthSegment(start, end, int(k)))
    noise = _ar1(rng.normal(size=(cfg.video_length, cfg.feature_dim)), cfg.noise_correlation)
    features = (means + cfg.noise_std * noise).astype(np.float32)
    return VideoStream(video_id, cfg.video_length, features, segments, {}, cfg.frame_rate)


def _annotate(video: VideoStream, cfg: SynthConfig, rngs: dict[str, np.random.Generator]) -> None:
    for protocol in PROTOCOLS:
        rng = rngs[protocol]
        draws = []
        for seg in video.gt_segments:
            if protocol == "ts":
                a = simulate_ts(seg, rng, cfg.ts_pad_seconds, cfg.frame_rate, video.length)
            else:
                a = simulate_ts_in_gt(seg, rng, cfg.ts_in_gt_std_seconds, cfg.frame_rate, video.length)
            draws.append((a, seg.class_label))
        # stable sort keeps ground-truth order among equal timestamps
        draws.sort(key=lambda t: t[0])
        video.annotations[protocol] = [
            Annotation(video.video_id, a, k, i) for i, (a, k) in enumerate(draws)
        ]


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, _STREAM_LAYOUT])
    class_means = cfg.class_signal * _unit_vectors(rng, cfg.num_classes, cfg.feature_dim)
    bg_mean = cfg.background_signal * _unit_vectors(rng, 1, cfg.feature_dim)[0]

    ann_rngs = {
        "ts": np.random.default_rng([cfg.seed, _STREAM_TS]),
        "ts-in-gt": np.random.default_rng([cfg.seed, _STREAM_TS_IN_GT]),
    }
    train = []
    for v in range(cfg.num_videos):
        video = _emit_video(rng, cfg, f"v{v:03d}", class_means, bg_mean)
        _annotate(video, cfg, ann_rngs)
        train.append(video)

    test_rng = np.random.default_rng([cfg.seed, _STREAM_TEST])
    test = []
    for v in range(cfg.num_test_videos):
        full = _emit_video(test_rng, cfg, f"h{v:03d}", class_means, bg_mean)
        for i, seg in enumerate(full.gt_segments):
            n = seg.end - seg.start
            test.append(
                VideoStream(
                    f"{full.video_id}_{i:02d}",
                    n,
                    full.features[seg.start:seg.end].copy(),
                    [GroundTruthSegment(0, n, seg.class_label)],
                    {},
                    cfg.frame_rate,
                )
            )
    return Dataset(cfg.num_classes, cfg.feature_dim, cfg.frame_rate, cfg.seed, train, test)


# -- persistence -------------------------------------------------------------


def _fmt_num(x) -> str:
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return repr(x)


def _write_record(video: VideoStream, folder: Path) -> None:
    sidecar = f"{video.video_id}.f32"
    lines = [
        f"format = {RECORD_FORMAT}",
        f"video_id = {video.video_id}",
        f"length = {video.length}",
        f"frame_rate = {_fmt_num(video.frame_rate)}",
        f"features = {sidecar}",
        f"segments = {len(video.gt_segments)}",
    ]
    lines += [f"{s.start},{s.end},{s.class_label}" for s in video.gt_segments]
    for protocol in sorted(video.annotations):
        anns = video.annotations[protocol]
        lines.append(f"annotations {protocol} = {len(anns)}")
        lines += [f"{a.timestamp},{a.class_label}" for a in anns]
    (folder / f"{video.video_id}.txt").write_text("\n".join(lines) + "\n")
    (folder / sidecar).write_bytes(np.ascontiguousarray(video.features, dtype="<f4").tobytes())


def save_dataset(dataset: Dataset, path) -> Path:
    root = Path(path)
    for split in ("train", "test"):
        (root / split).mkdir(parents=True, exist_ok=True)
    meta = [
        f"format = {DATASET_FORMAT}",
        f"num_classes = {dataset.num_classes}",
        f"feature_dim = {dataset.feature_dim}",
        f"frame_rate = {_fmt_num(dataset.frame_rate)}",
        f"seed = {dataset.seed}",
        f"train = {len(dataset.train)}",
        f"test = {len(dataset.test)}",
    ]
    (root / "meta").write_text("\n".join(meta) + "\n")
    for split, videos in (("train", dataset.train), ("test", dataset.test)):
        for video in videos:
            _write_record(video, root / split)
    return root


class _Lines:
    """Line cursor that reports file and line number in every error."""

    def __init__(self, path: Path):
        self.path = path
        try:
            self.lines = path.read_text().splitlines()
        except OSError as exc:
            raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
        self.pos = 0

    def fail(self, msg: str, lineno: int | None = None):
        lineno = self.pos if lineno is None else lineno
        raise FormatError(f"{self.path}:{lineno}: {msg}")

    def next(self) -> str:
        if self.pos >= len(self.lines):
            self.fail("unexpected end of file", len(self.lines))
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def key_value(self, key: str) -> str:
        line = self.next()
        name, sep, value = line.partition("=")
        if not sep or name.strip() != key:
            self.fail(f"expected '{key} = ...', got {line!r}")
        return value.strip()

    def integer(self, key: str) -> int:
        value = self.key_value(key)
        try:
            return int(value)
        except ValueError:
            self.fail(f"field '{key}' is not an integer: {value!r}")

    def number(self, key: str) -> float:
        value = self.key_value(key)
        try:
            return float(value)
        except ValueError:
            self.fail(f"field '{key}' is not a number: {value!r}")

    def int_row(self, width: int, what: str) -> tuple[int, ...]:
        line = self.next()
        parts = line.split(",")
        try:
            if len(parts) != width:
                raise ValueError
            return tuple(int(p) for p in parts)
        except ValueError:
            self.fail(f"{what} must be {width} comma-separated integers, got {line!r}")


def _read_record(path: Path, num_classes: int, feature_dim: int) -> VideoStream:
    cur = _Lines(path)
    if cur.key_value("format") != RECORD_FORMAT:
        cur.fail(f"unsupported record format, expected {RECORD_FORMAT!r}")
    video_id = cur.key_value("video_id")
    length = cur.integer("length")
    if length < 1:
        cur.fail(f"length must be positive, got {length}")
    frame_rate = cur.number("frame_rate")
    sidecar = cur.key_value("features")
    n_seg = cur.integer("segments")

    segments = []
    for i in range(n_seg):
        start, end, label = cur.int_row(3, "segment")
        where = f"segment {i} ({start},{end},{label})"
        if not 0 <= start < end <= length:
            cur.fail(f"{where}: requires 0 <= start < end <= {length}")
        if not 0 <= label < num_classes:
            cur.fail(f"{where}: label outside [0, {num_classes})")
        if segments and start < segments[-1].end:
            cur.fail(f"{where}: overlaps or precedes segment {i - 1}")
        segments.append(GroundTruthSegment(start, end, label))

    annotations = {}
    while cur.pos < len(cur.lines):
        line = cur.next()
        if not line.strip():
            continue
        head, sep, count = line.partition("=")
        head = head.split()
        if not sep or len(head) != 2 or head[0] != "annotations" or head[1] not in PROTOCOLS:
            cur.fail(f"expected 'annotations <protocol> = N', got {line!r}")
        try:
            count = int(count)
        except ValueError:
            cur.fail(f"annotation count is not an integer: {count.strip()!r}")
        if count != n_seg:
            cur.fail(f"{count} annotations for {n_seg} segments")
        rows = []
        for i in range(count):
            a, label = cur.int_row(2, "annotation")
            if not 0 <= a < length:
                cur.fail(f"annotation {i}: frame {a} outside [0, {length})")
            if not 0 <= label < num_classes:
                cur.fail(f"annotation {i}: label outside [0, {num_classes})")
            if rows and a < rows[-1].timestamp:
                cur.fail(f"annotation {i}: timestamps not sorted")
            rows.append(Annotation(video_id, a, label, i))
        annotations[head[1]] = rows

    bin_path = path.parent / sidecar
    try:
        raw = bin_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{bin_path}: cannot read feature sidecar ({exc.strerror})") from exc
    expected = length * feature_dim * 4
    if len(raw) != expected:
        kind = "trailing bytes" if len(raw) > expected else "truncated"
        raise FormatError(f"{bin_path}: {kind}: {len(raw)} bytes, expected {expected} ({length}x{feature_dim} float32)")
    features = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(length, feature_dim)
    return VideoStream(video_id, length, features, segments, annotations, frame_rate)


def load_dataset(path) -> Dataset:
    root = Path(path)
    cur = _Lines(root / "meta")
    if cur.key_value("format") != DATASET_FORMAT:
        cur.fail(f"unsupported dataset format, expected {DATASET_FORMAT!r}")
    num_classes = cur.integer("num_classes")
    feature_dim = cur.integer("feature_dim")
    frame_rate = cur.number("frame_rate")
    seed = cur.integer("seed")
    counts = {"train": cur.integer("train"), "test": cur.integer("test")}
    if num_classes < 1 or feature_dim < 1:
        cur.fail("num_classes and feature_dim must be positive", 1)

    splits = {}
    for split, count in counts.items():
        records = sorted((root / split).glob("*.txt"))
        if len(records) != count:
            raise FormatError(f"{root / split}: found {len(records)} records, meta says {count}")
        splits[split] = [_read_record(p, num_classes, feature_dim) for p in records]
    ids = [v.video_id for v in splits["train"] + splits["test"]]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{root}: duplicate video ids")
    return Dataset(num_classes, feature_dim, frame_rate, seed, splits["train"], splits["test"])

