"""Evaluation metrics and the report / curve files written after a run.

Intervals are integer-inclusive here: a ground-truth segment covering frames
``start .. end - 1`` is the closed interval ``[start, end - 1]`` and a plateau
support ``range(a, b)`` is ``[a, b - 1]``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import FrameClassifier, score_video
from .curriculum import partition_top_h, sample_pool
from .errors import CountMismatch, EmptySegment
from .plateau import PlateauParams, SamplingDistribution, plateau_support
from .synthdata import Dataset, GroundTruthSegment, VideoStream

FRAMES_PER_TEST = 10
# seed of the pool drawn for in-GT statistics; evaluation only, never trains anything
EVAL_SEED = 12345


def spaced_frames(length: int, n: int = FRAMES_PER_TEST) -> np.ndarray:
    """``n`` uniformly spaced frame indices over ``0 .. length - 1``; repeats on short clips."""
    if length <= 0:
        raise EmptySegment("test instance has no frames")
    return np.rint(np.linspace(0, length - 1, n)).astype(np.int64)


def predict_instance(model: FrameClassifier, video: VideoStream, n: int = FRAMES_PER_TEST) -> int:
    seg = video.gt_segments[0] if video.gt_segments else GroundTruthSegment(0, video.length, -1)
    if seg.end <= seg.start:
        raise EmptySegment(f"test instance {video.video_id} has an empty segment")
    frames = seg.start + spaced_frames(seg.end - seg.start, n)
    probs = np.atleast_2d(model.predict(video.features[frames])).mean(axis=0)
    return int(np.argmax(probs))  # first maximum, i.e. smallest class index on ties


def _labels(test_instances) -> np.ndarray:
    labels = []
    for v in test_instances:
        if len(v.gt_segments) != 1:
            raise ValueError(f"test instance {v.video_id} must carry exactly one segment, has {len(v.gt_segments)}")
        labels.append(v.gt_segments[0].class_label)
    return np.array(labels, dtype=np.int64)


def top1_accuracy(model: FrameClassifier, test_instances, frames_per_test: int = FRAMES_PER_TEST) -> float:
    """Fraction of trimmed test instances whose averaged-softmax argmax is the true class."""
    test_instances = list(test_instances)
    if not test_instances:
        return 0.0
    labels = _labels(test_instances)
    preds = np.array([predict_instance(model, v, frames_per_test) for v in test_instances])
    return float(np.mean(preds == labels))


def per_class_accuracy(model, test_instances, num_classes: int, frames_per_test: int = FRAMES_PER_TEST) -> list[float]:
    """Accuracy restricted to each true class; NaN for classes absent from the test set."""
    test_instances = list(test_instances)
    labels = _labels(test_instances)
    preds = np.array([predict_instance(model, v, frames_per_test) for v in test_instances], dtype=np.int64)
    out = []
    for k in range(num_classes):
        mask = labels == k
        out.append(float(np.mean(preds[mask] == k)) if mask.any() else float("nan"))
    return out


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU of two closed integer intervals; an interval with hi < lo is empty."""
    len_a = max(0, a[1] - a[0] + 1)
    len_b = max(0, b[1] - b[0] + 1)
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)
    union = len_a + len_b - inter
    return inter / union if union > 0 and len_a > 0 and len_b > 0 else 0.0


def support_interval(dist: SamplingDistribution) -> tuple[int, int]:
    r = plateau_support(dist.params, dist.video_length)
    return (r.start, r.stop - 1)


def segment_interval(seg: GroundTruthSegment) -> tuple[int, int]:
    return (seg.start, seg.end - 1)


def segment_midpoint(seg: GroundTruthSegment) -> float:
    return (seg.start + seg.end - 1) / 2.0


def _matched(distributions, segments_by_video):
    counts: dict[str, int] = {}
    for d in distributions:
        counts[d.video_id] = counts.get(d.video_id, 0) + 1
    for vid, n in sorted(counts.items()):
        segs = segments_by_video.get(vid)
        if segs is None or len(segs) != n:
            have = 0 if segs is None else len(segs)
            raise CountMismatch(f"video {vid}: {n} distributions but {have} ground-truth segments")
    for d in distributions:
        yield d, segments_by_video[d.video_id][d.instance_index]


def segments_of(dataset: Dataset) -> dict[str, list[GroundTruthSegment]]:
    return {v.video_id: v.gt_segments for v in dataset.train}


def plateau_alignment(distributions, segments_by_video) -> tuple[float, float]:
    """Mean IoU and mean ``|c - midpoint|`` between each plateau and its matched segment.

    Distributions are matched to segments by ``instance_index`` within their video.
    """
    ious, dists = [], []
    for d, seg in _matched(distributions, segments_by_video):
        ious.append(interval_iou(support_interval(d), segment_interval(seg)))
        dists.append(abs(d.params.c - segment_midpoint(seg)))
    if not ious:
        return 0.0, 0.0
    return float(np.mean(ious)), float(np.mean(dists))


def in_gt_fraction(frames, segments_by_video) -> float:
    """Fraction of frames inside some ground-truth segment of their own class and video."""
    frames = list(frames)
    if not frames:
        return 0.0
    inside = 0
    for f in frames:
        for seg in segments_by_video.get(f.video_id, ()):
            if seg.class_label == f.class_label and seg.start <= f.frame < seg.end:
                inside += 1
                break
    return inside / len(frames)


@dataclass
class EvalReport:
    top1_accuracy: float
    per_class_accuracy: list[float]
    test_instances: int
    mean_iou: float | None = None
    mean_center_distance: float | None = None
    in_gt_sampled: float | None = None
    # selected / discarded split of the same pool at ``curriculum_h``
    in_gt_selected: float | None = None
    in_gt_discarded: float | None = None
    curriculum_h: float | None = None
    confidence_rounds: int = 0

    def items(self, prefix: str = "") -> list[tuple[str, str]]:
        out = [
            ("top1_accuracy", _fmt(self.top1_accuracy)),
            ("per_class_accuracy", ",".join(_fmt(a) for a in self.per_class_accuracy)),
            ("test_instances", str(self.test_instances)),
        ]
        for name in (
            "mean_iou", "mean_center_distance", "in_gt_sampled",
            "in_gt_selected", "in_gt_discarded", "curriculum_h",
        ):
            value = getattr(self, name)
            if value is not None:
                out.append((name, _fmt(value)))
        out.append(("confidence_rounds", str(self.confidence_rounds)))
        return [(prefix + k, v) for k, v in out]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def evaluate(
    model: FrameClassifier,
    distributions: list[SamplingDistribution],
    dataset: Dataset,
    h: float = 0.5,
    frames_per_instance: int = 5,
    seed: int = EVAL_SEED,
    confidence_rounds: int = 0,
) -> EvalReport:
    """Accuracy on the test split plus, when distributions exist, alignment and in-GT statistics."""
    report = EvalReport(
        top1_accuracy(model, dataset.test),
        per_class_accuracy(model, dataset.test, dataset.num_classes),
        len(dataset.test),
        confidence_rounds=confidence_rounds,
    )
    if distributions:
        segs = segments_of(dataset)
        report.mean_iou, report.mean_center_distance = plateau_alignment(distributions, segs)
        pool = sample_pool(distributions, np.random.default_rng(seed), frames_per_instance)
        scores = {v.video_id: score_video(model, v) for v in dataset.train}
        selected, discarded = partition_top_h(pool, scores, h)
        report.in_gt_sampled = in_gt_fraction(pool, segs)
        report.in_gt_selected = in_gt_fraction(selected, segs)
        report.in_gt_discarded = in_gt_fraction(discarded, segs)
        report.curriculum_h = h
    return report


def evaluate_state(state, dataset: Dataset, h: float = 0.5) -> dict[str, EvalReport]:
    """Reports keyed ``before_update`` (base-phase snapshot) and ``after_update`` (final state)."""
    out = {}
    if state.has_base_snapshot:
        base = state.base_state()
        out["before_update"] = evaluate(base.model, base.distributions, dataset, h)
    out["after_update"] = evaluate(
        state.model, state.distributions, dataset, h, confidence_rounds=len(state.confidence_history)
    )
    return out


# -- files ------------------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def confidence_csv(state) -> str:
    return _csv_text(["epoch", "mean_confidence", "num_applied"], state.confidence_history)


def loss_csv(state) -> str:
    return _csv_text(["epoch", "loss"], state.loss_history)


def trace_csv(state) -> str:
    rows = [
        (r.epoch, r.video_id, r.instance_index, *r.old.as_tuple(), *r.gamma.as_tuple(), r.confidence)
        for r in state.trace
    ]
    header = ["epoch", "video_id", "instance_index", "old_c", "old_w", "old_s", "new_c", "new_w", "new_s", "confidence"]
    return _csv_text(header, rows)


def alignment_rows(state, dataset: Dataset) -> list[tuple]:
    """Alignment of the initial distributions and after every update round."""
    if not state.distributions:
        return []
    segs = segments_of(dataset)
    template = state.distributions
    rows = []
    # the first entry is the initial layout, recorded at epoch 0
    for epoch, params in state.param_history:
        dists = [d.with_params(PlateauParams(*p)) for d, p in zip(template, params)]
        iou, dist = plateau_alignment(dists, segs)
        rows.append((epoch, iou, dist))
    return rows


def alignment_csv(state, dataset: Dataset) -> str:
    return _csv_text(["epoch", "mean_iou", "mean_center_distance"], alignment_rows(state, dataset))


def report_text(state, dataset: Dataset, reports: dict[str, EvalReport] | None = None) -> str:
    reports = evaluate_state(state, dataset) if reports is None else reports
    lines = [f"mode = {state.mode}", f"epochs = {state.epoch}"]
    for phase in ("before_update", "after_update"):
        if phase in reports:
            lines += [f"{k} = {v}" for k, v in reports[phase].items(phase + ".")]
    # always present so reports from any checkpoint share the same keys
    history = state.confidence_history
    first, last = (history[0][1], history[-1][1]) if history else (float("nan"), float("nan"))
    lines.append(f"confidence.first = {_fmt(first)}")
    lines.append(f"confidence.last = {_fmt(last)}")
    lines.append(f"inversions = {len(state.inversions)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            out[key] = value
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"{path}: cannot write ({exc.strerror})") from exc


def emit_report(state, dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write ``report.txt`` and the CSV curves into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: cannot create output directory ({exc.strerror})") from exc
    files = {
        "report": ("report.txt", report_text(state, dataset)),
        "loss": ("loss.csv", loss_csv(state)),
    }
    if state.mode != "full":
        files["confidence"] = ("confidence.csv", confidence_csv(state))
        files["trace"] = ("trace.csv", trace_csv(state))
        files["alignment"] = ("alignment.csv", alignment_csv(state, dataset))
    written = {}
    for key, (name, text) in files.items():
        _write(out / name, text)
        written[key] = out / name
    return written
