"""Confidence-ranked selection of sampled training frames."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDistribution, MissingScores
from .plateau import SamplingDistribution, normalize_to_pmf, sample_frames


@dataclass(frozen=True)
class SampledFrame:
    video_id: str
    frame: int
    class_label: int
    source: int  # instance_index of the distribution it came from
    score: float = float("nan")

    @property
    def order_key(self):
        return (self.video_id, self.frame, self.source)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-constant ``h``: ``ramp[i] = (epoch, h)`` takes effect from ``epoch`` on."""

    base_h: float = 0.5
    ramp: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 < self.base_h <= 1.0:
            raise ValueError(f"base_h must lie in (0, 1], got {self.base_h}")
        hs = [self.base_h] + [h for _, h in self.ramp]
        epochs = [e for e, _ in self.ramp]
        if any(b < a for a, b in zip(hs, hs[1:])) or epochs != sorted(epochs):
            raise ValueError("curriculum ramp must be nondecreasing in both epoch and h")
        if hs[-1] != 1.0:
            raise ValueError("curriculum ramp must end at h = 1")

    @classmethod
    def default(cls, base_h: float, base_epochs: int, update_epochs: int) -> "CurriculumSchedule":
        """Hold ``base_h`` through the base phase, then add 0.25 after each quarter of the update phase."""
        ramp = []
        h = base_h
        quarter = 1
        while h < 1.0:
            h = min(1.0, h + 0.25)
            ramp.append((base_epochs + (min(quarter, 4) * update_epochs) // 4, h))
            quarter += 1
        return cls(base_h, tuple(ramp))

    def h_at(self, epoch: int) -> float:
        h = self.base_h
        for start, value in self.ramp:
            if epoch >= start:
                h = value
        return h


def sample_pool(
    distributions: list[SamplingDistribution],
    rng: np.random.Generator,
    frames_per_instance: int = 5,
) -> list[SampledFrame]:
    """Draw ``frames_per_instance`` frames from every distribution, in list order."""
    pool = []
    for dist in distributions:
        try:
            pmf = normalize_to_pmf(dist.params, dist.video_length)
        except DegenerateDistribution as exc:
            raise DegenerateDistribution(
                f"annotation {dist.instance_index} of video {dist.video_id}: {exc}"
            ) from exc
        for x in sample_frames(pmf, frames_per_instance, rng):
            pool.append(SampledFrame(dist.video_id, int(x), dist.class_label, dist.instance_index))
    return pool


def _with_scores(pool, scores) -> list[SampledFrame]:
    out = []
    for f in pool:
        try:
            matrix = scores[f.video_id]
        except KeyError:
            raise MissingScores(f"no score matrix for video {f.video_id}") from None
        m = matrix.scores if hasattr(matrix, "scores") else matrix
        out.append(SampledFrame(f.video_id, f.frame, f.class_label, f.source, float(m[f.frame, f.class_label])))
    return out


def partition_top_h(pool, scores, h: float) -> tuple[list[SampledFrame], list[SampledFrame]]:
    """Split the pool into (selected, discarded) per class.

    ``scores`` maps video id to a :class:`ScoreMatrix` (or a bare ``(L, K)``
    array). Within each class frames are ranked by ``P(k|x)`` across all
    videos and the top ``ceil(h * |F^k|)`` are kept. Both outputs are ordered
    by class, then rank.
    """
    if not 0.0 < h <= 1.0:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    by_class = defaultdict(list)
    for f in _with_scores(pool, scores):
        by_class[f.class_label].append(f)
    selected, discarded = [], []
    for k in sorted(by_class):
        ranked = sorted(by_class[k], key=lambda f: (-f.score, f.order_key))
        t = math.ceil(h * len(ranked) - 1e-9)
        selected += ranked[:t]
        discarded += ranked[t:]
    return selected, discarded


def select_top_h(pool, scores, h: float) -> list[SampledFrame]:
    return partition_top_h(pool, scores, h)[0]
