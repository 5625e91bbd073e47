"""Plateau function and the frame sampling distributions built from it.

The plateau is the product of two opposing logistic factors,

    g(x | c, w, s) = 1 / ((exp(s(x - c - w)) + 1) * (exp(s(c - w - x)) + 1))

which is flat around ``c`` over a width of ``2w`` and falls off with
steepness ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDistribution

# exp(700) is finite in float64; beyond it the logistic factor has saturated
_EXP_CLIP = 700.0

MIN_WIDTH = 1.0
MIN_SLOPE = 1e-3
# total mass below this means the plateau has effectively left the video
MIN_MASS = 1e-12


@dataclass(frozen=True)
class PlateauParams:
    c: float
    w: float
    s: float

    def __post_init__(self):
        if not (self.w > 0 and self.s > 0):
            raise ValueError(f"plateau needs w > 0 and s > 0, got w={self.w}, s={self.s}")

    def clamped(self, video_length: int) -> "PlateauParams":
        """Copy with the center clamped into ``[0, video_length - 1]``."""
        c = min(max(self.c, 0.0), float(video_length - 1))
        return self if c == self.c else replace(self, c=c)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.c, self.w, self.s)


@dataclass(frozen=True)
class SamplingDistribution:
    """A plateau bound to one annotated action instance."""

    params: PlateauParams
    video_id: str
    class_label: int
    instance_index: int
    video_length: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.video_id, self.instance_index)

    def with_params(self, params: PlateauParams) -> "SamplingDistribution":
        return replace(self, params=params.clamped(self.video_length))


def _logistic_factor(z):
    """``1 / (exp(z) + 1)`` with the exponent clipped so it saturates."""
    return 1.0 / (np.exp(np.clip(z, -_EXP_CLIP, _EXP_CLIP)) + 1.0)


def eval_plateau(x, p: PlateauParams):
    """Evaluate the plateau at frame coordinate(s) ``x``.

    Accepts a scalar or an array; returns the same shape.
    """
    x = np.asarray(x, dtype=np.float64)
    right = _logistic_factor(p.s * (x - p.c - p.w))
    left = _logistic_factor(p.s * (p.c - p.w - x))
    out = right * left
    return float(out) if out.ndim == 0 else out


def plateau_with_grad(x: np.ndarray, c: float, w: float, s: float):
    """Plateau values and their partial derivatives w.r.t. (c, w, s).

    Returns ``(g, dg_dc, dg_dw, dg_ds)`` as arrays shaped like ``x``.
    """
    u = s * (x - c - w)
    v = s * (c - w - x)
    a = _logistic_factor(u)
    b = _logistic_factor(v)
    g = a * b
    dg_dc = g * s * (b - a)
    dg_dw = g * s * (2.0 - a - b)
    dg_ds = -g * ((1.0 - a) * (x - c - w) + (1.0 - b) * (c - w - x))
    return g, dg_dc, dg_dw, dg_ds


def plateau_support(p: PlateauParams, video_length: int, threshold: float = 0.5) -> range:
    """Integer frames in ``[0, video_length)`` where the plateau exceeds ``threshold``.

    The plateau is unimodal, so the result is a single contiguous range
    (possibly empty).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if video_length <= 0:
        return range(0)
    frames = np.arange(video_length)
    above = np.flatnonzero(eval_plateau(frames, p) > threshold)
    if above.size == 0:
        return range(0)
    return range(int(above[0]), int(above[-1]) + 1)


def normalize_to_pmf(p: PlateauParams, video_length: int) -> np.ndarray:
    """Discrete sampling distribution over the frames of one video."""
    if video_length < 1:
        raise ValueError("video_length must be at least 1")
    g = eval_plateau(np.arange(video_length), p)
    g = np.atleast_1d(g)
    total = g.sum()
    if not total > MIN_MASS:
        raise DegenerateDistribution(
            f"plateau (c={p.c}, w={p.w}, s={p.s}) has no mass on {video_length} frames"
        )
    return g / total


def sample_frames(pmf: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` frame indices with replacement from ``pmf``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size == 0 or np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0):
        raise ValueError("pmf must be a nonnegative vector summing to 1")
    # inverse-CDF draw keeps the number of generator calls fixed at n
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, pmf.size - 1)
