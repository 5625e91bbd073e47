"""Distribution update engine.

Proposals come from thresholding a class's softmax column at several
levels, fitting a plateau to every long-enough connected component, and
keeping fits that respect the order of neighbouring instances. Each
distribution picks its most confident proposal; only the globally most
confident fraction is applied, as a damped step toward the proposal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numba
import numpy as np

from .classifier import ScoreMatrix
from .errors import EmptyInterval
from .plateau import (
    MIN_SLOPE,
    MIN_WIDTH,
    PlateauParams,
    SamplingDistribution,
    plateau_support,
)

_EXP_CLIP = 700.0

DEFAULT_TAUS = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class RefineConfig:
    tau_grid: tuple[float, ...] = DEFAULT_TAUS
    min_component: int = 15
    z: float = 0.25
    lambdas: tuple[float, float, float] = (0.5, 0.25, 0.25)
    update_period: int = 20
    s_default: float = 0.75

    def validate(self) -> None:
        if not self.tau_grid or any(not 0.0 < t <= 1.0 for t in self.tau_grid):
            raise ValueError(f"tau_grid values must lie in (0, 1], got {self.tau_grid}")
        if not 0.0 < self.z <= 1.0:
            raise ValueError(f"z must lie in (0, 1], got {self.z}")
        if len(self.lambdas) != 3 or any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ValueError(f"lambdas must be three values in [0, 1], got {self.lambdas}")
        if self.min_component < 1 or self.update_period < 1:
            raise ValueError("min_component and update_period must be positive")
        if self.s_default <= 0:
            raise ValueError("s_default must be positive")


@dataclass(frozen=True)
class UpdateProposal:
    gamma: PlateauParams
    target: tuple[str, int]  # (video_id, instance_index)
    confidence: float
    rho_new: float
    rho_old: float
    interval: tuple[int, int] = (-1, -1)


# -- proposal generation -----------------------------------------------------


def connected_components(class_scores, tau: float, min_len: int) -> list[tuple[int, int]]:
    """Maximal runs of frames scoring above ``tau``, as inclusive ``(start, end)``."""
    above = np.asarray(class_scores) > tau
    if not above.any():
        return []
    padded = np.concatenate([[False], above, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, stops = edges[0::2], edges[1::2]
    return [(int(a), int(b) - 1) for a, b in zip(starts, stops) if b - a >= min_len]


@dataclass(frozen=True)
class FitResult:
    params: PlateauParams
    objective: float
    initial_objective: float
    iterations: int
    fell_back: bool


@numba.njit(cache=True)
def _objective_and_grad(x0, y, c, w, s):
    """Sum of squared residuals of the plateau on frames x0, x0+1, ... and its gradient."""
    f = 0.0
    gc = 0.0
    gw = 0.0
    gs = 0.0
    for i in range(y.shape[0]):
        x = x0 + i
        u = min(max(s * (x - c - w), -_EXP_CLIP), _EXP_CLIP)
        v = min(max(s * (c - w - x), -_EXP_CLIP), _EXP_CLIP)
        a = 1.0 / (math.exp(u) + 1.0)
        b = 1.0 / (math.exp(v) + 1.0)
        g = a * b
        r = g - y[i]
        f += r * r
        gc += r * g * s * (b - a)
        gw += r * g * s * (2.0 - a - b)
        gs -= r * g * ((1.0 - a) * (x - c - w) + (1.0 - b) * (c - w - x))
    return f, 2.0 * gc, 2.0 * gw, 2.0 * gs


@numba.njit(cache=True)
def _descend(x0, y, c, w, s, max_iter, step, tol):
    f0, gc, gw, gs = _objective_and_grad(x0, y, c, w, s)
    f = f0
    it = 0
    while it < max_iter and step > 1e-12:
        it += 1
        tc = c - step * gc
        tw = w - step * gw
        ts = s - step * gs
        if tw <= 0.0 or ts <= 0.0:
            step *= 0.5
            continue
        ft, tgc, tgw, tgs = _objective_and_grad(x0, y, tc, tw, ts)
        if not ft < f:
            step *= 0.5
            continue
        improvement = f - ft
        c, w, s, f, gc, gw, gs = tc, tw, ts, ft, tgc, tgw, tgs
        step *= 2.0
        if improvement < tol:
            break
    return c, w, s, f, f0, it


def fit_plateau_detailed(
    class_scores,
    interval: tuple[int, int],
    s_default: float = 0.75,
    max_iter: int = 200,
    step: float = 1e-2,
    tol: float = 1e-8,
) -> FitResult:
    """Least-squares plateau fit around one connected component.

    The fit window extends the component by half its length on each side.
    Gradient descent starts at the component's midpoint and half-width; the
    step doubles after every accepted move and halves after every rejected one.
    """
    y_all = np.asarray(class_scores, dtype=np.float64)
    start, end = interval
    if end < start:
        raise EmptyInterval(f"interval {interval} is empty")
    n = end - start + 1
    ext = math.ceil(0.5 * n)
    lo, hi = max(0, start - ext), min(len(y_all) - 1, end + ext)
    y = np.ascontiguousarray(y_all[lo:hi + 1])

    c0, w0 = (start + end) / 2.0, n / 2.0
    fallback = PlateauParams(c0, max(w0, MIN_WIDTH), s_default)
    c, w, s, f, f0, it = _descend(float(lo), y, c0, w0, float(s_default), max_iter, step, tol)
    finite = all(math.isfinite(v) for v in (c, w, s, f))
    if not finite or f > f0 or w <= MIN_WIDTH or s <= MIN_SLOPE:
        return FitResult(fallback, f0, f0, it, True)
    return FitResult(PlateauParams(c, w, s), f, f0, it, False)


def fit_plateau(class_scores, interval, s_default: float = 0.75) -> PlateauParams:
    return fit_plateau_detailed(class_scores, interval, s_default).params


def candidate_intervals(class_scores, cfg: RefineConfig) -> list[tuple[int, int]]:
    """Distinct components over the whole threshold grid, in first-seen order."""
    seen = {}
    for tau in cfg.tau_grid:
        for comp in connected_components(class_scores, tau, cfg.min_component):
            seen.setdefault(comp, None)
    return list(seen)


def score_plateau(params: PlateauParams, class_scores) -> float:
    """Mean class score over the plateau's 0.5-support; 0 if the support is empty."""
    class_scores = np.asarray(class_scores)
    support = plateau_support(params, len(class_scores), 0.5)
    if len(support) == 0:
        return 0.0
    # correctly rounded sum, so equal means over equal frame sets compare equal
    return math.fsum(class_scores[support.start:support.stop]) / len(support)


def _column(score_matrix, k: int) -> np.ndarray:
    if isinstance(score_matrix, ScoreMatrix):
        return score_matrix.column(k)
    return np.asarray(score_matrix)[:, k]


def generate_proposals(
    score_matrix,
    distribution: SamplingDistribution,
    neighbors: tuple[float, float],
    cfg: RefineConfig,
    fit_cache: dict | None = None,
) -> list[UpdateProposal]:
    """All order-respecting plateau fits for one distribution.

    ``neighbors`` are the centers of the previous and next instance in the
    same video (use -1 and L at the ends). ``fit_cache`` may be shared
    between distributions of the same class and video.
    """
    c_prev, c_next = neighbors
    col = _column(score_matrix, distribution.class_label)
    cache = {} if fit_cache is None else fit_cache
    rho_old = score_plateau(distribution.params, col)
    out = []
    for interval in candidate_intervals(col, cfg):
        if interval not in cache:
            cache[interval] = fit_plateau(col, interval, cfg.s_default)
        gamma = cache[interval]
        if not c_prev < gamma.c < c_next:
            continue
        rho_new = score_plateau(gamma, col)
        out.append(UpdateProposal(gamma, distribution.key, rho_new - rho_old, rho_new, rho_old, interval))
    return out


# -- selection and update ------------------------------------------------------


def select_best(proposals, beta: PlateauParams, class_scores) -> UpdateProposal | None:
    """Most confident proposal with positive confidence, or None."""
    rho_old = score_plateau(beta, class_scores)
    best, best_key = None, None
    for p in proposals:
        rho_new = score_plateau(p.gamma, class_scores)
        psi = rho_new - rho_old
        if psi <= 0:
            continue
        key = (-psi, abs(p.gamma.c - beta.c), p.gamma.c)
        if best_key is None or key < best_key:
            best = replace(p, confidence=psi, rho_new=rho_new, rho_old=rho_old)
            best_key = key
    return best


def global_top_R(selected, z: float) -> list[UpdateProposal]:
    if not 0.0 < z <= 1.0:
        raise ValueError(f"z must lie in (0, 1], got {z}")
    ranked = sorted(selected, key=lambda p: (-p.confidence, p.target))
    return ranked[: math.ceil(z * len(ranked) - 1e-9)]


def apply_update(beta: PlateauParams, gamma: PlateauParams, lambdas, video_length: int | None = None) -> PlateauParams:
    lc, lw, ls = lambdas
    c = beta.c - lc * (beta.c - gamma.c)
    w = max(beta.w - lw * (beta.w - gamma.w), MIN_WIDTH)
    s = max(beta.s - ls * (beta.s - gamma.s), MIN_SLOPE)
    if video_length is not None:
        c = min(max(c, 0.0), float(video_length - 1))
    return PlateauParams(c, w, s)


# -- one full round ------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    video_id: str
    instance_index: int
    old: PlateauParams
    gamma: PlateauParams
    confidence: float


@dataclass(frozen=True)
class RoundResult:
    epoch: int
    mean_confidence: float
    num_selected: int
    num_applied: int
    trace: tuple[TraceRecord, ...]
    inversions: tuple[tuple[str, int], ...]


def neighbor_centers(distributions: list[SamplingDistribution]) -> dict[tuple[str, int], tuple[float, float]]:
    """(previous, next) center for every distribution, with virtual ends at -1 and L."""
    by_video: dict[str, list[SamplingDistribution]] = {}
    for d in distributions:
        by_video.setdefault(d.video_id, []).append(d)
    out = {}
    for dists in by_video.values():
        dists = sorted(dists, key=lambda d: d.instance_index)
        centers = [-1.0] + [d.params.c for d in dists] + [float(dists[0].video_length)]
        for i, d in enumerate(dists):
            out[d.key] = (centers[i], centers[i + 2])
    return out


def refine_round(
    distributions: list[SamplingDistribution],
    score_matrices: dict[str, ScoreMatrix],
    cfg: RefineConfig,
    epoch: int = 0,
    threads: int = 1,
) -> tuple[list[SamplingDistribution], RoundResult]:
    """Generate, select, rank and apply updates for every distribution at once.

    Neighbor centers are read before any update, and all selected updates are
    applied together, so the result does not depend on processing order.
    """
    neighbors = neighbor_centers(distributions)
    # distributions sharing a (video, class) column share a fit cache, so they run in one task
    groups: dict[tuple[str, int], list[SamplingDistribution]] = {}
    for d in distributions:
        groups.setdefault((d.video_id, d.class_label), []).append(d)

    def best_for_group(group_key):
        video_id, k = group_key
        matrix = score_matrices[video_id]
        col = _column(matrix, k)
        cache: dict = {}
        res = []
        for d in groups[group_key]:
            props = generate_proposals(matrix, d, neighbors[d.key], cfg, cache)
            res.append((d.key, select_best(props, d.params, col)))
        return res

    keys = sorted(groups)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(best_for_group, keys))
    else:
        results = [best_for_group(k) for k in keys]
    best = dict(pair for group in results for pair in group)

    selected = [best[d.key] for d in sorted(distributions, key=lambda d: d.key) if best[d.key] is not None]
    applied = global_top_R(selected, cfg.z) if selected else []
    chosen = {p.target: p for p in applied}

    new_dists, trace = [], []
    for d in distributions:
        p = chosen.get(d.key)
        if p is None:
            new_dists.append(d)
            continue
        updated = apply_update(d.params, p.gamma, cfg.lambdas, d.video_length)
        new_dists.append(d.with_params(updated))
        trace.append(TraceRecord(epoch, d.video_id, d.instance_index, d.params, p.gamma, p.confidence))
    trace.sort(key=lambda r: (r.video_id, r.instance_index))

    mean_psi = float(np.mean([p.confidence for p in selected])) if selected else 0.0
    return new_dists, RoundResult(
        epoch, mean_psi, len(selected), len(applied), tuple(trace), tuple(find_inversions(new_dists))
    )


def find_inversions(distributions: list[SamplingDistribution]) -> list[tuple[str, int]]:
    """Instances whose center is not strictly after their predecessor's."""
    out = []
    by_key = {d.key: d for d in distributions}
    for key, (c_prev, _) in sorted(neighbor_centers(distributions).items()):
        if by_key[key].params.c <= c_prev and key[1] > 0:
            out.append(key)
    return out
