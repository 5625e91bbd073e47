"""Acceptance checks on the canonical synthetic benchmark.

``run_bench`` trains all three supervision modes and writes their outputs;
the ``check_*`` functions turn those outputs (or self-contained randomized
trials) into :class:`Criterion` results. The test suite and ``tsrefine bench``
share them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .classifier import cross_entropy_and_grad
from .config import ExperimentConfig, bench_config
from .evalreport import EvalReport, evaluate_state
from .plateau import PlateauParams, SamplingDistribution, eval_plateau
from .refine import (
    RefineConfig,
    UpdateProposal,
    apply_update,
    fit_plateau,
    generate_proposals,
    global_top_R,
    score_plateau,
    select_best,
)
from .synthdata import save_dataset, generate_synthetic
from .trainer import MODES
from .pipeline import train_to_dir, write_finished, write_manifest

RUNTIME_BUDGET_SECONDS = 300.0


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number}] {self.name}: {self.detail}"


@dataclass
class BenchRun:
    out_dir: Path
    config: ExperimentConfig
    states: dict
    reports: dict[str, dict[str, EvalReport]]
    seconds: float


def run_bench(out_dir, cfg: ExperimentConfig | None = None, threads: int = 1, refine_enabled: bool = True) -> BenchRun:
    """Generate the benchmark, train every mode and write all outputs under ``out_dir``."""
    cfg = cfg or bench_config()
    if not refine_enabled:
        cfg = replace(cfg, train=replace(cfg.train, refine_enabled=False))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    write_manifest(out, "bench", cfg, {}, {"threads": threads})
    dataset = generate_synthetic(cfg.synth)
    save_dataset(dataset, out / "dataset")
    states, reports = {}, {}
    for mode in MODES:
        state, _ = train_to_dir(dataset, mode, cfg.train, out / mode, {"dataset": out / "dataset"}, threads, cfg)
        states[mode] = state
        reports[mode] = evaluate_state(state, dataset)
    seconds = time.perf_counter() - t0
    write_finished(out, t0, {m: out / m for m in MODES})
    return BenchRun(out, cfg, states, reports, seconds)


# -- criteria computed from a bench run -----------------------------------------


def check_update_improves(run: BenchRun, margin: float = 0.02) -> Criterion:
    r = run.reports["ts"]
    before, after = r["before_update"].top1_accuracy, r["after_update"].top1_accuracy
    return Criterion(
        1, "update improves TS accuracy", after >= before + margin - 1e-12,
        f"before {before:.4f}, after {after:.4f}, required gain {margin}",
    )


def check_supervision_ordering(run: BenchRun, slack: float = 0.02) -> Criterion:
    acc = {m: run.reports[m]["after_update"].top1_accuracy for m in MODES}
    ok = acc["full"] >= acc["ts-in-gt"] - 1e-12 and acc["ts-in-gt"] >= acc["ts"] - slack - 1e-12
    return Criterion(
        2, "full >= TS-in-GT >= TS - 0.02", ok,
        f"full {acc['full']:.4f}, ts-in-gt {acc['ts-in-gt']:.4f}, ts {acc['ts']:.4f}",
    )


def check_alignment(run: BenchRun, margin: float = 0.10) -> Criterion:
    r = run.reports["ts"]
    b, a = r["before_update"], r["after_update"]
    ok = a.mean_iou >= b.mean_iou + margin - 1e-12 and a.mean_center_distance < b.mean_center_distance
    return Criterion(
        3, "alignment converges", ok,
        f"IoU {b.mean_iou:.4f} -> {a.mean_iou:.4f}, center distance "
        f"{b.mean_center_distance:.2f} -> {a.mean_center_distance:.2f} frames",
    )


def check_confidence_decay(run: BenchRun, ratio: float = 0.5) -> Criterion:
    hist = [psi for _, psi, _ in run.states["ts"].confidence_history]
    if not hist or hist[0] <= 0:
        return Criterion(4, "confidence decays", False, f"confidence history {hist}")
    return Criterion(
        4, "confidence decays", hist[-1] <= ratio * hist[0],
        f"{len(hist)} rounds, first {hist[0]:.4f}, last {hist[-1]:.4f}, ratio {hist[-1] / hist[0]:.3f} (<= {ratio})",
    )


def check_curriculum_separation(run: BenchRun) -> Criterion:
    b = run.reports["ts"]["before_update"]
    return Criterion(
        5, "curriculum separates in-GT frames", b.in_gt_selected > b.in_gt_discarded,
        f"h={b.curriculum_h}: selected {b.in_gt_selected:.4f}, discarded {b.in_gt_discarded:.4f}",
    )


def check_runtime(run: BenchRun, budget: float = RUNTIME_BUDGET_SECONDS) -> Criterion:
    return Criterion(1, "runtime budget", run.seconds < budget, f"{run.seconds:.1f}s (< {budget:.0f}s)")


# -- exact-math suite ----------------------------------------------------------------


def _edge_identity_error(rng, trials: int) -> float:
    worst = 0.0
    for _ in range(trials):
        c, w, s = rng.uniform(-50, 500), rng.uniform(0.5, 100), rng.uniform(0.01, 3.0)
        got = float(eval_plateau(c + w, PlateauParams(c, w, s)))
        worst = max(worst, abs(got - 1.0 / (2.0 * (1.0 + math.exp(-2.0 * s * w)))))
    return worst


def _interpolation_error(rng, trials: int) -> float:
    got = apply_update(PlateauParams(100, 45, 0.75), PlateauParams(120, 30, 1.0), (0.5, 0.25, 0.25))
    worst = max(abs(a - b) for a, b in zip(got.as_tuple(), (110.0, 41.25, 0.8125)))
    for _ in range(trials):
        beta = PlateauParams(rng.uniform(0, 500), rng.uniform(1, 80), rng.uniform(0.01, 2))
        gamma = PlateauParams(rng.uniform(0, 500), rng.uniform(1, 80), rng.uniform(0.01, 2))
        lam = tuple(rng.uniform(0, 1, 3))
        got = apply_update(beta, gamma, lam)
        want = [b - l * (b - g) for b, g, l in zip(beta.as_tuple(), gamma.as_tuple(), lam)]
        worst = max(worst, *(abs(a - b) for a, b in zip(got.as_tuple(), want)))
    return worst


def _rho_psi_error(rng, trials: int) -> float:
    # support of three frames {9, 10, 11} holding 0.1, 0.2, 0.6
    scores = np.zeros(30)
    scores[9:12] = [0.1, 0.2, 0.6]
    worst = abs(score_plateau(PlateauParams(10.0, 1.5, 5.0), scores) - 0.3)
    for _ in range(trials):
        n = int(rng.integers(30, 120))
        col = rng.uniform(0, 1, n)
        beta = PlateauParams(rng.uniform(0, n - 1), rng.uniform(1, 20), rng.uniform(0.1, 2))
        props = [
            UpdateProposal(PlateauParams(rng.uniform(0, n - 1), rng.uniform(1, 20), rng.uniform(0.1, 2)), ("v", 0), 0, 0, 0)
            for _ in range(5)
        ]
        worst = max(worst, abs(score_plateau(beta, col) - oracle_rho(beta, col)))
        for p in props:
            psi = oracle_rho(p.gamma, col) - oracle_rho(beta, col)
            best = select_best([p], beta, col)
            if best is not None:
                worst = max(worst, abs(best.confidence - (best.rho_new - best.rho_old)), abs(best.confidence - psi))
    return worst


def _gradient_error(rng, trials: int) -> float:
    """Worst relative error of the analytic cross-entropy gradient against central differences."""
    worst = 0.0
    eps = 1e-6
    for _ in range(trials):
        k, d, n = int(rng.integers(2, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 12))
        W, b = rng.normal(0, 1, (k, d)), rng.normal(0, 1, k)
        X, y = rng.normal(0, 1, (n, d)), rng.integers(0, k, n)
        _, dW, db = cross_entropy_and_grad(W, b, X, y)
        analytic = np.concatenate([dW.ravel(), db])
        theta = np.concatenate([W.ravel(), b])
        numeric = np.empty_like(theta)
        for i in range(theta.size):
            hi, lo = theta.copy(), theta.copy()
            hi[i] += eps
            lo[i] -= eps
            fh = cross_entropy_and_grad(hi[: k * d].reshape(k, d), hi[k * d:], X, y)[0]
            fl = cross_entropy_and_grad(lo[: k * d].reshape(k, d), lo[k * d:], X, y)[0]
            numeric[i] = (fh - fl) / (2 * eps)
        scale = max(np.max(np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
    return worst


def check_exact_math(seed: int = 6, trials: int = 200) -> Criterion:
    rng = np.random.default_rng(seed)
    errors = {
        "edge identity": (_edge_identity_error(rng, trials), 1e-12),
        "interpolation": (_interpolation_error(rng, trials), 1e-12),
        "rho/psi": (_rho_psi_error(rng, trials), 1e-12),
        "gradient (relative)": (_gradient_error(rng, 50), 1e-4),
    }
    ok = all(err <= tol for err, tol in errors.values())
    detail = ", ".join(f"{k} {err:.1e} (tol {tol:.0e})" for k, (err, tol) in errors.items())
    return Criterion(6, "exact-math suite", ok, detail)


# -- oracles -------------------------------------------------------------------------


def oracle_runs(scores, tau: float, min_len: int) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, v in enumerate(list(scores) + [-math.inf]):
        if v > tau and start is None:
            start = i
        elif not v > tau and start is not None:
            if i - start >= min_len:
                runs.append((start, i - 1))
            start = None
    return runs


def oracle_proposals(col, dist, neighbors, cfg: RefineConfig) -> set:
    """Every (tau, component) pair fitted independently."""
    c_prev, c_next = neighbors
    rho_old = oracle_rho(dist.params, col)
    out = set()
    for tau in cfg.tau_grid:
        for interval in oracle_runs(col, tau, cfg.min_component):
            gamma = fit_plateau(col, interval, cfg.s_default)
            if c_prev < gamma.c < c_next:
                out.add((interval, gamma.as_tuple(), round(oracle_rho(gamma, col) - rho_old, 12)))
    return out


def oracle_rho(p: PlateauParams, col) -> float:
    inside = [
        col[x] for x in range(len(col))
        if 1.0 / ((math.exp(min(p.s * (x - p.c - p.w), 700)) + 1) * (math.exp(min(p.s * (p.c - p.w - x), 700)) + 1)) > 0.5
    ]
    return math.fsum(inside) / len(inside) if inside else 0.0


def oracle_select_best(proposals, beta, col):
    best = None
    for p in proposals:
        psi = oracle_rho(p.gamma, col) - oracle_rho(beta, col)
        if psi <= 0:
            continue
        if best is None:
            best = (p, psi)
            continue
        q, q_psi = best
        if psi > q_psi or (
            psi == q_psi
            and (abs(p.gamma.c - beta.c), p.gamma.c) < (abs(q.gamma.c - beta.c), q.gamma.c)
        ):
            best = (p, psi)
    return best


def oracle_top_R(selected, z: float) -> list:
    r = math.ceil(Fraction(repr(z)) * len(selected))
    remaining = list(selected)
    out = []
    for _ in range(r):
        pick = remaining[0]
        for p in remaining[1:]:
            if p.confidence > pick.confidence or (p.confidence == pick.confidence and p.target < pick.target):
                pick = p
        out.append(pick)
        remaining.remove(pick)
    return out


def random_score_column(rng, n: int) -> np.ndarray:
    x = np.arange(n)
    col = np.zeros(n)
    for _ in range(int(rng.integers(1, 4))):
        p = PlateauParams(rng.uniform(0, n), rng.uniform(3, n / 4), rng.uniform(0.2, 2))
        col = np.maximum(col, rng.uniform(0.3, 1.0) * eval_plateau(x, p))
    return np.clip(col + rng.normal(0, 0.05, n), 0.0, 1.0)


def _proposal_mismatches(rng, trials: int) -> int:
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(30, 121))
        col = random_score_column(rng, n)
        cfg = RefineConfig(min_component=int(rng.integers(1, 16)))
        dist = SamplingDistribution(PlateauParams(rng.uniform(0, n - 1), rng.uniform(2, 20), 0.75), "v", 0, 1, n)
        lo = rng.uniform(-1, n / 2)
        neighbors = (lo, rng.uniform(lo + 1, n + 1))
        got = {
            (p.interval, p.gamma.as_tuple(), round(p.confidence, 12))
            for p in generate_proposals(col[:, None], dist, neighbors, cfg)
        }
        bad += got != oracle_proposals(col, dist, neighbors, cfg)
    return bad


def _select_mismatches(rng, trials: int) -> int:
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(30, 121))
        col = np.round(rng.uniform(0, 1, n), 1)  # coarse values make ψ ties common
        beta = PlateauParams(rng.uniform(0, n - 1), rng.uniform(1, 15), rng.uniform(0.2, 2))
        props = [
            UpdateProposal(PlateauParams(float(rng.integers(0, n)), float(rng.integers(1, 15)), 1.0), ("v", 1), 0, 0, 0)
            for _ in range(int(rng.integers(0, 8)))
        ]
        got = select_best(props, beta, col)
        want = oracle_select_best(props, beta, col)
        if (got is None) != (want is None):
            bad += 1
        elif got is not None and (got.gamma != want[0].gamma or abs(got.confidence - want[1]) > 1e-12):
            bad += 1
    return bad


def _top_r_mismatches(rng, trials: int) -> int:
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 40))
        psis = np.round(rng.uniform(0, 1, n), 1)
        selected = [
            UpdateProposal(PlateauParams(1, 1, 1), (f"v{int(rng.integers(0, 3))}", i), float(psi), 0, 0)
            for i, psi in enumerate(psis)
        ]
        z = float(rng.choice([0.1, 0.25, 0.3, 0.5, 0.7, 1.0, rng.uniform(0.01, 1)]))
        got = [(p.target, p.confidence) for p in global_top_R(selected, z)]
        want = [(p.target, p.confidence) for p in oracle_top_R(selected, z)]
        bad += got != want
    return bad


def check_oracles(seed: int = 7, trials: int = 1000) -> Criterion:
    rng = np.random.default_rng(seed)
    counts = {
        "generate_proposals": _proposal_mismatches(rng, trials),
        "global_top_R": _top_r_mismatches(rng, trials),
        "select_best": _select_mismatches(rng, trials),
    }
    detail = ", ".join(f"{k} {v}/{trials} mismatches" for k, v in counts.items())
    return Criterion(7, "oracle suite", not any(counts.values()), detail)


# -- fit recovery ----------------------------------------------------------------------


def fit_trial(rng, video_length: int = 300) -> tuple[PlateauParams, PlateauParams]:
    """One noiseless recovery trial: ``(truth, fitted)``."""
    truth = PlateauParams(rng.uniform(100, 200), rng.uniform(10, 50), rng.uniform(0.25, 1.5))
    col = eval_plateau(np.arange(video_length), truth)
    above = np.flatnonzero(col > 0.5)
    return truth, fit_plateau(col, (int(above[0]), int(above[-1])))


def check_fit_recovery(seed: int = 8, trials: int = 100, required: int = 95) -> Criterion:
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(trials):
        truth, got = fit_trial(rng)
        ok += abs(got.c - truth.c) <= 2.0 and abs(got.w - truth.w) <= 0.1 * truth.w
    return Criterion(8, "fit recovery", ok >= required, f"{ok}/{trials} trials recovered (>= {required})")


# -- determinism ---------------------------------------------------------------------


def compared_files(out_dir) -> list[Path]:
    """Checkpoints, reports and CSVs under a bench directory, relative to it."""
    root = Path(out_dir)
    return sorted(
        p.relative_to(root) for p in root.rglob("*")
        if p.is_file() and (p.suffix in (".ckpt", ".csv") or p.name == "report.txt")
        and "dataset" not in p.relative_to(root).parts
    )


def check_determinism(dir_a, dir_b) -> Criterion:
    a, b = compared_files(dir_a), compared_files(dir_b)
    if a != b:
        return Criterion(9, "determinism", False, f"file sets differ: {sorted(set(a) ^ set(b))}")
    differing = [str(p) for p in a if (Path(dir_a) / p).read_bytes() != (Path(dir_b) / p).read_bytes()]
    return Criterion(
        9, "determinism", not differing and bool(a),
        f"{len(a)} files compared" + (f", differing: {differing}" if differing else ", all byte-identical"),
    )


def run_criteria(run: BenchRun) -> list[Criterion]:
    return [
        check_update_improves(run),
        check_supervision_ordering(run),
        check_alignment(run),
        check_confidence_decay(run),
        check_curriculum_separation(run),
        check_exact_math(),
        check_oracles(),
        check_fit_recovery(),
    ]
