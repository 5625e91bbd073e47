"""On-disk experiment steps shared by the command line and the benchmark.

Each step writes a ``manifest.json`` into its output directory before doing any
work, recording the effective configuration, seeds and paths. Completion time
goes in a separate ``finished.json`` so the manifest is never rewritten.
"""

from __future__ import annotations

import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .evalreport import emit_report
from .synthdata import Dataset, generate_synthetic, load_dataset, save_dataset
from .trainer import (
    MODES,
    TrainConfig,
    checkpoint,
    init_state,
    restore,
    run_base_phase,
    run_update_phase,
)

log = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{path}: cannot create directory ({exc.strerror})") from exc
    return path


def write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig | None, inputs: dict, extra: dict | None = None):
    """Record what is about to run. Written once, before the work starts."""
    manifest = {
        "tool": "tsrefine",
        "version": __version__,
        "command": command,
        "config": None if cfg is None else cfg.as_dict(),
        "seeds": None if cfg is None else _seeds(cfg),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "output": str(out_dir),
        "started": _now(),
        **(extra or {}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_finished(out_dir: Path, started: float, outputs: dict) -> None:
    record = {
        "finished": _now(),
        "elapsed_seconds": round(time.perf_counter() - started, 3),
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    (out_dir / "finished.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _seeds(cfg: ExperimentConfig) -> dict:
    seeds = {"sampling": cfg.train.sampling_seed, "model": cfg.train.model_seed}
    if cfg.synth is not None:
        seeds["data"] = cfg.synth.seed
    return seeds


def generate_to_dir(cfg: ExperimentConfig, out_dir) -> Dataset:
    out = _mkdir(Path(out_dir))
    t0 = time.perf_counter()
    write_manifest(out, "generate", cfg, {})
    dataset = generate_synthetic(cfg.synth)
    save_dataset(dataset, out / "dataset")
    write_finished(out, t0, {"dataset": out / "dataset"})
    return dataset


def train_to_dir(
    dataset: Dataset,
    mode: str,
    cfg: TrainConfig,
    out_dir,
    inputs: dict | None = None,
    threads: int = 1,
    experiment: ExperimentConfig | None = None,
):
    """Train one supervision mode and write checkpoints, curves and the report.

    Timestamp modes get ``before_update.ckpt`` (end of base phase) and
    ``after_update.ckpt``; ``full`` gets only ``model.ckpt`` and no refine files.
    """
    if mode not in MODES:
        raise ValueError(f"unknown supervision mode {mode!r}; valid modes: {', '.join(MODES)}")
    out = _mkdir(Path(out_dir))
    t0 = time.perf_counter()
    experiment = experiment or ExperimentConfig(None, cfg)
    write_manifest(out, "train", experiment, inputs or {}, {"mode": mode, "threads": threads})

    state = init_state(dataset, mode, cfg)
    run_base_phase(state, dataset, cfg, threads)
    outputs = {}
    if mode != "full":
        outputs["before_update"] = out / "before_update.ckpt"
        checkpoint(state, outputs["before_update"])
    run_update_phase(state, dataset, cfg, threads)
    final = out / ("model.ckpt" if mode == "full" else "after_update.ckpt")
    checkpoint(state, final)
    outputs["final"] = final
    outputs.update(emit_report(state, dataset, out))
    write_finished(out, t0, outputs)
    log.info("%s: trained %d epochs in %.1fs", mode, state.epoch, time.perf_counter() - t0)
    return state, outputs


def eval_to_dir(checkpoint_path, dataset_dir, out_dir) -> dict:
    out = _mkdir(Path(out_dir))
    t0 = time.perf_counter()
    write_manifest(out, "eval", None, {"checkpoint": checkpoint_path, "dataset": dataset_dir})
    state = restore(checkpoint_path)
    dataset = load_dataset(dataset_dir)
    outputs = emit_report(state, dataset, out)
    write_finished(out, t0, outputs)
    return outputs
