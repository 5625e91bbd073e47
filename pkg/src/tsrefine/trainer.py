"""Training loop: base phase with frozen distributions, then periodic refinement.

Every epoch draws its randomness from generators keyed on ``(seed, epoch)``,
so a run restored from a checkpoint continues exactly like an uninterrupted
one.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import LinearSoftmaxModel, score_video
from .curriculum import CurriculumSchedule, SampledFrame, partition_top_h, sample_pool
from .errors import FormatError, TsRefineError
from .plateau import PlateauParams, SamplingDistribution
from .refine import RefineConfig, TraceRecord, refine_round
from .synthdata import Annotation, Dataset

log = logging.getLogger(__name__)

MODES = ("ts", "ts-in-gt", "full")
CHECKPOINT_MAGIC = b"TSRCKPT1"


class TrainingDiverged(TsRefineError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    init_w: float = 45.0
    init_s: float = 0.75
    base_epochs: int = 100
    update_epochs: int = 100
    frames_per_instance: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1
    base_h: float = 0.5
    curriculum: CurriculumSchedule | None = None
    refine: RefineConfig = field(default_factory=RefineConfig)
    sampling_seed: int = 1
    model_seed: int = 2
    refine_enabled: bool = True

    def validate(self) -> None:
        if self.init_w <= 0 or self.init_s <= 0:
            raise ValueError("init_w and init_s must be positive")
        for name in ("base_epochs", "update_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("frames_per_instance", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.refine.validate()
        self.schedule()

    def schedule(self) -> CurriculumSchedule:
        if self.curriculum is not None:
            return self.curriculum
        return CurriculumSchedule.default(self.base_h, self.base_epochs, self.update_epochs)

    @property
    def total_epochs(self) -> int:
        return self.base_epochs + self.update_epochs


@dataclass
class TrainState:
    mode: str
    epoch: int
    model: LinearSoftmaxModel
    distributions: list[SamplingDistribution]
    confidence_history: list[tuple[int, float, int]] = field(default_factory=list)
    loss_history: list[tuple[int, float]] = field(default_factory=list)
    trace: list[TraceRecord] = field(default_factory=list)
    param_history: list[tuple[int, list[tuple[float, float, float]]]] = field(default_factory=list)
    inversions: list[tuple[int, str, int]] = field(default_factory=list)
    base_model: bytes | None = None
    base_distributions: list[SamplingDistribution] | None = None

    @property
    def has_base_snapshot(self) -> bool:
        return self.base_model is not None

    def base_state(self) -> "TrainState":
        """The state as it was at the end of the base phase."""
        if self.base_model is None:
            raise ValueError("no base-phase snapshot recorded")
        model = LinearSoftmaxModel.from_bytes(self.base_model, self.model.learning_rate, self.model.seed)
        return TrainState(self.mode, -1, model, list(self.base_distributions))


def init_distributions(annotations: list[Annotation], video_lengths: dict[str, int], cfg: TrainConfig):
    """One plateau per timestamp, centred on it, with the default width and slope."""
    out = []
    for a in annotations:
        length = video_lengths[a.video_id]
        if not 0 <= a.timestamp < length:
            raise ValueError(f"annotation at frame {a.timestamp} outside video {a.video_id} of length {length}")
        params = PlateauParams(float(a.timestamp), cfg.init_w, cfg.init_s).clamped(length)
        out.append(SamplingDistribution(params, a.video_id, a.class_label, a.instance_index, length))
    return out


def init_state(dataset: Dataset, mode: str, cfg: TrainConfig) -> TrainState:
    if mode not in MODES:
        raise ValueError(f"unknown supervision mode {mode!r}; valid modes: {', '.join(MODES)}")
    cfg.validate()
    model = LinearSoftmaxModel(dataset.num_classes, dataset.feature_dim, cfg.learning_rate, cfg.model_seed)
    dists = []
    if mode != "full":
        lengths = {v.video_id: v.length for v in dataset.train}
        anns = [a for v in dataset.train for a in v.annotations[mode]]
        dists = init_distributions(anns, lengths, cfg)
    state = TrainState(mode, 0, model, dists)
    if dists:
        state.param_history.append((0, [d.params.as_tuple() for d in dists]))
    return state


def sample_gt_pool(dataset: Dataset, rng: np.random.Generator, frames_per_instance: int) -> list[SampledFrame]:
    """Fully supervised baseline: uniform frames inside every labelled segment."""
    pool = []
    for video in dataset.train:
        for i, seg in enumerate(video.gt_segments):
            for x in rng.integers(seg.start, seg.end, size=frames_per_instance):
                pool.append(SampledFrame(video.video_id, int(x), seg.class_label, i))
    return pool


def epoch_pool(state: TrainState, dataset: Dataset, cfg: TrainConfig, epoch: int) -> list[SampledFrame]:
    rng = np.random.default_rng([cfg.sampling_seed, epoch])
    if state.mode == "full":
        return sample_gt_pool(dataset, rng, cfg.frames_per_instance)
    return sample_pool(state.distributions, rng, cfg.frames_per_instance)


def score_all(model, dataset: Dataset, threads: int = 1):
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            matrices = list(pool.map(lambda v: score_video(model, v), dataset.train))
    else:
        matrices = [score_video(model, v) for v in dataset.train]
    return {m.video_id: m for m in matrices}


def _update_round(state: TrainState, dataset: Dataset, cfg: TrainConfig, threads: int) -> None:
    scores = score_all(state.model, dataset, threads)
    new_dists, result = refine_round(state.distributions, scores, cfg.refine, state.epoch, threads)
    state.distributions = new_dists
    state.confidence_history.append((state.epoch, result.mean_confidence, result.num_applied))
    state.trace.extend(result.trace)
    state.param_history.append((state.epoch, [d.params.as_tuple() for d in new_dists]))
    for vid, idx in result.inversions:
        log.warning("epoch %d: center of %s instance %d no longer after its predecessor", state.epoch, vid, idx)
        state.inversions.append((state.epoch, vid, idx))
    log.info(
        "epoch %d: refine round, mean confidence %.4f over %d proposals, %d applied",
        state.epoch, result.mean_confidence, result.num_selected, result.num_applied,
    )


def run_epoch(state: TrainState, dataset: Dataset, cfg: TrainConfig, threads: int = 1) -> None:
    e = state.epoch
    in_update = e >= cfg.base_epochs
    if (
        in_update
        and state.mode != "full"
        and cfg.refine_enabled
        and (e - cfg.base_epochs) % cfg.refine.update_period == 0
    ):
        _update_round(state, dataset, cfg, threads)

    pool = epoch_pool(state, dataset, cfg, e)
    h = 1.0 if state.mode == "full" else cfg.schedule().h_at(e)
    if h < 1.0:
        selected, _ = partition_top_h(pool, score_all(state.model, dataset, threads), h)
    else:
        selected = pool
    videos = {v.video_id: v for v in dataset.train}
    features = np.stack([videos[f.video_id].features[f.frame] for f in selected])
    labels = np.array([f.class_label for f in selected], dtype=np.int64)

    order = np.random.default_rng([cfg.model_seed, e]).permutation(len(selected))
    losses = []
    for i in range(0, len(order), cfg.batch_size):
        idx = order[i:i + cfg.batch_size]
        loss = state.model.train_batch(features[idx], labels[idx])
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at epoch {e}, batch {i // cfg.batch_size}")
        losses.append(loss)
    state.loss_history.append((e, float(np.mean(losses))))
    state.epoch = e + 1


def run_until(state: TrainState, dataset: Dataset, cfg: TrainConfig, end_epoch: int, threads: int = 1) -> TrainState:
    while state.epoch < end_epoch:
        run_epoch(state, dataset, cfg, threads)
    return state


def run_base_phase(state: TrainState, dataset: Dataset, cfg: TrainConfig, threads: int = 1) -> TrainState:
    run_until(state, dataset, cfg, cfg.base_epochs, threads)
    if state.base_model is None and state.epoch == cfg.base_epochs:
        state.base_model = state.model.to_bytes()
        state.base_distributions = list(state.distributions)
    return state


def run_update_phase(state: TrainState, dataset: Dataset, cfg: TrainConfig, threads: int = 1) -> TrainState:
    if state.epoch < cfg.base_epochs:
        raise ValueError(f"base phase incomplete: epoch {state.epoch} < {cfg.base_epochs}")
    return run_until(state, dataset, cfg, cfg.total_epochs, threads)


def train(dataset: Dataset, mode: str, cfg: TrainConfig, threads: int = 1) -> TrainState:
    state = init_state(dataset, mode, cfg)
    run_base_phase(state, dataset, cfg, threads)
    return run_update_phase(state, dataset, cfg, threads)


# -- checkpoints ----------------------------------------------------------------
#
# layout: magic, then three blocks each prefixed by a little-endian u64 length:
# JSON state, model bytes, base-phase model bytes (empty when absent).


def _dist_to_json(d: SamplingDistribution) -> dict:
    return {
        "video_id": d.video_id,
        "instance_index": d.instance_index,
        "class_label": d.class_label,
        "video_length": d.video_length,
        "params": list(d.params.as_tuple()),
    }


def _dist_from_json(obj: dict) -> SamplingDistribution:
    return SamplingDistribution(
        PlateauParams(*obj["params"]), obj["video_id"], obj["class_label"], obj["instance_index"], obj["video_length"]
    )


def _state_json(state: TrainState) -> dict:
    return {
        "mode": state.mode,
        "epoch": state.epoch,
        "learning_rate": state.model.learning_rate,
        "model_seed": state.model.seed,
        "distributions": [_dist_to_json(d) for d in state.distributions],
        "base_distributions": None
        if state.base_distributions is None
        else [_dist_to_json(d) for d in state.base_distributions],
        "confidence_history": [list(r) for r in state.confidence_history],
        "loss_history": [list(r) for r in state.loss_history],
        "trace": [
            {**asdict(r), "old": list(r.old.as_tuple()), "gamma": list(r.gamma.as_tuple())} for r in state.trace
        ],
        "param_history": [[e, [list(p) for p in ps]] for e, ps in state.param_history],
        "inversions": [list(r) for r in state.inversions],
    }


def checkpoint_bytes(state: TrainState) -> bytes:
    blob = json.dumps(_state_json(state), sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC]
    for block in (blob, state.model.to_bytes(), state.base_model or b""):
        parts += [struct.pack("<Q", len(block)), block]
    return b"".join(parts)


def checkpoint(state: TrainState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state))


def state_from_bytes(data: bytes, source: str = "<bytes>") -> TrainState:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{source}: not a training checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    blocks = []
    for name in ("state", "model", "base model"):
        if pos + 8 > len(data):
            raise FormatError(f"{source}: truncated before {name} block")
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + n > len(data):
            raise FormatError(f"{source}: truncated {name} block ({len(data) - pos} of {n} bytes)")
        blocks.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise FormatError(f"{source}: {len(data) - pos} trailing bytes")
    try:
        obj = json.loads(blocks[0])
        model = LinearSoftmaxModel.from_bytes(blocks[1], obj["learning_rate"], obj["model_seed"])
        state = TrainState(
            mode=obj["mode"],
            epoch=obj["epoch"],
            model=model,
            distributions=[_dist_from_json(d) for d in obj["distributions"]],
            confidence_history=[(int(e), float(p), int(n)) for e, p, n in obj["confidence_history"]],
            loss_history=[(int(e), float(x)) for e, x in obj["loss_history"]],
            trace=[
                TraceRecord(
                    r["epoch"], r["video_id"], r["instance_index"],
                    PlateauParams(*r["old"]), PlateauParams(*r["gamma"]), r["confidence"],
                )
                for r in obj["trace"]
            ],
            param_history=[(int(e), [tuple(p) for p in ps]) for e, ps in obj["param_history"]],
            inversions=[(int(e), v, int(i)) for e, v, i in obj["inversions"]],
            base_model=blocks[2] or None,
            base_distributions=None
            if obj["base_distributions"] is None
            else [_dist_from_json(d) for d in obj["base_distributions"]],
        )
    except FormatError as exc:
        raise FormatError(f"{source}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: malformed state block ({exc})") from exc
    if state.mode not in MODES:
        raise FormatError(f"{source}: unknown mode {state.mode!r}")
    return state


def restore(path) -> TrainState:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return state_from_bytes(data, str(path))
