"""INI experiment configs mapped onto the dataclass configs.

Sections ``[synth]``, ``[train]``, ``[curriculum]`` and ``[refine]``; every key
must name a field of the matching dataclass. Sequences are comma separated and
a curriculum ramp is written ``ramp = 125:0.75, 150:1.0``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .curriculum import CurriculumSchedule
from .errors import ConfigError
from .refine import RefineConfig
from .synthdata import SynthConfig
from .trainer import TrainConfig

SECTIONS = ("synth", "train", "curriculum", "refine")
# trainer fields that live in their own section or are debug-only
_TRAIN_EXCLUDED = {"curriculum", "refine", "base_h", "refine_enabled"}


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig | None
    train: TrainConfig = field(default_factory=TrainConfig)

    def as_dict(self) -> dict:
        """Every effective setting, defaults included."""
        t = self.train
        return {
            "synth": None if self.synth is None else dataclasses.asdict(self.synth),
            "train": {f.name: getattr(t, f.name) for f in dataclasses.fields(t) if f.name not in _TRAIN_EXCLUDED},
            "curriculum": {"base_h": t.schedule().base_h, "ramp": [list(r) for r in t.schedule().ramp]},
            "refine": dataclasses.asdict(t.refine),
            "refine_enabled": t.refine_enabled,
        }


def bench_config() -> ExperimentConfig:
    """The canonical benchmark run by ``tsrefine bench``."""
    synth = SynthConfig(
        num_videos=20,
        video_length=1000,
        num_classes=8,
        instances_per_video=10,
        feature_dim=16,
        num_test_videos=6,
        segment_length=(60, 150),
        gap_length=(5, 30),
        class_signal=2.4,
        noise_std=0.5,
        instance_jitter=0.6,
        successor_bias=0.8,
        ts_pad_seconds=1.0,
        seed=0,
    )
    return ExperimentConfig(synth, TrainConfig(base_h=1.0, update_epochs=300))


def _parse_value(text: str, annotation: str, where: str):
    text = text.strip()
    try:
        if annotation == "int":
            return int(text)
        if annotation == "float":
            return float(text)
        if annotation == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation.startswith("tuple["):
            inner = "int" if "int" in annotation else "float"
            return tuple(_parse_value(p, inner, where) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {annotation}") from None
    raise ConfigError(f"{where}: unsupported field type {annotation}")


def _section_kwargs(parser, section: str, cls, excluded=(), source: str = "") -> dict:
    if not parser.has_section(section):
        return {}
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in excluded}
    out = {}
    for key, value in parser.items(section):
        where = f"{source}[{section}] {key}"
        if key not in fields:
            raise ConfigError(f"{where}: unknown key; valid keys: {', '.join(sorted(fields))}")
        out[key] = _parse_value(value, str(fields[key].type), where)
    return out


def _parse_ramp(text: str, where: str) -> tuple[tuple[int, float], ...]:
    ramp = []
    for part in text.split(","):
        if not part.strip():
            continue
        epoch, sep, h = part.partition(":")
        if not sep:
            raise ConfigError(f"{where}: ramp entries are epoch:h, got {part.strip()!r}")
        ramp.append((_parse_value(epoch, "int", where), _parse_value(h, "float", where)))
    return tuple(ramp)


def parse_config(text: str, source: str = "<config>", require_synth: bool = True) -> ExperimentConfig:
    """Parse INI text; with ``require_synth=False`` a missing ``[synth]`` section yields ``synth=None``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; valid sections: {', '.join(SECTIONS)}")
    prefix = f"{source}: "

    synth_kwargs = _section_kwargs(parser, "synth", SynthConfig, source=prefix)
    required = [f.name for f in dataclasses.fields(SynthConfig) if f.default is dataclasses.MISSING]
    missing = [name for name in required if name not in synth_kwargs]
    skip_synth = not require_synth and not parser.has_section("synth")
    if missing and not skip_synth:
        raise ConfigError(f"{prefix}[synth] missing required field(s): {', '.join(missing)}")

    train_kwargs = _section_kwargs(parser, "train", TrainConfig, _TRAIN_EXCLUDED, prefix)
    refine = RefineConfig(**_section_kwargs(parser, "refine", RefineConfig, source=prefix))

    curriculum = None
    if parser.has_section("curriculum"):
        items = dict(parser.items("curriculum"))
        unknown = set(items) - {"base_h", "ramp"}
        if unknown:
            raise ConfigError(f"{prefix}[curriculum] {sorted(unknown)[0]}: unknown key; valid keys: base_h, ramp")
        if "base_h" in items:
            train_kwargs["base_h"] = _parse_value(items["base_h"], "float", f"{prefix}[curriculum] base_h")
        if "ramp" in items:
            ramp = _parse_ramp(items["ramp"], f"{prefix}[curriculum] ramp")
            try:
                curriculum = CurriculumSchedule(train_kwargs.get("base_h", 0.5), ramp)
            except ValueError as exc:
                raise ConfigError(f"{prefix}[curriculum] {exc}") from exc

    try:
        synth = None if skip_synth else SynthConfig(**synth_kwargs)
        if synth is not None:
            synth.validate()
        train = TrainConfig(**train_kwargs, curriculum=curriculum, refine=refine)
        train.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}{exc}") from exc
    return ExperimentConfig(synth, train)


def load_config(path, require_synth: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, str(path), require_synth)


def _ini_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_ini_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def to_ini(cfg: ExperimentConfig) -> str:
    """Serialize with every default materialized; ``parse_config(to_ini(c)) == c``."""
    d = cfg.as_dict()
    lines = []
    for section in ("synth", "train", "refine"):
        if d[section] is None:
            continue
        lines.append(f"[{section}]")
        lines += [f"{k} = {_ini_value(v)}" for k, v in d[section].items()]
        lines.append("")
    lines.append("[curriculum]")
    lines.append(f"base_h = {_ini_value(d['curriculum']['base_h'])}")
    if cfg.train.curriculum is not None:
        lines.append("ramp = " + ", ".join(f"{e}:{h!r}" for e, h in cfg.train.curriculum.ramp))
    return "\n".join(lines) + "\n"
