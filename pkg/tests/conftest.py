import pytest

from tsrefine.refine import RefineConfig
from tsrefine.synthdata import SynthConfig, generate_synthetic
from tsrefine.trainer import TrainConfig


def small_synth(**overrides) -> SynthConfig:
    base = dict(
        num_videos=4,
        video_length=300,
        num_classes=3,
        instances_per_video=3,
        feature_dim=6,
        num_test_videos=2,
        segment_length=(30, 60),
        gap_length=(5, 20),
        class_signal=2.0,
        noise_std=0.5,
        seed=3,
    )
    base.update(overrides)
    return SynthConfig(**base)


def small_train(**overrides) -> TrainConfig:
    base = dict(base_epochs=6, update_epochs=40, init_w=20.0, refine=RefineConfig(min_component=5))
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(small_synth())


# PASS/FAIL lines from the acceptance suite, shown after the run even when output is captured
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
