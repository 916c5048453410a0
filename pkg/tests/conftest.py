"""Shared fixtures: one desk-scale benchmark plus its trained models.

Training the desk models takes a couple of minutes, so everything derived
from them is session scoped; tests must treat these objects as read-only.
The micro profile shrinks every dimension until a full two-stage run fits
in about a second, for tests that exercise plumbing rather than quality.
"""

import pytest

from cola.cli import make_benchmark
from cola.config import load_config
from cola.metrics import evaluate
from cola.trainer import StageTwoToggles, train_stage1, train_stage2

MICRO_OVERRIDES = {
    "data": {"size": 32, "train_samples": 12, "test_samples": 4},
    "model": {"levels": 3, "widths": [4, 8, 16]},
    "lqa": {"pool_grid": 4},
    "stage1": {"epochs": 2, "batch_size": 4},
    "stage2": {"epochs": 2, "batch_size": 4},
}


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config(profile="desk", env={})


@pytest.fixture(scope="session")
def benchmark(desk_cfg):
    return make_benchmark(desk_cfg)


@pytest.fixture(scope="session")
def micro_cfg():
    return load_config(profile="desk", overrides=MICRO_OVERRIDES, env={})


@pytest.fixture(scope="session")
def micro_benchmark(micro_cfg):
    return make_benchmark(micro_cfg)


@pytest.fixture(scope="session")
def micro_stage1(micro_cfg, micro_benchmark):
    return train_stage1(micro_cfg, micro_benchmark[0])


@pytest.fixture(scope="session")
def stage1_state(desk_cfg, benchmark):
    return train_stage1(desk_cfg, benchmark[0])


@pytest.fixture(scope="session")
def stage2_state(stage1_state, benchmark):
    return train_stage2(stage1_state, benchmark[0])


@pytest.fixture(scope="session")
def md_state(stage1_state, benchmark):
    toggles = StageTwoToggles(copy=False, zconv=False, freeze=False, md=True)
    return train_stage2(stage1_state, benchmark[0], toggles=toggles)


@pytest.fixture(scope="session")
def stage1_report(stage1_state, benchmark):
    return evaluate(stage1_state, benchmark[1])


@pytest.fixture(scope="session")
def stage2_report(stage2_state, benchmark):
    return evaluate(stage2_state, benchmark[1])


@pytest.fixture(scope="session")
def md_report(md_state, benchmark):
    return evaluate(md_state, benchmark[1])
