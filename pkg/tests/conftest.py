"""Shared fixtures: session-scoped synthetic datasets and the tiny model config.

Datasets are generated once per session because JPEG encoding dominates
test time; tests must treat them as read-only and copy before mutating.
"""

import pytest

from gazemae.data import SyntheticSpec, generate_synthetic_dataset
from gazemae.model import ModelConfig


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig.preset("tiny_test")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Minimal 3-class dataset: 2 train / 1 val / 1 test videos, 12 frames each."""
    root = tmp_path_factory.mktemp("small_ds")
    spec = SyntheticSpec(
        n_train=2, n_val=1, n_test=1, frames_per_video=12, frame_hw=(64, 64), n_classes=3
    )
    train = generate_synthetic_dataset(spec, root, seed=11)
    return root, spec, train


@pytest.fixture(scope="session")
def learn_dataset(tmp_path_factory):
    """Gaze-correlated 3-class dataset large enough to show a learning signal."""
    root = tmp_path_factory.mktemp("learn_ds")
    spec = SyntheticSpec(
        n_train=6, n_val=2, n_test=2, frames_per_video=30,
        frame_hw=(64, 64), n_classes=3, pattern_size=16,
    )
    train = generate_synthetic_dataset(spec, root, seed=3)
    return root, spec, train
