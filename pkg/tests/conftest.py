"""Shared fixtures. The slow ones (trained models) are session-scoped so
unit tests and the acceptance suite reuse a single training run."""

import numpy as np
import pytest

from dreamnav.env import WorldConfig, WorldSim
from dreamnav.world_model import (
    DetectorTrainConfig,
    WorldModelConfig,
    WorldTrainConfig,
    train_reward_detector,
    train_world_model,
)


@pytest.fixture(scope="session")
def small_dataset():
    """~600 transitions, enough for smoke-level training."""
    sim = WorldSim(WorldConfig())
    return sim.collect_random(25, max_len=25, rng=np.random.default_rng(100))


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return small_dataset.split(0.15, np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_world_model(small_split):
    """A briefly trained conv model plus its goal detector; shared across
    the suite to keep runtime sane. Not meant to be strong, just working."""
    train, _ = small_split
    model, history = train_world_model(
        train, WorldModelConfig(), WorldTrainConfig(epochs=4, seed=7)
    )
    sim = WorldSim(WorldConfig())
    imgs, labels = sim.sample_labeled_states(700, np.random.default_rng(11))
    latents = model.encode_mu_np(imgs)
    train_reward_detector(model, latents, labels, DetectorTrainConfig(seed=3))
    return model, history


@pytest.fixture(scope="session")
def untrained_model():
    from dreamnav.world_model import WorldModel

    return WorldModel(WorldModelConfig(), np.random.default_rng(5))
