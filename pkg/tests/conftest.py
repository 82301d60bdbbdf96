"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from src.domain.models import MarginSpec, SynthSpec, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_instance(rng):
    """Raw features, raw centres and labels of a small dense problem"""
    features = rng.standard_normal((6, 5)) * 2.5
    centres = rng.standard_normal((5, 7))
    labels = rng.integers(0, 7, size=6)
    return features, centres, labels


@pytest.fixture
def arcface():
    return MarginSpec.preset("arcface")


@pytest.fixture
def tiny_synth():
    return SynthSpec(n_classes=4, samples_per_class=20, d_in=6, kappa=50.0, seed=3)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(total_iters=30, lr_drops=(20,), batch_size=32, hidden=8,
                       embedding_dim=3, seed=5)
