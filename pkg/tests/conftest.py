"""Shared fixtures: small trained models cached per session."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from motionprior.skeleton import ObservationModel, catalogue_spec, generate_synthetic_action, observe_sequence
from motionprior.transitions import build_separate_bank, build_unified_bank

settings.register_profile("repo", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def gait_sequences():
    return {a: generate_synthetic_action(catalogue_spec(a), 40, noise_sd=0.01, seed=i)
            for i, a in enumerate(("walk", "kick"))}


@pytest.fixture(scope="session")
def obs_model():
    return ObservationModel.random(10, 8, noise_sd=0.0, seed=3)


@pytest.fixture(scope="session")
def gait_features(gait_sequences, obs_model):
    return {a: observe_sequence(s, obs_model) for a, s in gait_sequences.items()}


@pytest.fixture(scope="session")
def separate_bank(gait_sequences, gait_features):
    groups = {a: [s] for a, s in gait_sequences.items()}
    feats = {a: [f] for a, f in gait_features.items()}
    return build_separate_bank(groups, d=2, k_paths=3, features=feats, max_iters=150, seed=0)


@pytest.fixture(scope="session")
def unified_bank(gait_sequences, gait_features):
    groups = {a: [s] for a, s in gait_sequences.items()}
    feats = {a: [f] for a, f in gait_features.items()}
    return build_unified_bank(groups, d=2, k_paths=3, topo_weight=10.0, features=feats, max_iters=150, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
