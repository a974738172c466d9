"""Shared fixtures.

Training runs are the expensive part of this suite, so fully trained
models are built once per session and cached by seed; every test file
that needs "a trained model on the standard world" pulls from here.
"""

import time

import numpy as np
import pytest

from modgate.datagen import Dataset, GenSpec, generate
from modgate.evaluation import evaluate_with_audit, run_baseline
from modgate.model import Model
from modgate.training import TrainConfig, train

SEEDS = (3, 4, 5)


def split_world(spec, n_train):
    """Generate one world and split it train/eval, same means and projections."""
    world = generate(spec)
    if not 0 < n_train < len(world.videos):
        raise ValueError("split point outside the dataset")
    head = Dataset(world.videos[:n_train], world.n_classes, world.recog_dims,
                   world.policy_dims, world.segments)
    tail = Dataset(world.videos[n_train:], world.n_classes, world.recog_dims,
                   world.policy_dims, world.segments)
    return head, tail


class Bundle:
    """A full schedule on the standard world plus the two cheap baselines."""

    def __init__(self, seed):
        start = time.perf_counter()
        self.seed = seed
        self.spec = GenSpec(n_videos=300, seed=seed)
        self.train_data, self.eval_data = split_world(self.spec, 200)
        self.cfg = TrainConfig(seed=seed)
        model = Model(self.spec.modalities, self.train_data.n_classes, seed=seed)
        self.model, self.report = train(model, self.train_data, self.cfg)
        self.adaptive = evaluate_with_audit(self.model, self.eval_data, seed=seed)
        _, self.fusion = run_baseline(
            "weighted-fusion", self.train_data, self.eval_data,
            self.spec.modalities, self.cfg,
        )
        _, self.random = run_baseline(
            "random-policy", self.train_data, self.eval_data,
            self.spec.modalities, self.cfg,
        )
        self.build_seconds = time.perf_counter() - start


class SmallBundle:
    """A short schedule on a small world, for mechanical (not quality) checks."""

    def __init__(self, seed=3):
        self.seed = seed
        self.spec = GenSpec(n_videos=60, seed=seed)
        self.train_data, self.eval_data = split_world(self.spec, 40)
        self.cfg = TrainConfig(warmup_epochs=1, alternate_epochs=2,
                               finetune_epochs=1, seed=seed)
        model = Model(self.spec.modalities, self.train_data.n_classes, seed=seed)
        self.model, self.report = train(model, self.train_data, self.cfg)


_BUNDLES = {}
_SMALL = {}


def bundle_for(seed):
    if seed not in _BUNDLES:
        _BUNDLES[seed] = Bundle(seed)
    return _BUNDLES[seed]


def small_bundle_for(seed=3):
    if seed not in _SMALL:
        _SMALL[seed] = SmallBundle(seed)
    return _SMALL[seed]


@pytest.fixture(scope="session")
def main_bundle():
    return bundle_for(SEEDS[0])


@pytest.fixture(scope="session")
def small_bundle():
    return small_bundle_for()
