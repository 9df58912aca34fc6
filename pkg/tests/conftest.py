"""
Shared fixtures: seeded generators, a tiny run configuration, a tiny synthetic dataset
and a finished training run on it.
"""
import numpy as np
import pytest

from hybridlab.config import RunConfig
from hybridlab.datapipe import synth_generate
from hybridlab.training import train

TINY = {
    'input_size': 16,
    'vgg_plan': [[2, 1], [4, 1]],
    'mobile_plan': [[2, 1], [4, 2], [4, 1], [4, 1], [4, 1]],
    'mobile_stem': 2,
    'hidden_units': 8,
    'augment_k_normal': 1,
    'augment_k_all': 1,
    'epochs': 2,
    'batch_size': 8,
    'single_thread': True,
    'workers': 1,
}


@pytest.fixture
def rng():
    """Seeded generator for reproducible test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Run configuration with 16x16 inputs and widths of at most 4."""
    return RunConfig.from_mapping(TINY)


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory):
    """Ten 16x16 synthetic images per class, split 7/2/1 per class."""
    root = tmp_path_factory.mktemp('synth')
    synth_generate(root, per_class=10, image_size=16, seed=3)
    return root


@pytest.fixture(scope='session')
def tiny_run(tiny_dataset, tmp_path_factory):
    """A finished two-epoch training run on the tiny dataset."""
    return train(RunConfig.from_mapping(TINY), tiny_dataset, tmp_path_factory.mktemp('run'))
