"""
Shared fixtures for the pointcube test suite.

Tests run from the repository root via ./run_tests.sh (or ./run_tests.py);
pytest.ini puts src/ on the path and deselects the slow end-to-end runs.
If pytest is started without that pytest.ini (another config file, or an
unrelated rootdir), the session stops with a message naming the runner.
"""
import logging
from pathlib import Path

import numpy as np
import pytest

from pointcube.geometry import PointCloud
from pointcube.labels import embed_label_sets
from pointcube.losses import LossConfig
from pointcube.model import ModelConfig, init_params
from pointcube.synth import SynthSpec, generate
from pointcube.training import TrainConfig

REPO_ROOT = Path(__file__).resolve().parent.parent


def pytest_configure(config):
    inipath = getattr(config, 'inipath', None)
    if inipath is None or Path(inipath).resolve() != REPO_ROOT / 'pytest.ini':
        pytest.exit(
            "\n[POINTCUBE TEST SUITE]\n\n"
            "pytest did not pick up the repository's pytest.ini (src/ path, 'slow' marker).\n"
            "Run the tests from the repository root with:\n"
            "  ./run_tests.sh          (fast suite)\n"
            "  ./run_tests.sh --all    (plus the slow end-to-end runs)\n",
            returncode=4
        )


@pytest.fixture(autouse=True)
def reset_pointcube_logger():
    """setup_logging() detaches the package logger from the root; undo that after each test."""
    yield
    logger = logging.getLogger('pointcube')
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model_config():
    return ModelConfig(d_e=16, d_out=8, d_et=12, heads=2, hidden=[16], ff_mult=2)


@pytest.fixture
def small_params(small_model_config, rng):
    return init_params(small_model_config, rng, np.float64)


@pytest.fixture
def make_cloud(rng):
    def _make(n=64, object_id='obj', class_name=None):
        return PointCloud(rng.normal(size=(n, 3)), id=object_id, class_name=class_name)
    return _make


@pytest.fixture
def tiny_dataset():
    """Three archetypes, four 64-point objects each."""
    specs = [SynthSpec(a, points=64, seed=3) for a in ('slab-table', 'vertical-pole', 'pole-on-slab')]
    return generate(specs, 4)


@pytest.fixture
def tiny_embeddings(tiny_dataset):
    return embed_label_sets(tiny_dataset.label_sets, dim=32)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs=2, batch_size=4, learning_rate=1e-2, seed=5, threads=1, dtype='float64',
                       model=ModelConfig(d_e=16, d_out=8, d_et=32, heads=2, hidden=[16]),
                       loss=LossConfig())
