import numpy as np
import pytest

from specaware.config import ModelConfig
from specaware.data import build_dataset, compute_stats, default_sensor_set
from specaware.mae import SpecAwareMAE
from specaware.meta import TextEmbeddingProvider
from specaware.sensors import uniform_sensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_provider():
    return TextEmbeddingProvider.hashed_only(12)


@pytest.fixture(scope="session")
def toy_model_f64(toy_provider):
    return SpecAwareMAE(ModelConfig.toy(), toy_provider, dtype=np.float64)


def toy_spec(c, start=450.0, step=40.0, fwhm=8.0, name="toy"):
    return uniform_sensor(name, "L1", c, start, start + step * (c - 1), fwhm)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three L1 sensors, 8 accepted 16x16 patches each."""
    root = tmp_path_factory.mktemp("small_ds")
    ds = build_dataset(root, default_sensor_set(), per_sensor=8, size=16, seed=3)
    stats = compute_stats(ds, seed=0)
    stats.save(root / ds.stats_file)
    return ds, stats


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
