import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from canbench.candata import LabeledDataset, SyntheticConfig, generate_synthetic, split_dataset

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(SyntheticConfig())


@pytest.fixture(scope="session")
def splits(synthetic):
    return split_dataset(synthetic, seed=42)


def make_ds(X, y, names=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    names = names or tuple(f"c{k}" for k in range(int(y.max()) + 1))
    return LabeledDataset(X, y, names)
