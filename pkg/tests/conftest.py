import numpy as np
import pytest

from gscnn import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return data.DatasetSpec(seed=5, count=12, height=32, width=32, num_classes=4,
                            big_size=(8, 20), bar_length=(10, 24))


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_spec):
    out = tmp_path_factory.mktemp("ds")
    data.write_dataset(small_spec, str(out))
    return str(out)
