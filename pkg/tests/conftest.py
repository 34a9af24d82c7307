import pytest

from tograsp.synth import Dataset
from tograsp.synth.dataset import DatasetConfig, make_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Dataset:
    """40 scenes at S = 64; enough for every split type to be non-empty."""
    root = tmp_path_factory.mktemp("tiny")
    make_dataset(DatasetConfig(n_scenes=40, size=64, seed=3), root)
    return Dataset(root)
