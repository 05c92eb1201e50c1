"""Shared fixtures: one tiny dataset on disk and one short-run checkpoint.

Session scope keeps the cost of training to a single 2-step run for all of
the CLI and service tests.
"""
import pytest

from sketchmesh.data import DatasetConfig, build_dataset, load_dataset
from sketchmesh.training import TrainConfig, train


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data16")
    build_dataset(DatasetConfig(n_samples=4, resolution=16, seed=5), out)
    return out


@pytest.fixture(scope="session")
def checkpoint_path(dataset_dir, tmp_path_factory):
    samples = load_dataset(dataset_dir)
    cfg = TrainConfig(steps=2, batch=2, n_views=1, resolution=16, seed=0)
    _, _, blob = train(samples, cfg)
    p = tmp_path_factory.mktemp("ckpt") / "tiny.d3sk"
    p.write_bytes(blob)
    return p
