import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("vxc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "vxc"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 train / 2 test examples, 3 views, desk extents."""
    from vxc.data import build_dataset

    root = tmp_path_factory.mktemp("data") / "ds"
    build_dataset(root, n_train=4, n_test=2, V=3, seed=7)
    return root


@pytest.fixture(scope="session")
def tiny_data16(tmp_path_factory):
    """3 train examples at 16x16 with 8^3 grids, matching the tiny gradient-check models."""
    from vxc.data import build_dataset, load_split

    root = tmp_path_factory.mktemp("data16") / "ds"
    build_dataset(root, n_train=3, n_test=1, V=2, seed=2, D=8, height=16, width=16)
    return load_split(root, "train")


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The default corpus written by ``vxc gen-data`` with no size flags."""
    from vxc.cli import main

    root = tmp_path_factory.mktemp("desk") / "ds"
    assert main(["gen-data", "--out", str(root), "--seed", "0"]) == 0
    return root


@pytest.fixture(scope="session")
def desk_run(desk_corpus):
    """Cached 20-epoch desk-profile training runs, keyed by (kind, K)."""
    from threadpoolctl import threadpool_limits

    from vxc.data import load_split
    from vxc.joint import JointConfig
    from vxc.recon3d import Recon3DConfig
    from vxc.trainer import TrainConfig, Trainer

    cache = {}

    def run(kind: str, K: int = 64):
        if (kind, K) not in cache:
            train = load_split(desk_corpus, "train")
            k_implicit = K if kind == "implicit" else None
            joint = JointConfig.desk(kind, recon=Recon3DConfig.desk(K=K), k_implicit=k_implicit)
            with threadpool_limits(1):
                cache[kind, K] = Trainer(TrainConfig(joint=joint, epochs=20, seed=0)).fit(train)
        return cache[kind, K]

    return run
