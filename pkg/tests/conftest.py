import sys

import numpy as np
import pytest

from corgipile.dataset import SyntheticSpec, TupleBatch, block_size_for, generate_synthetic, write_dataset


def make_dense(path, X, y, tuples_per_block, task="binary", num_classes=2, ids=None):
    X = np.asarray(X, dtype=np.float32)
    ids = np.arange(len(X)) if ids is None else ids
    batch = TupleBatch(ids, np.asarray(y, dtype=np.float32), X.shape[1], dense=X)
    return write_dataset(path, batch, task, num_classes, "dense", block_size_for(tuples_per_block, X.shape[1]))


def clustered(path, m=1000, d=5, b=20, seed=0, **kw):
    spec = SyntheticSpec(m=m, d=d, seed=seed, order="label_clustered", block_size_bytes=block_size_for(b, d), **kw)
    return generate_synthetic(spec, path)


def uniform_blocks(path, N, b, d=2, seed=0):
    """N blocks of b tuples with random features and alternating labels."""
    rng = np.random.default_rng(seed)
    m = N * b
    X = rng.standard_normal((m, d))
    y = np.where(np.arange(m) % 2 == 0, -1.0, 1.0)
    return make_dense(path, X, y, b)


@pytest.fixture
def clustered_ds(tmp_path):
    ds = clustered(tmp_path / "clustered.ds")
    yield ds
    ds.close()


@pytest.fixture
def small_ds(tmp_path):
    ds = uniform_blocks(tmp_path / "small.ds", N=10, b=7)
    yield ds
    ds.close()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
