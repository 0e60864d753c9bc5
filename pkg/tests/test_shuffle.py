import math
import time
from collections import Counter
from itertools import permutations

import numpy as np
import pytest
from scipy import stats

from corgipile.bench import ThrottledDataset, with_compute_cost
from corgipile.errors import BudgetError, ConfigError, PipelineError
from corgipile.shuffle import (
    ShuffleConfig,
    ShuffledCopy,
    StreamFactory,
    block_only_stream,
    block_permutation,
    buffer_blocks,
    corgipile_plan,
    corgipile_psi,
    corgipile_stream,
    epoch_shuffle_stream,
    make_stream,
    mrs_stream,
    no_shuffle_stream,
    shuffle_once_stream,
    sliding_window_stream,
)

from conftest import make_dense, uniform_blocks


def drained(stream):
    return stream.drain().psi


# ---------------------------------------------------------------- config


def test_buffer_blocks_floor_with_minimum_one():
    assert buffer_blocks(0.1, 100) == 10
    assert buffer_blocks(0.1, 5) == 1
    assert buffer_blocks(0.29, 10) == 2
    assert buffer_blocks(1.0, 7) == 7


@pytest.mark.parametrize("frac", [0, -0.1, 1.5])
def test_config_rejects_bad_fraction(frac):
    with pytest.raises(ConfigError):
        ShuffleConfig("corgipile", buffer_fraction=frac).validate()


def test_config_rejects_unknown_strategy_and_misplaced_double_buffer():
    with pytest.raises(ConfigError):
        ShuffleConfig("random").validate()
    with pytest.raises(ConfigError):
        ShuffleConfig("mrs", double_buffer=True).validate()


# ---------------------------------------------------------------- baselines


def test_no_shuffle_is_storage_order(clustered_ds):
    s = no_shuffle_stream(clustered_ds).drain()
    assert s.psi.tolist() == list(range(1000))
    assert np.all(s.labels[:500] == -1)
    assert drained(no_shuffle_stream(clustered_ds, epoch=3)).tolist() == list(range(1000))


def test_stream_is_single_use(small_ds):
    s = no_shuffle_stream(small_ds).drain()
    with pytest.raises(RuntimeError):
        s.drain()


def test_shuffle_once_same_every_epoch_and_doubles_storage(tmp_path, clustered_ds):
    copy = ShuffledCopy(clustered_ds, 3, tmp_path / "copy.ds")
    a = drained(shuffle_once_stream(copy, 0))
    b = drained(shuffle_once_stream(copy, 1))
    assert np.array_equal(a, b)
    assert sorted(a.tolist()) == list(range(1000))
    assert copy.storage_factor() == pytest.approx(2.0, rel=0.01)
    assert copy.created and copy.seconds > 0


def test_epoch_shuffle_fresh_each_epoch(clustered_ds):
    a = drained(epoch_shuffle_stream(clustered_ds, 1, 0))
    b = drained(epoch_shuffle_stream(clustered_ds, 1, 1))
    assert sorted(a.tolist()) == sorted(b.tolist()) == list(range(1000))
    assert not np.array_equal(a, b)
    assert np.array_equal(a, drained(epoch_shuffle_stream(clustered_ds, 1, 0)))


def test_epoch_shuffle_budget(clustered_ds):
    with pytest.raises(BudgetError):
        epoch_shuffle_stream(clustered_ds, 0, 0, index_budget=999)


def test_epoch_shuffle_uniform_on_four_tuples(tmp_path):
    ds = make_dense(tmp_path / "four.ds", np.zeros((4, 1)), np.ones(4), 2)
    epochs = 100_000
    counts = Counter(tuple(drained(epoch_shuffle_stream(ds, 7, s)).tolist()) for s in range(epochs))
    freq = np.array([counts[p] for p in permutations(range(4))])
    assert freq.sum() == epochs
    assert stats.chisquare(freq).pvalue > 0.001


def test_sliding_window_w1_is_identity(clustered_ds):
    assert drained(sliding_window_stream(clustered_ds, 0.0001, 5)).tolist() == list(range(1000))


def test_sliding_window_full_window_is_a_uniform_permutation(tmp_path):
    ds = make_dense(tmp_path / "three.ds", np.zeros((3, 1)), np.ones(3), 1)
    counts = Counter(tuple(drained(sliding_window_stream(ds, 1.0, s)).tolist()) for s in range(6000))
    freq = np.array([counts[p] for p in permutations(range(3))])
    assert stats.chisquare(freq).pvalue > 0.001


def test_sliding_window_is_a_permutation_and_nearly_sorted(clustered_ds):
    s = sliding_window_stream(clustered_ds, 0.1, 2)
    psi = drained(s)
    assert s.info["window"] == 100
    assert sorted(psi.tolist()) == list(range(1000))
    assert stats.spearmanr(np.arange(1000), psi).statistic > 0.9


def test_mrs_without_loop_emits_reservoir_drops(clustered_ds):
    s = mrs_stream(clustered_ds, 0.1, 4, loop_ratio=0)
    psi = drained(s)
    cap = s.info["reservoir"]
    assert cap == 50
    assert len(psi) == 1000 - cap == s.info["scan_emitted"]
    assert len(set(psi.tolist())) == len(psi)
    # what is never dropped is exactly the final reservoir: cap tuples
    assert len(set(range(1000)) - set(psi.tolist())) == cap


def test_mrs_loop_repeats_tuples(clustered_ds):
    s = mrs_stream(clustered_ds, 0.1, 4, loop_ratio=1)
    psi = drained(s)
    assert s.info["scan_emitted"] == 950
    assert s.info["loop_emitted"] == 950
    assert len(psi) == 1900
    assert len(set(psi.tolist())) < len(psi)


def test_mrs_is_deterministic(clustered_ds):
    a = drained(mrs_stream(clustered_ds, 0.2, 9, loop_ratio=2))
    b = drained(mrs_stream(clustered_ds, 0.2, 9, loop_ratio=2))
    assert np.array_equal(a, b)


def test_block_only_single_block_equals_no_shuffle(tmp_path):
    ds = make_dense(tmp_path / "one.ds", np.zeros((12, 1)), np.ones(12), 12)
    assert ds.N == 1
    assert np.array_equal(drained(block_only_stream(ds, 3, 0)), drained(no_shuffle_stream(ds)))


def test_block_only_blocks_contiguous_and_label_pure(clustered_ds):
    s = block_only_stream(clustered_ds, 3, 0)
    psi = drained(s)
    labels = s.labels
    for i in range(0, 1000, 20):
        chunk = psi[i:i + 20]
        assert chunk.tolist() == list(range(chunk[0], chunk[0] + 20))
        assert len(set(labels[i:i + 20].tolist())) == 1
    assert sorted(psi.tolist()) == list(range(1000))
    assert [int(psi[i]) // 20 for i in range(0, 1000, 20)] == block_permutation(3, 0, 50).tolist()


# ---------------------------------------------------------------- corgipile


def test_corgipile_sample_mode_covers_n_blocks(clustered_ds):
    s = corgipile_stream(clustered_ds, 5, 11, 0)
    psi = drained(s)
    blocks = corgipile_plan(50, 5, 11, 0)[0]
    assert len(set(blocks.tolist())) == 5
    expected = sorted(i for k in blocks for i in range(20 * k, 20 * k + 20))
    assert sorted(psi.tolist()) == expected
    assert len(psi) == 100


def test_corgipile_full_buffer_is_a_permutation(clustered_ds):
    psi = drained(corgipile_stream(clustered_ds, 50, 11, 0))
    assert sorted(psi.tolist()) == list(range(1000))
    assert stats.spearmanr(np.arange(1000), psi).statistic < 0.2


def test_corgipile_single_block(clustered_ds):
    psi = drained(corgipile_stream(clustered_ds, 1, 2, 4))
    k = psi[0] // 20
    assert sorted(psi.tolist()) == list(range(20 * k, 20 * k + 20))


def test_corgipile_full_mode_visits_every_block(clustered_ds):
    s = corgipile_stream(clustered_ds, 5, 11, 0, mode="full")
    psi = drained(s)
    assert sorted(psi.tolist()) == list(range(1000))
    assert len(s.info["fills"]) == 10


def test_corgipile_psi_matches_stream(clustered_ds):
    for mode in ("sample", "full"):
        plan = corgipile_plan(50, 4, 6, 2, mode=mode, fill_blocks=3)
        s = corgipile_stream(clustered_ds, 4, 6, 2, mode=mode, fill_blocks=3)
        assert np.array_equal(drained(s), corgipile_psi(clustered_ds.index.counts, clustered_ds.index.starts, plan, 6, 2))


def test_corgipile_rejects_bad_n(clustered_ds):
    with pytest.raises(ConfigError):
        corgipile_stream(clustered_ds, 0, 1)
    with pytest.raises(ConfigError):
        corgipile_stream(clustered_ds, 51, 1)


def test_corgipile_block_frequency(small_ds):
    N, n, epochs = 10, 3, 20_000
    hits = np.zeros(N)
    for s in range(epochs):
        hits[corgipile_plan(N, n, 5, s)[0]] += 1
    p = n / N
    se = math.sqrt(p * (1 - p) / epochs)
    assert np.all(np.abs(hits / epochs - p) <= 3 * se)


# ---------------------------------------------------------------- double buffer


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_double_buffer_equals_half_buffer_reference(small_ds, n):
    for mode in ("sample", "full"):
        db = drained(corgipile_stream(small_ds, n, 13, 1, mode=mode, double_buffer=True))
        ref = drained(corgipile_stream(small_ds, n, 13, 1, mode=mode, fill_blocks=math.ceil(n / 2)))
        assert np.array_equal(db, ref)


class FailingDataset:
    def __init__(self, ds, fail_after):
        self._ds = ds
        self.reads = 0
        self.fail_after = fail_after

    def read_block(self, k, verify=True):
        self.reads += 1
        if self.reads > self.fail_after:
            raise OSError("disk went away")
        return self._ds.read_block(k, verify)

    def __getattr__(self, name):
        return getattr(self._ds, name)


def test_producer_failure_surfaces_with_partial_psi(small_ds):
    bad = FailingDataset(small_ds, fail_after=4)
    s = corgipile_stream(bad, 4, 3, 0, mode="full", double_buffer=True)
    seen = []
    with pytest.raises(PipelineError) as e:
        for chunk in s.chunks():
            seen.extend(chunk.ids.tolist())
    assert isinstance(e.value.__cause__, OSError)
    assert e.value.partial_ids == seen
    assert len(seen) == 28  # two fills of two 7-tuple blocks arrived before the failure


def test_double_buffer_not_slower_when_compute_bound(small_ds):
    # per block: 20 ms load for 7 tuples; per tuple: 4 ms compute (more than 20/7 ms load)
    slow = ThrottledDataset(small_ds, latency=0.02)

    def epoch(double):
        s = corgipile_stream(slow, 4, 1, 0, mode="full", double_buffer=double)
        t0 = time.monotonic()
        for _ in with_compute_cost(s.chunks(), 0.004):
            pass
        return time.monotonic() - t0

    single = min(epoch(False) for _ in range(2))
    double = min(epoch(True) for _ in range(2))
    assert double <= single


def test_abandoned_double_buffer_stream_stops_producer(small_ds):
    s = corgipile_stream(small_ds, 2, 3, 0, mode="full", double_buffer=True)
    it = s.chunks()
    next(it)
    it.close()
    import threading

    time.sleep(0.1)
    assert not any(t.name == "corgipile-producer" for t in threading.enumerate())


# ---------------------------------------------------------------- factory / determinism


@pytest.mark.parametrize("strategy", ["no_shuffle", "shuffle_once", "epoch_shuffle", "sliding_window", "mrs", "block_only", "corgipile"])
def test_streams_are_pure_functions_of_inputs(tmp_path, clustered_ds, strategy):
    cfg = ShuffleConfig(strategy, 0.1, 21, shuffled_copy=str(tmp_path / "copy.ds"))
    a = drained(make_stream(clustered_ds, cfg, 2))
    b = drained(make_stream(clustered_ds, cfg, 2))
    assert np.array_equal(a, b)
    if strategy != "mrs":
        assert len(set(a.tolist())) == len(a)
    if strategy not in ("mrs",):
        assert sorted(a.tolist()) == list(range(1000))


def test_factory_makes_shuffled_copy_once(tmp_path, clustered_ds):
    f = StreamFactory(clustered_ds, ShuffleConfig("shuffle_once", seed=2, shuffled_copy=str(tmp_path / "c.ds")))
    f(0).drain()
    first = f.copy
    f(1).drain()
    assert f.copy is first
    f.close()


def test_bytes_read_accounting(clustered_ds):
    s = no_shuffle_stream(clustered_ds).drain()
    assert s.bytes_read == clustered_ds.data_bytes
    c = corgipile_stream(clustered_ds, 5, 0).drain()
    assert c.bytes_read == 5 * clustered_ds.index.entries[0].byte_length
