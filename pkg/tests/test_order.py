import csv
import json

import numpy as np
import pytest

from corgipile.shuffle import (
    analyze_order,
    binomial_mad_reference,
    corgipile_stream,
    epoch_shuffle_stream,
    hypergeom_mad_reference,
    no_shuffle_stream,
    profile_sequence,
    shuffle_once_stream,
    ShuffledCopy,
)


def test_no_shuffle_windows_on_clustered(clustered_ds):
    prof = analyze_order(no_shuffle_stream(clustered_ds))
    assert prof.window_label_counts.shape == (50, 2)
    assert np.all(prof.window_label_counts[:25, 0] == 20)
    assert np.all(prof.window_label_counts[25:, 1] == 20)
    assert prof.mean_abs_dev == pytest.approx(0.5)
    assert prof.spearman == pytest.approx(1.0)
    assert np.array_equal(prof.positions, np.arange(1000))


def test_corgipile_profile_close_to_uniform(clustered_ds):
    n = 5  # 10% of 50 blocks
    prof = analyze_order(corgipile_stream(clustered_ds, n, 0, 0, mode="full"))
    assert prof.mean_abs_dev < 0.25


def test_window_counts_sum_to_emitted(clustered_ds):
    prof = analyze_order(corgipile_stream(clustered_ds, 3, 1, 0), window=7)
    assert prof.window_label_counts.sum() == len(prof.positions) == 60


def test_full_shuffle_matches_exact_window_reference(clustered_ds):
    # 40 independent full shuffles; the mean MAD must match the exact
    # without-replacement reference within 3 standard errors of the mean
    mads = np.array([analyze_order(epoch_shuffle_stream(clustered_ds, 3, s)).mean_abs_dev for s in range(40)])
    ref = hypergeom_mad_reference(1000, 500, 20)
    se = mads.std(ddof=1) / np.sqrt(len(mads))
    assert abs(mads.mean() - ref) <= 3 * se
    # the binomial reference differs by well under a percentage point here
    assert abs(binomial_mad_reference(20, 0.5) - ref) < 0.005


def test_shuffle_once_window_fraction_binomial_like(tmp_path, clustered_ds):
    copy = ShuffledCopy(clustered_ds, 8, tmp_path / "c.ds")
    prof = analyze_order(shuffle_once_stream(copy))
    # one draw of 50 windows; generous band around the exact mean
    assert abs(prof.mean_abs_dev - binomial_mad_reference(20, 0.5)) < 0.05


def test_binomial_reference_hand_value():
    # E|X/2 - 1/2| for X ~ Bin(2, 1/2) = 1/4*1/2 + 1/2*0 + 1/4*1/2
    assert binomial_mad_reference(2, 0.5) == pytest.approx(0.25)


def test_multiclass_profile():
    prof = profile_sequence([0, 1, 2, 3, 4, 5], [0, 1, 2, 0, 1, 2], window=3)
    assert prof.window_label_counts.tolist() == [[1, 1, 1], [1, 1, 1]]
    assert prof.classes.tolist() == [0, 1, 2]


def test_short_sequence_edge_cases():
    prof = profile_sequence([4], [1.0], window=20)
    assert prof.window_label_counts.tolist() == [[1]]
    assert np.isnan(prof.spearman)
    empty = profile_sequence([], [], window=20)
    assert empty.window_label_counts.shape[0] == 0


def test_csv_and_summary_export(tmp_path, clustered_ds):
    prof = analyze_order(no_shuffle_stream(clustered_ds))
    prof.write_csv(tmp_path / "o.csv")
    prof.write_summary(tmp_path / "o.json")
    rows = list(csv.reader(open(tmp_path / "o.csv")))
    assert rows[0] == ["position", "id", "label"]
    assert rows[1] == ["0", "0", "-1.0"]
    assert len(rows) == 1001
    summary = json.load(open(tmp_path / "o.json"))
    assert summary["strategy"] == "no_shuffle" and summary["windows"] == 50
