import io

import numpy as np
import pytest

from kronpress.baselines import uniform_sparse
from kronpress.bench import (
    EpochRow,
    bench_epoch_scaling,
    bench_hidden,
    bench_inference,
    nested_subsets,
    read_tsv,
    write_tsv,
)
from kronpress.training import TrainConfig


def test_inference_zero_samples_empty():
    assert bench_inference(samples=0) == []


def test_inference_rows():
    rows = bench_inference(3, 5, samples=500, reps=2, hidden=4)
    assert [r.size for r in rows] == [8, 16, 32]
    assert all(r.mean_latency_ns > 0 and r.std >= 0 for r in rows)


def test_nested_subsets_contained_and_dims_fixed():
    data = uniform_sparse((20, 30), 200, np.random.default_rng(0))
    subs = nested_subsets(data, [25, 50, 200], np.random.default_rng(1))
    keys = [set(map(tuple, s.indices.tolist())) for s in subs]
    assert keys[0] <= keys[1] <= keys[2]
    assert all(s.dims == data.dims for s in subs)
    assert [s.nnz for s in subs] == [25, 50, 200]
    with pytest.raises(ValueError):
        nested_subsets(data, [0], np.random.default_rng(0))


def test_epoch_scaling_rows():
    data = uniform_sparse((64, 64), 400, np.random.default_rng(0))
    rows = bench_epoch_scaling(data, (0.25, 1.0), TrainConfig(hidden=4), epochs=1)
    assert [r.nnz for r in rows] == [100, 400]
    for r in rows:
        assert r.total_s == pytest.approx(r.model_opt_s + r.order_opt_s)
    with pytest.raises(ValueError):
        bench_epoch_scaling(data, (0.0,))


def test_hidden_rows():
    data = uniform_sparse((32, 32), 100, np.random.default_rng(0))
    rows = bench_hidden(data, (2, 4), TrainConfig(), epochs=1)
    assert [r.hidden for r in rows] == [2, 4]


def test_tsv_roundtrip(tmp_path):
    rows = [EpochRow(16, 0.5, 0.25, 0.75), EpochRow(32, 1.0, 0.5, 1.5)]
    write_tsv(rows, str(tmp_path / "t.tsv"))
    cols = read_tsv(tmp_path / "t.tsv")
    assert list(cols) == ["nnz", "model_opt_s", "order_opt_s", "total_s"]
    assert cols["total_s"].tolist() == [0.75, 1.5]
    buf = io.StringIO()
    write_tsv([], buf)
    assert buf.getvalue() == ""
