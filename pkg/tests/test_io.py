import numpy as np
import pytest

from soem.embedding import MultiSeries, TimeSeries, series_covariance
from soem.errors import ValidationError
from soem.io import (
    Dataset,
    load_covariances,
    load_dataset,
    load_multivariate,
    load_ucr,
    save_covariances,
    write_multivariate,
    write_ucr,
)


def test_ucr_single_line(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1,0.5,0.7,0.9\n")
    ds = load_ucr(p)
    assert len(ds) == 1
    s = ds.series[0]
    assert s.label == "1" and np.array_equal(s.values, [0.5, 0.7, 0.9])


def test_ucr_empty_file(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(ValidationError):
        load_ucr(p)


def test_ucr_bad_field_names_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1,0.5,0.7\n2,0.1,abc\n")
    with pytest.raises(ValidationError, match=":2:"):
        load_ucr(p)


def test_ucr_tab_delimited_varying_length_with_padding(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("1.0\t1\t2\t3\tNaN\tNaN\n-1\t4\t5\t6\t7\t8\n")
    ds = load_ucr(p)
    assert [len(s) for s in ds.series] == [3, 5]
    assert ds.labels == ["1", "-1"]


def test_ucr_ecg_shaped_file(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.repeat([1, 2], 442)
    data = np.column_stack([labels, rng.standard_normal((884, 136))])
    p = tmp_path / "ECG_TRAIN"
    np.savetxt(p, data, delimiter=",", fmt="%.8g")
    ds = load_ucr(p)
    assert len(ds) == 884
    assert {len(s) for s in ds.series} == {136}
    assert sorted(ds.labels.count(k) for k in set(ds.labels)) == [442, 442]


def test_ucr_round_trip(tmp_path):
    series = [TimeSeries("a", [0.1, 1 / 3, 2.5], "0"), TimeSeries("b", [1e-12, -4.0], "1")]
    write_ucr(series, tmp_path / "x.txt")
    back = load_ucr(tmp_path / "x.txt")
    for a, b in zip(series, back.series):
        assert np.array_equal(a.values, b.values) and a.label == b.label


def test_multivariate_small(tmp_path):
    p = tmp_path / "m.csv"
    rows = ["series_id,channel_id,t,value"]
    rows += [f"s1,{c},{t},{t * (c + 1)}" for c in range(2) for t in range(4)]
    p.write_text("\n".join(rows) + "\n")
    ds = load_multivariate(p)
    ms = ds.series[0]
    assert isinstance(ms, MultiSeries)
    assert len(ms.channels) == 2 and len(ms) == 4
    assert np.array_equal(ms.channels[1].values, [0, 2, 4, 6])


def test_multivariate_missing_t(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("s1,a,0,1\ns1,a,1,2\ns1,a,3,4\n")
    with pytest.raises(ValidationError, match="missing t index"):
        load_multivariate(p)


def test_multivariate_ragged_names_series(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("s7,a,0,1\ns7,a,1,2\ns7,a,2,2\ns7,b,0,4\ns7,b,1,4\n")
    with pytest.raises(ValidationError, match="s7"):
        load_multivariate(p)


def test_multivariate_articulary_shaped(tmp_path):
    rng = np.random.default_rng(1)
    series = [
        MultiSeries(f"e{n:03d}", [TimeSeries(f"e{n:03d}/{c}", rng.standard_normal(144)) for c in range(9)], str(n % 25))
        for n in range(575)
    ]
    write_multivariate(series, tmp_path / "art.csv", labels_path=tmp_path / "labels.csv")
    ds = load_dataset(tmp_path / "art.csv", labels_path=tmp_path / "labels.csv")
    assert ds.format == "multivariate"
    assert len(ds) == 575
    assert all(len(s.channels) == 9 and len(s) == 144 for s in ds.series)
    assert ds.labels[:3] == ["0", "1", "2"]
    assert np.array_equal(ds.series[10].channels[4].values, series[10].channels[4].values)


def test_dataset_invariants():
    with pytest.raises(ValidationError):
        Dataset([])
    with pytest.raises(ValidationError):
        Dataset([TimeSeries("a", [1.0, 2.0]), TimeSeries("a", [1.0, 3.0])])


def test_dataset_digest_tracks_content():
    a = Dataset([TimeSeries("a", [1.0, 2.0], "0")])
    b = Dataset([TimeSeries("a", [1.0, 2.0], "0")])
    c = Dataset([TimeSeries("a", [1.0, 2.5], "0")])
    assert a.digest() == b.digest() != c.digest()


def test_load_dataset_unknown_format(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("1,2,3\n")
    with pytest.raises(ValidationError):
        load_dataset(p, fmt="parquet")


def test_covariance_cache_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    covs = [series_covariance(TimeSeries(f"s{k}", rng.standard_normal(30)), 5) for k in range(3)]
    save_covariances(covs, tmp_path / "c.npz")
    back = load_covariances(tmp_path / "c.npz")
    for a, b in zip(covs, back):
        assert np.array_equal(a.matrix, b.matrix)
        assert a.source_id == b.source_id and b.norm_applied
