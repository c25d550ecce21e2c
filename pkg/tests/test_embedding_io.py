import struct

import numpy as np
import pytest

from coreset_nas.embedding_io import (
    DatasetError,
    EmbeddedDataset,
    generate_synthetic,
    generate_synthetic_layout,
    load_dataset,
    save_dataset,
    stratified_split,
)


def small_ds():
    return EmbeddedDataset(np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]), np.array([0, 0, 1]), 2)


@pytest.mark.parametrize("fmt,suffix", [("binary", ".cset"), ("csv", ".csv")])
def test_round_trip_small(tmp_path, fmt, suffix):
    ds = small_ds()
    path = tmp_path / f"ds{suffix}"
    save_dataset(ds, path, fmt)
    back = load_dataset(path, fmt)
    assert len(back) == 3 and back.dim == 2 and back.num_classes == 2
    assert back == ds
    assert back[2].class_id == 1
    np.testing.assert_array_equal(back[1].vector, [1.0, 0.0])


def test_csv_literal_file(tmp_path):
    path = tmp_path / "ds.csv"
    path.write_text("d=2,C=2\n0.0,0.0,0\n1.0,0.0,0\n5.0,5.0,1\n")
    assert load_dataset(path) == small_ds()


def test_csv_dimension_mismatch_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("d=2,C=2\n0.0,0.0,0\n1.0,0.0,0\n5.0,5.0,7.0,1\n")
    with pytest.raises(DatasetError, match="row 2") as info:
        load_dataset(path)
    assert info.value.row == 2


@pytest.mark.parametrize(
    "body,fragment",
    [
        ("d=2\n", "malformed header"),
        ("d=2,C=2\n0.0,nan,0\n", "row 0: non-finite"),
        ("d=2,C=2\n0.0,0.0,0\n0.0,0.0,2\n", "row 1: class_id 2"),
        ("d=2,C=2\n0.0,abc,0\n", "row 0: unparseable"),
    ],
)
def test_csv_errors(tmp_path, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DatasetError, match=fragment):
        load_dataset(path)


def test_binary_layout_is_exact(tmp_path):
    path = tmp_path / "ds.cset"
    save_dataset(small_ds(), path)
    raw = path.read_bytes()
    assert raw[:4] == b"CSET"
    assert struct.unpack_from("<IIII", raw, 4) == (1, 3, 2, 2)
    # third record: (5.0, 5.0) as f32 then class 1 as u32
    assert raw[20 + 2 * 12:] == struct.pack("<ffI", 5.0, 5.0, 1)


def test_binary_errors(tmp_path):
    path = tmp_path / "ds.cset"
    save_dataset(small_ds(), path)
    raw = path.read_bytes()
    (tmp_path / "magic.cset").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetError, match="magic"):
        load_dataset(tmp_path / "magic.cset")
    (tmp_path / "trunc.cset").write_bytes(raw[:-3])
    with pytest.raises(DatasetError, match="row 2"):
        load_dataset(tmp_path / "trunc.cset")
    bad_label = raw[:-4] + struct.pack("<I", 9)
    (tmp_path / "label.cset").write_bytes(bad_label)
    with pytest.raises(DatasetError, match="row 2: class_id 9"):
        load_dataset(tmp_path / "label.cset")
    nan_row = raw[:20] + struct.pack("<ffI", 0.0, float("inf"), 0) + raw[32:]
    (tmp_path / "inf.cset").write_bytes(nan_row)
    with pytest.raises(DatasetError, match="row 0: non-finite"):
        load_dataset(tmp_path / "inf.cset")


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_empty_dataset(tmp_path, fmt):
    ds = EmbeddedDataset(np.zeros((0, 4)), np.zeros(0, dtype=int), 1)
    path = tmp_path / "empty"
    save_dataset(ds, path, fmt)
    back = load_dataset(path, fmt)
    assert len(back) == 0 and back.dim == 4 and back.num_classes == 1


def test_nan_rejected_before_write(tmp_path):
    with pytest.raises(DatasetError, match="non-finite"):
        EmbeddedDataset(np.array([[0.0, np.nan]]), np.array([0]), 1)
    path = tmp_path / "never.cset"
    ds = small_ds()
    # bypass the constructor the way a careless caller might
    object.__setattr__(ds, "vectors", np.array([[0.0, np.nan]] * 3, dtype=np.float32))
    with pytest.raises(DatasetError):
        save_dataset(ds, path)
    assert not path.exists()


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_dataset(small_ds(), tmp_path / "missing-dir" / "ds.cset")


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_round_trip_random_datasets(tmp_path, fmt):
    rng = np.random.default_rng(123)
    for trial in range(100):
        n, d, c = rng.integers(0, 30), rng.integers(1, 9), rng.integers(1, 6)
        vecs = (rng.normal(size=(n, d)) * 10.0 ** rng.integers(-6, 7)).astype(np.float32)
        ds = EmbeddedDataset(vecs, rng.integers(0, c, size=n), int(c))
        path = tmp_path / f"r{trial}"
        save_dataset(ds, path, fmt)
        back = load_dataset(path, fmt)
        # csv carries shortest float64 reprs of the float32 values, so it is exact too
        assert back == ds


def test_index_stability(tmp_path):
    ds = generate_synthetic(3, 7, 4, 1.0, 0.0, seed=1)
    path = tmp_path / "ds.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    for i in range(len(ds)):
        np.testing.assert_array_equal(back[i].vector, ds.vectors[i])
        assert back[i].class_id == ds[i].class_id


def test_normalize_option(tmp_path):
    path = tmp_path / "ds.cset"
    save_dataset(EmbeddedDataset(np.array([[3.0, 4.0], [0.0, 2.0]]), np.array([0, 0]), 1), path)
    assert load_dataset(path).vectors[0, 0] == 3.0
    normed = load_dataset(path, normalize=True)
    np.testing.assert_allclose(normed.vectors, [[0.6, 0.8], [0.0, 1.0]], rtol=1e-7)


def test_synthetic_counts_and_determinism():
    ds = generate_synthetic(2, 10, 2, 1.0, 0.0, seed=7)
    assert len(ds) == 20
    assert list(ds.class_counts()) == [10, 10]
    assert generate_synthetic(2, 10, 2, 1.0, 0.0, seed=7) == ds
    assert generate_synthetic(2, 10, 2, 1.0, 0.0, seed=8) != ds


@pytest.mark.parametrize(
    "args",
    [(0, 10, 2, 1.0, 0.0), (2, 0, 2, 1.0, 0.0), (2, 10, 2, 1.0, 1.0), (2, 10, 2, 1.0, -0.1), (2, 10, 2, 0.0, 0.0)],
)
def test_synthetic_invalid(args):
    with pytest.raises(ValueError):
        generate_synthetic(*args, seed=0)


def test_synthetic_outliers_distance_histogram():
    spread = 1.3
    far_inliers, inliers = 0, 0
    for seed in range(50):
        lay = generate_synthetic_layout(3, 10, 2, spread, 0.2, seed)
        ds = lay.dataset
        dist = np.linalg.norm(ds.vectors - lay.means[ds.labels], axis=1)
        for c in range(3):
            flags = lay.outlier_mask[ds.labels == c]
            assert flags.sum() == 2
            assert (dist[ds.labels == c][flags] >= 4 * spread).all()
        far_inliers += int((dist[~lay.outlier_mask] >= 4 * spread).sum())
        inliers += int((~lay.outlier_mask).sum())
    # a 2-D Gaussian member lands beyond 4 sigma with probability exp(-8) ~ 3e-4
    assert far_inliers / inliers < 0.005


def test_stratified_split_partitions():
    ds = generate_synthetic(3, 10, 2, 1.0, 0.0, seed=0)
    rest, held = stratified_split(ds, 0.2, seed=4)
    assert sorted(np.concatenate([rest, held]).tolist()) == list(range(30))
    assert np.bincount(ds.labels[held]).tolist() == [2, 2, 2]
