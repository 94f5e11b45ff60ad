import struct

import numpy as np
import numpy.testing as npt
import pytest

from rsicap.corpus import CaptionRecord
from rsicap.retrieval import (
    Archive,
    ArchiveEntry,
    FeatureFileError,
    build_archive,
    knn,
    read_features,
    reference_pool,
    write_features,
)


def make_records(n_train=6, n_val=2, n_test=2, captions=("many trees", "a road")):
    records = []
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    for i, split in enumerate(splits):
        records.append(CaptionRecord(f"img_{i:03d}.jpg", split, tuple(captions)))
    return records


def make_features(records, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return {r.image_id: rng.standard_normal(dim) for r in records}


def write_and_read(tmp_path, named, **kwargs):
    path = tmp_path / "f.rsft"
    write_features(path, named)
    return read_features(path, **kwargs)


# ---------------------------------------------------------------- file format

def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    named = [("a.jpg", rng.standard_normal(8)), ("b.jpg", rng.standard_normal(8))]
    loaded = write_and_read(tmp_path, named)
    assert list(loaded) == ["a.jpg", "b.jpg"]
    for name, vec in named:
        npt.assert_array_equal(loaded[name], vec.astype("<f4").astype(np.float64))


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "f.rsft"
    write_features(path, [("a", np.zeros(2))])
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(FeatureFileError, match="magic"):
        read_features(path)


def test_feature_file_truncated(tmp_path):
    path = tmp_path / "f.rsft"
    write_features(path, [("a", np.zeros(4)), ("b", np.ones(4))])
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(FeatureFileError, match="truncated"):
        read_features(path)


def test_feature_file_dim_mismatch(tmp_path):
    path = tmp_path / "f.rsft"
    write_features(path, [("a", np.zeros(4))])
    with pytest.raises(FeatureFileError, match="dim"):
        read_features(path, expected_dim=2048)


def test_feature_file_duplicate_name(tmp_path):
    path = tmp_path / "f.rsft"
    vec = np.zeros(2, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"RSFT")
        fh.write(struct.pack("<II", 2, 2))
        for _ in range(2):
            fh.write(struct.pack("<H", 1) + b"a" + vec.tobytes())
    with pytest.raises(FeatureFileError, match="duplicate"):
        read_features(path)


def test_feature_file_count_mismatch(tmp_path):
    path = tmp_path / "f.rsft"
    write_features(path, [("a", np.zeros(2)), ("b", np.zeros(2))])
    data = bytearray(path.read_bytes())
    struct.pack_into("<I", data, 4, 1)  # header now claims one record
    path.write_bytes(bytes(data))
    with pytest.raises(FeatureFileError, match="count mismatch"):
        read_features(path)


def test_feature_file_rejects_ragged_vectors(tmp_path):
    with pytest.raises(FeatureFileError):
        write_features(tmp_path / "f.rsft", [("a", np.zeros(3)), ("b", np.zeros(4))])


# ---------------------------------------------------------------- archive

def test_build_archive_filters_test_split():
    records = make_records(6, 2, 2)
    archive = build_archive(make_features(records), records)
    assert len(archive) == 8
    assert all(e.image_id != "img_008.jpg" for e in archive.entries)


def test_build_archive_missing_feature_names_image():
    records = make_records(2, 0, 0)
    features = make_features(records[:1])
    with pytest.raises(ValueError, match="img_001"):
        build_archive(features, records)


def test_build_archive_tokenizes_with_rules():
    records = [CaptionRecord("a.jpg", "train", ("Grey harbour!",))]
    archive = build_archive({"a.jpg": np.zeros(3)}, records,
                            rules={"grey": "gray", "harbour": "harbor"})
    assert archive.entries[0].captions == (("gray", "harbor"),)


def test_build_archive_deterministic_order():
    records = make_records(4, 1, 1)
    features = make_features(records)
    a1 = build_archive(features, records)
    a2 = build_archive(features, records)
    assert [e.image_id for e in a1.entries] == [e.image_id for e in a2.entries]


# ---------------------------------------------------------------- knn

def entry(image_id, feature):
    return ArchiveEntry(image_id, np.asarray(feature, dtype=float), (("cap",),))


def test_knn_exact_match_first():
    archive = Archive([entry("a", [0.0]), entry("b", [1.0]), entry("c", [5.0])], 1)
    result = knn(archive, np.array([1.0]), 2)
    assert [e.image_id for e in result] == ["b", "a"]


def test_knn_one_dimensional_example():
    archive = Archive(
        [entry("w", [0.0]), entry("x", [1.0]), entry("y", [5.0]), entry("z", [9.0])], 1
    )
    result = knn(archive, np.array([2.0]), 2)
    assert [e.image_id for e in result] == ["x", "w"]


def test_knn_tie_breaks_by_image_id():
    archive = Archive([entry("bbb", [1.0]), entry("aaa", [-1.0])], 1)
    result = knn(archive, np.array([0.0]), 2)
    assert [e.image_id for e in result] == ["aaa", "bbb"]


def test_knn_k_too_large():
    archive = Archive([entry("a", [0.0])], 1)
    with pytest.raises(ValueError):
        knn(archive, np.array([0.0]), 2)


def test_knn_query_dim_checked():
    archive = Archive([entry("a", [0.0, 1.0])], 2)
    with pytest.raises(ValueError):
        knn(archive, np.array([0.0]), 1)


def test_knn_matches_brute_force_sort():
    rng = np.random.default_rng(99)
    entries = [entry(f"id_{i:03d}", rng.standard_normal(6)) for i in range(100)]
    archive = Archive(entries, 6)
    for _ in range(20):
        query = rng.standard_normal(6)
        expected = sorted(
            entries,
            key=lambda e: (float(np.linalg.norm(e.feature - query)), e.image_id),
        )[:7]
        result = knn(archive, query, 7)
        assert [e.image_id for e in result] == [e.image_id for e in expected]
        dists = [float(np.linalg.norm(e.feature - query)) for e in result]
        assert dists == sorted(dists)


# ---------------------------------------------------------------- pool

def test_reference_pool_flattens_in_order():
    entries = [
        ArchiveEntry("a", np.zeros(1), (("x", "y"), ("z",))),
        ArchiveEntry("b", np.zeros(1), (("x", "y"),)),
    ]
    pool = reference_pool(entries)
    assert pool == [("x", "y"), ("z",), ("x", "y")]  # duplicates retained


def test_reference_pool_four_neighbors_five_captions():
    captions = tuple(("cap%d" % j,) for j in range(5))
    entries = [ArchiveEntry("e%d" % i, np.zeros(1), captions) for i in range(4)]
    assert len(reference_pool(entries)) == 20


def test_reference_pool_empty_errors():
    with pytest.raises(ValueError):
        reference_pool([])
