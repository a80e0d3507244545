""" Tests of the skeleton data model, the dataset directory format and splits"""
import json

import numpy as np
import pytest

from .._dataset import (
    CANONICAL_T,
    DATA_FILE,
    LABELS_FILE,
    META_FILE,
    UNLABELED,
    GaitDataset,
    SkeletonSequence,
    labeled_count,
    largest_remainder,
    load_dataset,
    resample_temporal,
    save_dataset,
    select_labeled_fraction,
    split_by_group,
    split_dataset,
)
from .._errors import (
    CorruptMetadataError,
    DatasetFormatError,
    InvalidLabelError,
    MissingDatasetFileError,
    MissingLabelsError,
    NonFiniteDataError,
    SchemaVersionError,
    ShapeMismatchError,
)
from .._topology import CANONICAL_TOPOLOGY, JointTopology


def test_canonical_topology():
    topo = CANONICAL_TOPOLOGY
    assert topo.num_joints == 16
    assert len(topo.edges) == 15
    joints = sorted(j for part in topo.parts.values() for j in part)
    assert joints == list(range(16))
    assert len(topo.upper_jitter_set) == 6
    perm = topo.flip_permutation()
    np.testing.assert_array_equal(perm[perm], np.arange(16))
    assert topo.hop_distances()[topo.center] == 0
    assert (topo.hop_distances() >= 0).all()


def test_spatial_partition_sums_to_adjacency():
    topo = CANONICAL_TOPOLOGY
    a = topo.adjacency()
    np.testing.assert_allclose(a, a.T)
    np.testing.assert_allclose(topo.spatial_partition().sum(axis=0), a)


def test_topology_round_trips_through_dict():
    topo = JointTopology(**CANONICAL_TOPOLOGY.as_dict())
    assert topo.as_dict() == CANONICAL_TOPOLOGY.as_dict()
    np.testing.assert_array_equal(topo.spatial_partition(), CANONICAL_TOPOLOGY.spatial_partition())


def test_topology_rejects_cycles_and_overlaps():
    d = CANONICAL_TOPOLOGY.as_dict()
    with pytest.raises(ValueError):
        JointTopology(**dict(d, edges=d["edges"][:-1] + [[0, 1]]))
    parts = dict(d["parts"], torso=d["parts"]["torso"] + [4])
    with pytest.raises(ValueError):
        JointTopology(**dict(d, parts=parts))



def test_topology_has_sixteen_joints():
    d = CANONICAL_TOPOLOGY.as_dict()
    # a 17th joint hung off the head keeps the tree valid
    grown = dict(
        d,
        joint_names=list(d["joint_names"]) + ["head_top"],
        edges=d["edges"] + [[3, 16]],
        parts=dict(d["parts"], torso=d["parts"]["torso"] + [16]),
    )
    with pytest.raises(ValueError, match="16 joints"):
        JointTopology(**grown)
    renamed = list(d["joint_names"])
    renamed[3] = renamed[2]
    with pytest.raises(ValueError, match="unique"):
        JointTopology(**dict(d, joint_names=renamed))
    renamed[3] = "crown"
    assert JointTopology(**dict(d, joint_names=renamed)).num_joints == 16


def test_sequence_validation():
    seq = SkeletonSequence(np.zeros((CANONICAL_T, 16, 3)), 2)
    assert seq.is_canonical
    assert seq.label_name == "happy"
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((CANONICAL_T, 16)))
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((4, 16, 3)), 4)
    bad = np.zeros((4, 16, 3))
    bad[1, 2, 0] = np.nan
    with pytest.raises(NonFiniteDataError):
        SkeletonSequence(bad)


def test_dataset_validation():
    data = np.zeros((3, 8, 16, 3), dtype=np.float32)
    ds = GaitDataset(data)
    assert not ds.has_labels
    assert (ds.labels == UNLABELED).all()
    assert ds[0].label is None
    with pytest.raises(ShapeMismatchError):
        GaitDataset(np.zeros((3, 8, 15, 3)))
    with pytest.raises(ShapeMismatchError):
        GaitDataset(data, [0, 1])
    with pytest.raises(ValueError):
        GaitDataset(data, [0, 1, 7])
    with pytest.raises(ValueError):
        GaitDataset(data, split_tags=["train", "test", "dev"])


def test_save_load_round_trip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(loaded.data, small_dataset.data)
    np.testing.assert_array_equal(loaded.labels, small_dataset.labels)
    np.testing.assert_array_equal(loaded.groups, small_dataset.groups)
    assert loaded.data.dtype == np.float32

    # saving is a pure function of the dataset
    save_dataset(loaded, tmp_path / "again")
    for name in (META_FILE, DATA_FILE, LABELS_FILE):
        assert (tmp_path / "ds" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_unlabeled_dataset_has_no_labels_file(tmp_path):
    ds = GaitDataset(np.ones((2, 4, 16, 3)))
    save_dataset(ds, tmp_path)
    assert not (tmp_path / LABELS_FILE).exists()
    assert not load_dataset(tmp_path).has_labels


def test_load_errors(tmp_path, small_dataset):
    with pytest.raises(MissingDatasetFileError):
        load_dataset(tmp_path / "nowhere")
    # both a missing-file and a format error for callers catching either
    assert issubclass(MissingDatasetFileError, FileNotFoundError)
    assert issubclass(MissingDatasetFileError, DatasetFormatError)

    path = tmp_path / "ds"
    save_dataset(small_dataset.subset([0, 1]), path)
    payload = (path / DATA_FILE).read_bytes()
    (path / DATA_FILE).write_bytes(payload[:-4])
    with pytest.raises(ShapeMismatchError):
        load_dataset(path)

    values = np.frombuffer(payload, dtype="<f4").copy()
    values[5] = np.inf
    (path / DATA_FILE).write_bytes(values.tobytes())
    with pytest.raises(NonFiniteDataError):
        load_dataset(path)

    (path / DATA_FILE).write_bytes(payload)
    meta = json.loads((path / META_FILE).read_text())
    (path / META_FILE).write_text(json.dumps(dict(meta, schema_version=99)))
    with pytest.raises(SchemaVersionError):
        load_dataset(path)


def _drop(key):
    def edit(meta):
        del meta[key]
        return json.dumps(meta)

    return edit


@pytest.mark.parametrize(
    "edit, exc",
    [
        (lambda meta: "{not json", CorruptMetadataError),
        (lambda meta: "[1, 2, 3]", CorruptMetadataError),
        (_drop("t"), CorruptMetadataError),
        (_drop("n"), CorruptMetadataError),
        (lambda meta: json.dumps(dict(meta, j="sixteen")), CorruptMetadataError),
        (lambda meta: json.dumps(dict(meta, c=None)), CorruptMetadataError),
        (lambda meta: json.dumps(dict(meta, joint_names=16)), CorruptMetadataError),
        (lambda meta: json.dumps(dict(meta, split_tags=["val", "val"])), CorruptMetadataError),
        (lambda meta: json.dumps(dict(meta, groups=[0])), ShapeMismatchError),
        (_drop("schema_version"), SchemaVersionError),
    ],
    ids=[
        "bad-json",
        "not-an-object",
        "no-t",
        "no-n",
        "text-shape",
        "null-shape",
        "scalar-joint-names",
        "unknown-split-tag",
        "short-groups",
        "no-version",
    ],
)
def test_malformed_meta(tmp_path, small_dataset, edit, exc):
    save_dataset(small_dataset.subset([0, 1]), tmp_path)
    meta = json.loads((tmp_path / META_FILE).read_text())
    (tmp_path / META_FILE).write_text(edit(meta))
    with pytest.raises(exc):
        load_dataset(tmp_path)


@pytest.mark.parametrize("byte", [4, 17, 254])
def test_label_bytes_outside_the_classes(tmp_path, small_dataset, byte):
    save_dataset(small_dataset.subset([0, 1]), tmp_path)
    (tmp_path / LABELS_FILE).write_bytes(bytes([0, byte]))
    with pytest.raises(InvalidLabelError, match="outside"):
        load_dataset(tmp_path)
    # still a ValueError for callers of the data model
    with pytest.raises(ValueError):
        GaitDataset(np.ones((1, 4, 16, 3)), [byte])


def test_unlabeled_marker_loads(tmp_path, small_dataset):
    save_dataset(small_dataset.subset([0, 1]), tmp_path)
    (tmp_path / LABELS_FILE).write_bytes(bytes([UNLABELED, 3]))
    assert load_dataset(tmp_path).labels.tolist() == [UNLABELED, 3]


def test_split_sizes_and_disjointness(small_dataset):
    train, test = split_dataset(small_dataset, 0.8, seed=1)
    assert len(train) == round(0.8 * 24)
    assert len(train) + len(test) == 24
    assert set(train.split_tags) == {"train"}
    assert set(test.split_tags) == {"test"}
    rows = {small_dataset.data[i].tobytes() for i in range(24)}
    seen = [s.data.tobytes() for s in train] + [s.data.tobytes() for s in test]
    assert set(seen) == rows
    assert len(set(seen)) == 24

    again, _ = split_dataset(small_dataset, 0.8, seed=1)
    np.testing.assert_array_equal(again.data, train.data)


def test_split_keeps_both_sides_non_empty():
    ds = GaitDataset(np.zeros((2, 4, 16, 3)))
    train, test = split_dataset(ds, 0.99)
    assert (len(train), len(test)) == (1, 1)
    with pytest.raises(ValueError):
        split_dataset(ds, 1.0)


def test_stratified_split_apportions_classes(small_dataset):
    train, _ = split_dataset(small_dataset, 0.5, seed=0, stratified=True)
    expected = largest_remainder(small_dataset.class_histogram(), 12)
    np.testing.assert_array_equal(train.class_histogram(), expected)


def test_split_by_group(small_dataset):
    actor = int(small_dataset.groups[0])
    train, test = split_by_group(small_dataset, [actor])
    assert set(test.groups) == {actor}
    assert actor not in set(train.groups)


@pytest.mark.parametrize(
    "fraction, n, expected", [(0.05, 400, 20), (0.05, 401, 21), (0.1, 9, 1), (1.0, 7, 7)]
)
def test_labeled_count(fraction, n, expected):
    assert labeled_count(fraction, n) == expected


def test_select_labeled_fraction(small_dataset):
    chosen = select_labeled_fraction(small_dataset, 0.2, seed=5)
    assert len(chosen) == labeled_count(0.2, 24)
    again = select_labeled_fraction(small_dataset, 0.2, seed=5)
    np.testing.assert_array_equal(chosen.data, again.data)
    with pytest.raises(ValueError):
        select_labeled_fraction(small_dataset, 0.0)
    with pytest.raises(MissingLabelsError):
        select_labeled_fraction(GaitDataset(small_dataset.data), 0.5)


def test_largest_remainder_ties_go_low():
    np.testing.assert_array_equal(largest_remainder([1, 1, 1], 4), [2, 1, 1])
    assert largest_remainder([0.55, 0.23, 0.15, 0.07], 400).sum() == 400


def test_resample_identity_and_endpoints(walk):
    seq = SkeletonSequence(walk, 1)
    same = resample_temporal(seq, walk.shape[0])
    np.testing.assert_array_equal(same.data, walk)
    assert same.label == 1

    longer = resample_temporal(seq, 301)
    assert longer.data.shape == (301, 16, 3)
    np.testing.assert_array_equal(longer.data[0], walk[0])
    np.testing.assert_array_equal(longer.data[-1], walk[-1])


def test_resample_linear_signal_stays_in_bounds():
    t = np.linspace(0.0, 1.0, 37)
    data = np.broadcast_to((2.0 * t - 0.5)[:, None, None], (37, 16, 3)).copy()
    out = resample_temporal(SkeletonSequence(data), CANONICAL_T).data
    assert out.min() >= data.min() - 1e-9
    assert out.max() <= data.max() + 1e-9
    np.testing.assert_allclose(out[:, 0, 0], 2.0 * np.linspace(0, 1, CANONICAL_T) - 0.5, atol=1e-6)
