"""Skeleton data model, the portable dataset directory format and splits."""

import json
import logging
import math
import os
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from ._errors import (
    CorruptMetadataError,
    DatasetFormatError,
    InvalidLabelError,
    MissingDatasetFileError,
    MissingLabelsError,
    NonFiniteDataError,
    SchemaVersionError,
    ShapeMismatchError,
)
from ._topology import CANONICAL_TOPOLOGY, JointTopology

logger = logging.getLogger(__name__)

LABEL_NAMES = ("angry", "neutral", "happy", "sad")
NUM_CLASSES = len(LABEL_NAMES)
UNLABELED = 255

CANONICAL_T = 120
CANONICAL_C = 3

SCHEMA_VERSION = 1
META_FILE = "meta.json"
DATA_FILE = "data.f32"
LABELS_FILE = "labels.u8"

SPLIT_TAGS = ("train", "test")

PathLike = Union[str, "os.PathLike[str]"]


def _check_sequence_array(instance, attribute, value):
    if value.ndim != 3:
        raise ValueError(f"{attribute.name} must be T x J x C, got shape {value.shape}")
    if not np.all(np.isfinite(value)):
        raise NonFiniteDataError("skeleton sequence holds non-finite coordinates")


def _check_label(instance, attribute, value):
    if value is not None and value not in range(NUM_CLASSES):
        raise ValueError(f"{attribute.name} must be in 0..{NUM_CLASSES - 1}, got {value}")


@attr.s(slots=True, eq=False)
class SkeletonSequence:
    """One gait sample: a ``T x J x C`` array of joint positions in meters."""

    data: np.ndarray = attr.ib(converter=np.asarray, validator=_check_sequence_array)
    label: Optional[int] = attr.ib(default=None, validator=_check_label)

    @property
    def is_canonical(self) -> bool:
        return self.data.shape == (CANONICAL_T, CANONICAL_TOPOLOGY.num_joints, CANONICAL_C)

    @property
    def label_name(self) -> Optional[str]:
        return None if self.label is None else LABEL_NAMES[self.label]


def _as_data(value):
    value = np.ascontiguousarray(value, dtype=np.float32)
    if value.ndim == 3 and value.shape[0] == 0:
        value = value.reshape((0, CANONICAL_T) + value.shape[1:])
    return value


@attr.s(slots=True, eq=False, repr=False)
class GaitDataset:
    """A stack of sequences sharing one topology and shape.

    ``labels`` uses :data:`UNLABELED` (255) for samples without an emotion
    label, ``split_tags`` is ``None`` or one of ``"train"``/``"test"`` per
    sample, and ``groups`` optionally records the actor of each sample."""

    data: np.ndarray = attr.ib(converter=_as_data)
    labels: np.ndarray = attr.ib(default=None)
    topology: JointTopology = attr.ib(default=CANONICAL_TOPOLOGY)
    split_tags: Optional[Tuple[str, ...]] = attr.ib(default=None)
    groups: Optional[np.ndarray] = attr.ib(default=None)

    def __attrs_post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatchError(f"expected N x T x J x C data, got {self.data.shape}")
        n, _, j, _ = self.data.shape
        if j != self.topology.num_joints:
            raise ShapeMismatchError(
                f"data has {j} joints, topology has {self.topology.num_joints}"
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteDataError("dataset holds non-finite coordinates")
        if self.labels is None:
            self.labels = np.full(n, UNLABELED, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.labels.shape != (n,):
            raise ShapeMismatchError(f"{n} samples but {self.labels.size} labels")
        bad = (self.labels >= NUM_CLASSES) & (self.labels != UNLABELED)
        if bad.any():
            raise InvalidLabelError(
                f"label values must be in 0..{NUM_CLASSES - 1} or {UNLABELED}, "
                f"got {sorted(set(self.labels[bad].tolist()))}"
            )
        if self.split_tags is not None:
            self.split_tags = tuple(self.split_tags)
            if len(self.split_tags) != n or not set(self.split_tags) <= set(SPLIT_TAGS):
                raise ValueError("split_tags must hold 'train' or 'test' per sample")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64).reshape(-1)
            if self.groups.shape != (n,):
                raise ShapeMismatchError(f"{n} samples but {self.groups.size} group ids")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, index: int) -> SkeletonSequence:
        label = int(self.labels[index])
        return SkeletonSequence(
            self.data[index], None if label == UNLABELED else label
        )

    def __iter__(self) -> Iterator[SkeletonSequence]:
        for i in range(len(self)):
            yield self[i]

    @property
    def sequences(self):
        return list(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_labeled(self) -> bool:
        return bool(len(self)) and not bool((self.labels == UNLABELED).any())

    @property
    def has_labels(self) -> bool:
        return bool((self.labels != UNLABELED).any())

    def class_histogram(self) -> np.ndarray:
        labeled = self.labels[self.labels != UNLABELED]
        return np.bincount(labeled, minlength=NUM_CLASSES)

    def subset(self, indices: Sequence[int], split_tag: Optional[str] = None):
        indices = np.asarray(indices, dtype=np.int64)
        if split_tag is not None:
            tags = (split_tag,) * len(indices)
        elif self.split_tags is not None:
            tags = tuple(self.split_tags[i] for i in indices)
        else:
            tags = None
        return GaitDataset(
            self.data[indices],
            self.labels[indices],
            self.topology,
            tags,
            None if self.groups is None else self.groups[indices],
        )

    def tagged(self, tag: str) -> "GaitDataset":
        """The samples whose split tag is ``tag``."""
        if self.split_tags is None:
            raise ValueError("dataset carries no split tags")
        return self.subset([i for i, t in enumerate(self.split_tags) if t == tag])

    @classmethod
    def from_sequences(cls, sequences, topology=CANONICAL_TOPOLOGY):
        sequences = list(sequences)
        if sequences:
            data = np.stack([s.data for s in sequences])
        else:
            data = np.zeros(
                (0, CANONICAL_T, topology.num_joints, CANONICAL_C), dtype=np.float32
            )
        labels = [UNLABELED if s.label is None else s.label for s in sequences]
        return cls(data, np.asarray(labels, dtype=np.uint8), topology)

    def __repr__(self):
        return f"GaitDataset(n={len(self)}, shape={self.data.shape[1:]})"


################################################################
# Directory format
################################################################


def _meta_for(ds: GaitDataset) -> dict:
    n, t, j, c = ds.data.shape
    meta = {
        "schema_version": SCHEMA_VERSION,
        "n": n,
        "t": t,
        "j": j,
        "c": c,
        "joint_names": list(ds.topology.joint_names),
        "label_names": list(LABEL_NAMES),
        "endianness": "little",
    }
    if ds.split_tags is not None:
        meta["split_tags"] = list(ds.split_tags)
    if ds.groups is not None:
        meta["groups"] = [int(g) for g in ds.groups]
    return meta


def save_dataset(ds: GaitDataset, path: PathLike) -> None:
    """Write ``ds`` as ``meta.json``, ``data.f32`` and, if any sample is
    labeled, ``labels.u8``.

    The output is a pure function of the dataset, so saving twice yields
    byte-identical files."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(_meta_for(ds), indent=2, sort_keys=True) + "\n"
    (path / META_FILE).write_text(meta, encoding="utf-8")
    (path / DATA_FILE).write_bytes(ds.data.astype("<f4", copy=False).tobytes(order="C"))
    labels_path = path / LABELS_FILE
    if ds.has_labels:
        labels_path.write_bytes(ds.labels.astype(np.uint8).tobytes())
    elif labels_path.exists():
        labels_path.unlink()
    logger.debug("saved %r to %s", ds, path)


def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads((path / META_FILE).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptMetadataError(f"{path / META_FILE} is not valid JSON: {exc}") from None
    if not isinstance(meta, dict):
        raise CorruptMetadataError(f"{path / META_FILE} must hold a JSON object")
    return meta


def _meta_shape(meta: dict) -> Tuple[int, int, int, int]:
    try:
        shape = tuple(int(meta[k]) for k in ("n", "t", "j", "c"))
    except KeyError as exc:
        raise CorruptMetadataError(f"{META_FILE} lacks the field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise CorruptMetadataError(f"{META_FILE} has a non-integer shape: {exc}") from None
    if min(shape) < 0:
        raise CorruptMetadataError(f"{META_FILE} has a negative shape {shape}")
    return shape


def load_dataset(path: PathLike, topology: JointTopology = CANONICAL_TOPOLOGY) -> GaitDataset:
    """Read a dataset directory written by :func:`save_dataset`.

    Every malformed input raises a :class:`DatasetFormatError` subclass.

    Raises:
      MissingDatasetFileError: ``meta.json`` or ``data.f32`` is absent.
      CorruptMetadataError: ``meta.json`` is not valid JSON or a field is
          missing or invalid.
      SchemaVersionError: unknown ``schema_version``.
      ShapeMismatchError: payload sizes disagree with ``meta.json``.
      NonFiniteDataError: the payload holds NaN or infinity.
      InvalidLabelError: a label byte is outside ``0..3`` and ``255``."""
    path = Path(path)
    for name in (META_FILE, DATA_FILE):
        if not (path / name).is_file():
            raise MissingDatasetFileError(f"{path / name} does not exist")
    meta = _read_meta(path)
    version = meta.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})"
        )
    if meta.get("endianness", "little") != "little":
        raise SchemaVersionError(f"unsupported endianness {meta['endianness']!r}")
    n, t, j, c = _meta_shape(meta)
    joint_names = meta.get("joint_names", list(topology.joint_names))
    if not isinstance(joint_names, list):
        raise CorruptMetadataError(f"joint_names in {META_FILE} must be a list")
    if joint_names != list(topology.joint_names):
        raise ShapeMismatchError("joint_names in meta.json do not match the topology")
    payload = (path / DATA_FILE).read_bytes()
    expected = n * t * j * c * 4
    if len(payload) != expected:
        raise ShapeMismatchError(
            f"{DATA_FILE} holds {len(payload)} bytes, meta.json implies {expected} "
            f"({n} x {t} x {j} x {c} float32)"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, t, j, c).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{DATA_FILE} holds non-finite values")
    labels = None
    if (path / LABELS_FILE).is_file():
        labels = np.frombuffer((path / LABELS_FILE).read_bytes(), dtype=np.uint8)
        if labels.size != n:
            raise ShapeMismatchError(f"{LABELS_FILE} holds {labels.size} labels, expected {n}")
        bad = (labels >= NUM_CLASSES) & (labels != UNLABELED)
        if bad.any():
            raise InvalidLabelError(
                f"{LABELS_FILE} holds {int(bad.sum())} bytes outside 0..{NUM_CLASSES - 1} "
                f"and {UNLABELED}"
            )
        labels = labels.copy()
    try:
        return GaitDataset(data, labels, topology, meta.get("split_tags"), meta.get("groups"))
    except DatasetFormatError:
        raise
    except (TypeError, ValueError) as exc:
        # split_tags or groups
        raise CorruptMetadataError(f"{path / META_FILE}: {exc}") from None


################################################################
# Splits
################################################################


def largest_remainder(fractions: Sequence[float], total: int) -> np.ndarray:
    """Apportion ``total`` integer units to ``fractions`` (Hamilton's method).

    Ties in the remainders go to the lower index."""
    fractions = np.asarray(fractions, dtype=np.float64)
    quotas = fractions / fractions.sum() * total
    counts = np.floor(quotas).astype(np.int64)
    leftover = int(total - counts.sum())
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    ds: GaitDataset, ratio: float = 0.8, seed: int = 0, stratified: bool = False
) -> Tuple[GaitDataset, GaitDataset]:
    """Random train/test partition with ``round(ratio * N)`` training samples.

    Both halves are kept non-empty. With ``stratified`` each class is split on
    its own and the training quota is apportioned by largest remainder."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(ds)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    n_train = min(max(_round_half_up(ratio * n), 1), n - 1)
    rng = np.random.default_rng(seed)
    if stratified:
        classes = np.unique(ds.labels)
        members = [np.flatnonzero(ds.labels == c) for c in classes]
        quotas = largest_remainder([len(m) for m in members], n_train)
        train_idx = np.concatenate(
            [rng.permutation(m)[:q] for m, q in zip(members, quotas)]
        )
    else:
        train_idx = rng.permutation(n)[:n_train]
    train_idx = np.sort(train_idx)
    test_idx = np.setdiff1d(np.arange(n), train_idx)
    return ds.subset(train_idx, "train"), ds.subset(test_idx, "test")


def split_by_group(ds: GaitDataset, test_groups: Sequence[int]) -> Tuple[GaitDataset, GaitDataset]:
    """Actor-disjoint split: samples of ``test_groups`` form the test set."""
    if ds.groups is None:
        raise ValueError("dataset carries no group ids")
    in_test = np.isin(ds.groups, np.asarray(list(test_groups), dtype=np.int64))
    if in_test.all() or not in_test.any():
        raise ValueError("group split leaves one side empty")
    return (
        ds.subset(np.flatnonzero(~in_test), "train"),
        ds.subset(np.flatnonzero(in_test), "test"),
    )


def labeled_count(fraction: float, n: int) -> int:
    # round first so 0.05 * 400 (= 20.000000000000004) stays 20
    return int(math.ceil(round(fraction * n, 9)))


def select_labeled_fraction(
    ds: GaitDataset, fraction: float, seed: int = 0, stratified: bool = False
) -> GaitDataset:
    """Pick ``ceil(fraction * N)`` labeled samples uniformly without replacement.

    ``stratified`` apportions the count over classes by largest remainder
    instead of drawing from the whole pool."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot select from an empty dataset")
    if not ds.is_labeled:
        raise MissingLabelsError("select_labeled_fraction needs a fully labeled dataset")
    k = labeled_count(fraction, n)
    rng = np.random.default_rng(seed)
    if stratified:
        hist = ds.class_histogram()
        quotas = largest_remainder(hist, k)
        chosen = np.concatenate(
            [
                rng.permutation(np.flatnonzero(ds.labels == c))[:q]
                for c, q in enumerate(quotas)
            ]
        )
    else:
        chosen = rng.choice(n, size=k, replace=False)
    return ds.subset(chosen)


################################################################
# Temporal resampling
################################################################


def resample_temporal(seq: SkeletonSequence, target_t: int = CANONICAL_T) -> SkeletonSequence:
    """Linearly interpolate every joint coordinate onto ``target_t`` uniform frames.

    The first and last frames are preserved exactly."""
    if target_t < 2:
        raise ValueError(f"target_t must be at least 2, got {target_t}")
    data = seq.data
    t = data.shape[0]
    if t < 2:
        raise ValueError(f"input must have at least 2 frames, got {t}")
    if t == target_t:
        return SkeletonSequence(data.copy(), seq.label)
    positions = np.linspace(0.0, t - 1, target_t)
    lower = np.minimum(np.floor(positions).astype(np.int64), t - 2)
    frac = (positions - lower)[:, None, None]
    source = data.astype(np.float64)
    out = source[lower] * (1.0 - frac) + source[lower + 1] * frac
    out[0] = source[0]
    out[-1] = source[-1]
    return SkeletonSequence(out.astype(data.dtype), seq.label)
