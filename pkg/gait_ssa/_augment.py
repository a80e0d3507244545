"""Seed-deterministic skeleton augmentations.

Every transform takes a ``T x J x C`` array (or a :class:`SkeletonSequence`,
in which case a :class:`SkeletonSequence` comes back) and never modifies its
input. Randomness comes exclusively from an :class:`RngStream`, so a
transform is a pure function of (input, parameters, seed)."""

import functools
import math
from typing import Optional, Sequence, Tuple

import attr
import numpy as np

from ._dataset import SkeletonSequence
from ._topology import CANONICAL_TOPOLOGY, JointTopology

Range = Tuple[float, float]


################################################################
# Random streams
################################################################


def _check_seed(instance, attribute, value):
    if not 0 <= value < 2**64:
        raise ValueError(f"{attribute.name} must fit in 64 unsigned bits, got {value}")


@attr.s(slots=True)
class RngStream:
    """Counter-based random stream.

    Draw ``k`` of a stream seeded with ``s`` always comes from the Philox
    block keyed by ``s`` with ``k`` in the top counter word, independent of
    platform and of how many values earlier draws consumed."""

    seed: int = attr.ib(converter=int, validator=_check_seed)
    counter: int = attr.ib(default=0, converter=int)

    def _generator(self) -> np.random.Generator:
        bits = np.random.Philox(key=self.seed, counter=self.counter << 192)
        self.counter += 1
        return np.random.Generator(bits)

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream; does not advance this one."""
        child = np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)
        return RngStream(int(child[0]))

    def random(self, size=None):
        return self._generator().random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._generator().uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._generator().integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self._generator().choice(a, size, replace=replace)


def sample_seeds(seed: int, *path: int, size: int) -> np.ndarray:
    """``size`` per-sample seeds derived from ``seed`` and an index path such
    as ``(epoch, step)``."""
    return np.random.SeedSequence([seed, *path]).generate_state(size, np.uint64)


def _sequence_aware(fn):
    @functools.wraps(fn)
    def wrapper(seq, *args, **kwargs):
        if isinstance(seq, SkeletonSequence):
            return SkeletonSequence(fn(seq.data, *args, **kwargs), seq.label)
        return fn(np.asarray(seq), *args, **kwargs)

    return wrapper


################################################################
# General augmentations
################################################################


def shear_matrix(factors: Sequence[float]) -> np.ndarray:
    """Unit-diagonal shear matrix from ``(r12, r13, r21, r23, r31, r32)``."""
    r12, r13, r21, r23, r31, r32 = factors
    return np.array([[1.0, r12, r13], [r21, 1.0, r23], [r31, r32, 1.0]])


@_sequence_aware
def shear(seq: np.ndarray, factors: Sequence[float]) -> np.ndarray:
    """Right-multiply every joint coordinate row by :func:`shear_matrix`."""
    return (seq @ shear_matrix(factors)).astype(seq.dtype)


@_sequence_aware
def spatial_flip(
    seq: np.ndarray, topo: JointTopology, rng: RngStream, p: float = 0.5
) -> np.ndarray:
    """With probability ``p`` swap left and right joint trajectories."""
    if rng.random() < p:
        return seq[:, topo.flip_permutation()]
    return seq.copy()


def rotation_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    """Rotation about X, then Y, then Z by the given angles in degrees."""
    ax, ay, az = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    rx = np.array([[1, 0, 0], [0, math.cos(ax), -math.sin(ax)], [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0], [math.sin(az), math.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


@_sequence_aware
def apply_rotation(seq: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return (seq @ np.asarray(matrix).T).astype(seq.dtype)


def draw_rotation_angles(
    rng: RngStream, main_range: Range = (0.0, 30.0), other_range: Range = (0.0, 10.0)
) -> np.ndarray:
    """Angles for X, Y and Z; a uniformly chosen principal axis gets
    ``main_range``, the other two get ``other_range``."""
    axis = int(rng.integers(3))
    angles = rng.uniform(other_range[0], other_range[1], size=3)
    angles[axis] = rng.uniform(main_range[0], main_range[1])
    return angles


@_sequence_aware
def rotate(
    seq: np.ndarray,
    rng: RngStream,
    main_range: Range = (0.0, 30.0),
    other_range: Range = (0.0, 10.0),
) -> np.ndarray:
    return apply_rotation(seq, rotation_matrix(draw_rotation_angles(rng, main_range, other_range)))


def crop_padding(t: int, gamma: float) -> Tuple[int, int]:
    """Frames added before and after a ``t``-frame sequence."""
    pad = int(t / gamma)
    return pad // 2, pad - pad // 2


@_sequence_aware
def pad_for_crop(seq: np.ndarray, gamma: float = 2.0) -> np.ndarray:
    head, tail = crop_padding(seq.shape[0], gamma)
    return np.pad(seq, ((head, tail), (0, 0), (0, 0)), mode="edge")


@_sequence_aware
def crop(
    seq: np.ndarray, gamma: float, rng: Optional[RngStream] = None, offset: Optional[int] = None
) -> np.ndarray:
    """Edge-pad ``T / gamma`` frames and take a random ``T``-frame window.

    ``offset`` pins the window start inside the padded sequence; the
    original frames start at ``crop_padding(T, gamma)[0]``."""
    if gamma < 1:
        raise ValueError(f"gamma must be at least 1, got {gamma}")
    t = seq.shape[0]
    padded = pad_for_crop(seq, gamma)
    if offset is None:
        offset = int(rng.integers(0, padded.shape[0] - t + 1))
    if not 0 <= offset <= padded.shape[0] - t:
        raise ValueError(f"crop offset {offset} out of range")
    return padded[offset : offset + t].copy()


@_sequence_aware
def temporal_flip(seq: np.ndarray, rng: RngStream, p: float = 0.5) -> np.ndarray:
    if rng.random() < p:
        return seq[::-1].copy()
    return seq.copy()


################################################################
# Strong augmentations
################################################################


@_sequence_aware
def upper_body_jitter(
    seq: np.ndarray,
    topo: JointTopology,
    rng: Optional[RngStream] = None,
    jitter_range: Range = (-1.0, 1.0),
    matrix: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Right-multiply the coordinates of the shoulders, elbows and hands by one
    random 3x3 matrix; every other joint is copied unchanged."""
    if matrix is None:
        matrix = rng.uniform(jitter_range[0], jitter_range[1], size=(3, 3))
    joints = sorted(topo.upper_jitter_set)
    out = seq.copy()
    out[:, joints] = (seq[:, joints] @ np.asarray(matrix)).astype(seq.dtype)
    return out


def draw_mask_parts(
    topo: JointTopology, rng: RngStream, counts: Sequence[int] = (1, 2)
) -> Tuple[str, ...]:
    """Names of the body parts a spatial mask zeroes."""
    names = list(topo.parts)
    count = int(rng.choice(np.asarray(counts)))
    picked = rng.choice(len(names), size=count, replace=False)
    return tuple(names[i] for i in sorted(picked))


@_sequence_aware
def mask_parts(seq: np.ndarray, topo: JointTopology, parts: Sequence[str]) -> np.ndarray:
    out = seq.copy()
    for name in parts:
        out[:, list(topo.part_joints(name))] = 0
    return out


@_sequence_aware
def spatial_mask(
    seq: np.ndarray, topo: JointTopology, rng: RngStream, counts: Sequence[int] = (1, 2)
) -> np.ndarray:
    """Zero the joints of one or more randomly drawn body parts in every frame."""
    return mask_parts(seq, topo, draw_mask_parts(topo, rng, counts))


def temporal_mask_count(t: int, ratio: float) -> int:
    # tolerance keeps 0.25 * 120 from flooring to 29 on inexact products
    return int(math.floor(ratio * t + 1e-9))


def draw_masked_frames(t: int, ratio: float, rng: RngStream) -> np.ndarray:
    k = temporal_mask_count(t, ratio)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(t, size=k, replace=False))


@_sequence_aware
def temporal_mask(seq: np.ndarray, ratio: float, rng: RngStream) -> np.ndarray:
    """Zero every joint in ``floor(ratio * T)`` distinct random frames."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"temporal mask ratio must be in (0, 1), got {ratio}")
    out = seq.copy()
    out[draw_masked_frames(seq.shape[0], ratio, rng)] = 0
    return out


################################################################
# Specs and pipelines
################################################################


def check_probability(instance, attribute, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{attribute.name} must be in [0, 1], got {value}")


def check_range(instance, attribute, value):
    low, high = value
    if low > high:
        raise ValueError(f"{attribute.name} must be (min, max), got {value}")


def check_angle_range(instance, attribute, value):
    check_range(instance, attribute, value)
    if value[0] < 0:
        raise ValueError(f"{attribute.name} must be nonnegative, got {value}")


def check_gamma(instance, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be at least 1, got {value}")


def _float_pair(value):
    low, high = value
    return float(low), float(high)


SPATIAL_TRANSFORMS = ("shear", "spatial_flip", "rotate")
TEMPORAL_TRANSFORMS = ("crop", "temporal_flip")


@attr.s(frozen=True)
class GeneralAugmentSpec:
    """Switches and ranges of the five general augmentations.

    The default pipeline is shear followed by crop."""

    shear: bool = attr.ib(default=True)
    shear_range: Range = attr.ib(default=(-1.0, 1.0), converter=_float_pair, validator=check_range)
    spatial_flip: bool = attr.ib(default=False)
    flip_prob: float = attr.ib(default=0.5, validator=check_probability)
    rotate: bool = attr.ib(default=False)
    rotate_main_range: Range = attr.ib(
        default=(0.0, 30.0), converter=_float_pair, validator=check_angle_range
    )
    rotate_other_range: Range = attr.ib(
        default=(0.0, 10.0), converter=_float_pair, validator=check_angle_range
    )
    crop: bool = attr.ib(default=True)
    crop_gamma: float = attr.ib(default=2.0, validator=check_gamma)
    temporal_flip: bool = attr.ib(default=False)
    temporal_flip_prob: float = attr.ib(default=0.5, validator=check_probability)

    @classmethod
    def disabled(cls) -> "GeneralAugmentSpec":
        return cls(shear=False, crop=False)

    def enabled(self) -> Tuple[str, ...]:
        return tuple(
            name for name in SPATIAL_TRANSFORMS + TEMPORAL_TRANSFORMS if getattr(self, name)
        )


def general_spec_for(spatial: str, temporal: str) -> GeneralAugmentSpec:
    """A spec with exactly one spatial and one temporal transform enabled."""
    if spatial not in SPATIAL_TRANSFORMS:
        raise ValueError(f"spatial transform must be one of {SPATIAL_TRANSFORMS}, got {spatial!r}")
    if temporal not in TEMPORAL_TRANSFORMS:
        raise ValueError(
            f"temporal transform must be one of {TEMPORAL_TRANSFORMS}, got {temporal!r}"
        )
    switches = {name: False for name in SPATIAL_TRANSFORMS + TEMPORAL_TRANSFORMS}
    switches[spatial] = switches[temporal] = True
    return GeneralAugmentSpec(**switches)


COMPOSITIONS = tuple((s, t) for s in SPATIAL_TRANSFORMS for t in TEMPORAL_TRANSFORMS)


def _check_mask_counts(instance, attribute, value):
    if not value or not set(value) <= {1, 2}:
        raise ValueError(f"{attribute.name} must be drawn from {{1, 2}}, got {value}")


def _check_mask_ratio(instance, attribute, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{attribute.name} must be in (0, 1), got {value}")


@attr.s(frozen=True)
class StrongAugmentSpec:
    upper_body_jitter: bool = attr.ib(default=True)
    jitter_range: Range = attr.ib(
        default=(-1.0, 1.0), converter=_float_pair, validator=check_range
    )
    spatiotemporal_mask: bool = attr.ib(default=True)
    mask_parts_counts: Tuple[int, ...] = attr.ib(
        default=(1, 2), converter=lambda v: tuple(int(x) for x in v), validator=_check_mask_counts
    )
    temporal_mask_ratio: float = attr.ib(default=0.25, validator=_check_mask_ratio)


STRONG_PRESETS = {
    "none": StrongAugmentSpec(upper_body_jitter=False, spatiotemporal_mask=False),
    "ubj": StrongAugmentSpec(upper_body_jitter=True, spatiotemporal_mask=False),
    "rsm": StrongAugmentSpec(upper_body_jitter=False, spatiotemporal_mask=True),
    "ssa": StrongAugmentSpec(),
}


@_sequence_aware
def random_spatiotemporal_mask(
    seq: np.ndarray, topo: JointTopology, spec: StrongAugmentSpec, rng: RngStream
) -> np.ndarray:
    """Spatial part mask on sub-stream 0, then temporal frame mask on sub-stream 1."""
    masked = spatial_mask(seq, topo, rng.spawn(0), spec.mask_parts_counts)
    return temporal_mask(masked, spec.temporal_mask_ratio, rng.spawn(1))


@_sequence_aware
def apply_general(
    seq: np.ndarray,
    spec: GeneralAugmentSpec,
    rng: RngStream,
    topo: JointTopology = CANONICAL_TOPOLOGY,
) -> np.ndarray:
    """Spatial transforms, then temporal ones, each on its own sub-stream."""
    out = seq.copy()
    if spec.shear:
        sub = rng.spawn(0)
        out = shear(out, sub.uniform(spec.shear_range[0], spec.shear_range[1], size=6))
    if spec.spatial_flip:
        out = spatial_flip(out, topo, rng.spawn(1), spec.flip_prob)
    if spec.rotate:
        out = rotate(out, rng.spawn(2), spec.rotate_main_range, spec.rotate_other_range)
    if spec.crop:
        out = crop(out, spec.crop_gamma, rng.spawn(3))
    if spec.temporal_flip:
        out = temporal_flip(out, rng.spawn(4), spec.temporal_flip_prob)
    return out


@_sequence_aware
def apply_strong(
    seq: np.ndarray,
    general: GeneralAugmentSpec,
    strong: StrongAugmentSpec,
    rng: RngStream,
    topo: JointTopology = CANONICAL_TOPOLOGY,
) -> np.ndarray:
    out = apply_general(seq, general, rng.spawn(0), topo)
    if strong.upper_body_jitter:
        out = upper_body_jitter(out, topo, rng.spawn(1), strong.jitter_range)
    if strong.spatiotemporal_mask:
        out = random_spatiotemporal_mask(out, topo, strong, rng.spawn(2))
    return out


@attr.s(frozen=True)
class AugmentationPlan:
    """Everything a worker needs to turn a batch into its three views."""

    general: GeneralAugmentSpec = attr.ib(factory=GeneralAugmentSpec)
    strong: StrongAugmentSpec = attr.ib(factory=StrongAugmentSpec)
    topology: JointTopology = attr.ib(default=CANONICAL_TOPOLOGY)

    def views(self, seq, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(s1, s2, s3)``: two general views and one strong view."""
        rng = RngStream(seed)
        return (
            apply_general(seq, self.general, rng.spawn(1), self.topology),
            apply_general(seq, self.general, rng.spawn(2), self.topology),
            apply_strong(seq, self.general, self.strong, rng.spawn(3), self.topology),
        )

    def augment_batch(self, batch: np.ndarray, seeds: Sequence[int]) -> np.ndarray:
        """Stacked views of shape ``(3, B, T, J, C)`` in float32."""
        batch = np.asarray(batch, dtype=np.float32)
        if len(seeds) != batch.shape[0]:
            raise ValueError(f"{batch.shape[0]} samples but {len(seeds)} seeds")
        out = np.empty((3,) + batch.shape, dtype=np.float32)
        for i, (seq, seed) in enumerate(zip(batch, seeds)):
            for v, view in enumerate(self.views(seq, int(seed))):
                out[v, i] = view
        return out


def make_views(seq, seed: int, plan: AugmentationPlan = AugmentationPlan()):
    return plan.views(seq, seed)
