"""Synthetic four-class walking generator for desk-scale experiments.

Each class walks with its own speed, arm swing, head pitch and cadence, so a
representation that captures gait kinematics separates the classes."""

from typing import Dict, Tuple

import attr
import numpy as np

from ._dataset import LABEL_NAMES, NUM_CLASSES, GaitDataset, largest_remainder
from ._topology import CANONICAL_TOPOLOGY, JointTopology

# angry, neutral, happy, sad; the published percentages, normalised
EGAIT_CLASS_RATIOS = tuple(
    np.divide((0.5503, 0.2345, 0.1461, 0.0690), 0.9999).tolist()
)
EMILYA_CLASS_RATIOS = tuple(
    np.divide((0.1963, 0.2118, 0.2280, 0.3638), 0.9999).tolist()
)
CLASS_RATIO_PRESETS = {
    "egait": EGAIT_CLASS_RATIOS,
    "emilya": EMILYA_CLASS_RATIOS,
    "balanced": (0.25, 0.25, 0.25, 0.25),
}

Range = Tuple[float, float]
ClassRanges = Dict[str, Range]


def _check_ratios(instance, attribute, value):
    if len(value) != NUM_CLASSES:
        raise ValueError(f"{attribute.name} needs {NUM_CLASSES} entries, got {len(value)}")
    if any(r < 0 for r in value):
        raise ValueError(f"{attribute.name} must be nonnegative, got {value}")
    if abs(sum(value) - 1.0) > 1e-9:
        raise ValueError(f"{attribute.name} must sum to 1, got {sum(value)!r}")


def _check_positive(instance, attribute, value):
    if value <= 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def _check_class_ranges(instance, attribute, value):
    if set(value) != set(LABEL_NAMES):
        raise ValueError(f"{attribute.name} needs one range per class {LABEL_NAMES}")
    for name, (low, high) in value.items():
        if low > high:
            raise ValueError(
                f"degenerate {attribute.name} for {name!r}: min {low} > max {high}"
            )


def _ranges(**by_class) -> ClassRanges:
    return {k: tuple(v) for k, v in by_class.items()}


def _ranges_field(**defaults):
    return attr.ib(
        factory=lambda: _ranges(**defaults),
        converter=lambda v: {k: tuple(map(float, r)) for k, r in v.items()},
        validator=_check_class_ranges,
    )


@attr.s(frozen=True, eq=False)
class SynthConfig:
    """Knobs of :func:`generate_synthetic`.

    Per-class kinematic ranges are ``(min, max)`` pairs sampled uniformly
    per sequence. Speeds are meters per second, arm swing and head pitch
    are radians (positive pitch looks down) and step frequency is strides
    per second."""

    n_samples: int = attr.ib(default=400, validator=_check_positive)
    class_ratios: Tuple[float, ...] = attr.ib(
        default=EGAIT_CLASS_RATIOS, converter=tuple, validator=_check_ratios
    )
    seed: int = attr.ib(default=0)
    t: int = attr.ib(default=120, validator=_check_positive)
    fps: float = attr.ib(default=30.0, validator=_check_positive)
    n_actors: int = attr.ib(default=12, validator=_check_positive)
    noise: float = attr.ib(default=0.005)
    speed: ClassRanges = _ranges_field(
        angry=(1.5, 1.7), neutral=(0.9, 1.1), happy=(1.2, 1.4), sad=(0.6, 0.8)
    )
    arm_swing: ClassRanges = _ranges_field(
        angry=(0.55, 0.7), neutral=(0.25, 0.35), happy=(0.4, 0.5), sad=(0.1, 0.2)
    )
    head_pitch: ClassRanges = _ranges_field(
        angry=(0.05, 0.15), neutral=(0.0, 0.1), happy=(-0.15, -0.05), sad=(0.35, 0.5)
    )
    step_frequency: ClassRanges = _ranges_field(
        angry=(1.15, 1.3), neutral=(0.9, 1.0), happy=(1.05, 1.15), sad=(0.7, 0.85)
    )

    @classmethod
    def from_preset(cls, preset: str, **kwargs) -> "SynthConfig":
        try:
            ratios = CLASS_RATIO_PRESETS[preset]
        except KeyError:
            raise ValueError(
                f"unknown class ratio preset {preset!r}, "
                f"choose from {sorted(CLASS_RATIO_PRESETS)}"
            ) from None
        return cls(class_ratios=ratios, **kwargs)

    def class_counts(self) -> np.ndarray:
        return largest_remainder(self.class_ratios, self.n_samples)


# rest pose, meters, x forward, y left, z up; limbs listed proximal to distal
_REST = {
    "root": (0.0, 0.0, 1.0),
    "spine": (0.0, 0.0, 1.25),
    "neck": (0.0, 0.0, 1.5),
    "head": (0.0, 0.0, 1.65),
    "left_shoulder": (0.0, 0.18, 1.45),
    "left_elbow": (0.0, 0.2, 1.17),
    "left_hand": (0.0, 0.2, 0.92),
    "right_shoulder": (0.0, -0.18, 1.45),
    "right_elbow": (0.0, -0.2, 1.17),
    "right_hand": (0.0, -0.2, 0.92),
    "left_hip": (0.0, 0.1, 0.95),
    "left_knee": (0.0, 0.1, 0.5),
    "left_foot": (0.0, 0.1, 0.05),
    "right_hip": (0.0, -0.1, 0.95),
    "right_knee": (0.0, -0.1, 0.5),
    "right_foot": (0.0, -0.1, 0.05),
}


def _swing(pivot, point, angle):
    """Rotate ``point`` about ``pivot`` in the sagittal (x, z) plane.

    ``angle`` has shape (T,); positive swings the point forward."""
    dx = point[0] - pivot[0]
    dz = point[2] - pivot[2]
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty(angle.shape + (3,))
    out[:, 0] = pivot[0] + c * dx - s * dz
    out[:, 1] = point[1]
    out[:, 2] = pivot[2] + s * dx + c * dz
    return out


def _walk(
    topo: JointTopology,
    t: int,
    fps: float,
    speed: float,
    arm_swing: float,
    head_pitch: float,
    step_frequency: float,
    phase: float,
    scale: float,
    yaw: float,
) -> np.ndarray:
    rest = {name: np.asarray(_REST[name]) * scale for name in _REST}
    time = np.arange(t) / fps
    phi = 2 * np.pi * step_frequency * time + phase
    leg_amp = 0.25 + 0.1 * speed

    out = {name: np.broadcast_to(rest[name], (t, 3)).copy() for name in _REST}
    for side, sign in (("left", 1.0), ("right", -1.0)):
        hip = rest[f"{side}_hip"]
        thigh = sign * leg_amp * np.sin(phi)
        knee = _swing(hip, rest[f"{side}_knee"], thigh)
        # the knee flexes on the back swing
        length = np.linalg.norm(rest[f"{side}_knee"] - rest[f"{side}_foot"])
        shin = thigh - 0.3 * np.clip(-thigh / leg_amp, 0, None)
        foot = np.empty((t, 3))
        foot[:, 0] = knee[:, 0] + length * np.sin(shin)
        foot[:, 1] = rest[f"{side}_foot"][1]
        foot[:, 2] = knee[:, 2] - length * np.cos(shin)
        out[f"{side}_knee"] = knee
        out[f"{side}_foot"] = foot

        shoulder = rest[f"{side}_shoulder"]
        # arms counter-swing the leg on the same side
        arm = -sign * arm_swing * np.sin(phi)
        out[f"{side}_elbow"] = _swing(shoulder, rest[f"{side}_elbow"], arm)
        out[f"{side}_hand"] = _swing(shoulder, rest[f"{side}_hand"], arm * 1.2)

    out["head"] = _swing(rest["neck"], rest["head"], np.full(t, head_pitch))
    out["neck"] = _swing(rest["spine"], rest["neck"], np.full(t, head_pitch * 0.3))

    pose = np.stack([out[name] for name in topo.joint_names], axis=1)
    # vertical bob twice per stride, forward progression along x
    pose[..., 2] += 0.02 * scale * np.cos(2 * phi)[:, None]
    pose[..., 0] += (speed * time)[:, None]

    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pose @ rot.T


def generate_synthetic(
    cfg: SynthConfig, topo: JointTopology = CANONICAL_TOPOLOGY
) -> GaitDataset:
    """Draw ``cfg.n_samples`` labeled walking sequences.

    Label counts follow the largest-remainder apportionment of
    ``cfg.class_ratios``; samples are shuffled so classes interleave. The
    result is a pure function of ``cfg``."""
    if set(topo.joint_names) != set(_REST):
        raise ValueError("the synthetic walker needs the canonical 16-joint layout")
    rng = np.random.default_rng(cfg.seed)
    counts = cfg.class_counts()
    labels = rng.permutation(np.repeat(np.arange(NUM_CLASSES), counts))
    actor_scale = rng.uniform(0.9, 1.1, size=cfg.n_actors)
    groups = rng.integers(0, cfg.n_actors, size=cfg.n_samples)

    data = np.empty((cfg.n_samples, cfg.t, topo.num_joints, 3), dtype=np.float32)
    for i, (label, actor) in enumerate(zip(labels, groups)):
        name = LABEL_NAMES[label]
        pose = _walk(
            topo,
            cfg.t,
            cfg.fps,
            speed=rng.uniform(*cfg.speed[name]),
            arm_swing=rng.uniform(*cfg.arm_swing[name]),
            head_pitch=rng.uniform(*cfg.head_pitch[name]),
            step_frequency=rng.uniform(*cfg.step_frequency[name]),
            phase=rng.uniform(0, 2 * np.pi),
            scale=actor_scale[actor],
            yaw=rng.uniform(-0.3, 0.3),
        )
        pose += rng.normal(0.0, cfg.noise, size=pose.shape)
        data[i] = pose
    return GaitDataset(data, labels.astype(np.uint8), topo, groups=groups)
