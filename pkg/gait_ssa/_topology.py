"""The canonical 16-joint gait skeleton and the graphs derived from it."""

from collections import deque
from typing import Dict, FrozenSet, List, Tuple

import attr
import numpy as np

NUM_JOINTS = 16

JOINT_NAMES = (
    "root",
    "spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_foot",
)

# (parent, child), following the anatomical tree from the root
BONES = (
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (4, 5),
    (5, 6),
    (2, 7),
    (7, 8),
    (8, 9),
    (0, 10),
    (10, 11),
    (11, 12),
    (0, 13),
    (13, 14),
    (14, 15),
)

PART_NAMES = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")


def _check_joint_names(instance, attribute, value):
    if len(value) != NUM_JOINTS:
        raise ValueError(f"the skeleton must have {NUM_JOINTS} joints, got {len(value)}")
    if len(set(value)) != len(value):
        raise ValueError("joint names must be unique")


def _check_tree(instance, attribute, value):
    n = len(instance.joint_names)
    if len(value) != n - 1:
        raise ValueError(f"{attribute.name} must hold {n - 1} edges, got {len(value)}")
    neighbours = {j: set() for j in range(n)}
    for parent, child in value:
        if not (0 <= parent < n and 0 <= child < n) or parent == child:
            raise ValueError(f"invalid edge {(parent, child)}")
        neighbours[parent].add(child)
        neighbours[child].add(parent)
    seen = {0}
    queue = deque([0])
    while queue:
        for other in neighbours[queue.popleft()] - seen:
            seen.add(other)
            queue.append(other)
    if len(seen) != n:
        raise ValueError(f"{attribute.name} do not connect all {n} joints")


def _check_parts(instance, attribute, value):
    if len(value) != 5:
        raise ValueError(f"exactly 5 body parts are required, got {len(value)}")
    covered = [j for joints in value.values() for j in joints]
    if len(covered) != len(set(covered)):
        raise ValueError("body parts must be disjoint")
    if set(covered) != set(range(len(instance.joint_names))):
        raise ValueError("body parts must cover every joint")


def _check_jitter_set(instance, attribute, value):
    arms = set(instance.parts.get("left_arm", ())) | set(
        instance.parts.get("right_arm", ())
    )
    if len(value) != 6 or not set(value) <= arms:
        raise ValueError(f"{attribute.name} must be 6 joints of the two arms")


def _check_flip_pairs(instance, attribute, value):
    used = [j for pair in value for j in pair]
    if len(used) != len(set(used)):
        raise ValueError("a joint appears in more than one left/right pair")
    if set(used) & set(instance.parts.get("torso", ())):
        raise ValueError("torso joints are self-paired and cannot be swapped")


@attr.s(frozen=True, eq=False, repr=False)
class JointTopology:
    """Joint layout shared by every sequence of a dataset.

    Joints may be renamed or re-linked, but there are always 16 of them.
    ``parts`` partitions the joints into the five body components used by the
    spatial mask, ``upper_jitter_set`` is the shoulders, elbows and hands, and
    ``flip_pairs`` tells the spatial flip which trajectories to exchange."""

    joint_names: Tuple[str, ...] = attr.ib(converter=tuple, validator=_check_joint_names)
    edges: Tuple[Tuple[int, int], ...] = attr.ib(
        converter=lambda edges: tuple(tuple(e) for e in edges), validator=_check_tree
    )
    parts: Dict[str, Tuple[int, ...]] = attr.ib(
        converter=lambda parts: {k: tuple(v) for k, v in parts.items()},
        validator=_check_parts,
    )
    upper_jitter_set: FrozenSet[int] = attr.ib(
        converter=frozenset, validator=_check_jitter_set
    )
    flip_pairs: Tuple[Tuple[int, int], ...] = attr.ib(
        converter=lambda pairs: tuple(tuple(p) for p in pairs),
        validator=_check_flip_pairs,
    )
    center: int = attr.ib(default=0)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def part_joints(self, name: str) -> Tuple[int, ...]:
        return self.parts[name]

    def flip_permutation(self) -> np.ndarray:
        """Index array that swaps every left joint with its right counterpart."""
        perm = np.arange(self.num_joints)
        for left, right in self.flip_pairs:
            perm[left], perm[right] = right, left
        return perm

    def hop_distances(self) -> np.ndarray:
        """Tree distance of every joint to :attr:`center`."""
        dist = np.full(self.num_joints, -1, dtype=np.int64)
        dist[self.center] = 0
        queue = deque([self.center])
        while queue:
            joint = queue.popleft()
            for a, b in self.edges:
                for here, there in ((a, b), (b, a)):
                    if here == joint and dist[there] < 0:
                        dist[there] = dist[joint] + 1
                        queue.append(there)
        return dist

    def adjacency(self) -> np.ndarray:
        """Symmetrically degree-normalized adjacency with self-loops,
        ``D^-1/2 (A + I) D^-1/2``."""
        a = np.eye(self.num_joints)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
        return a * inv_sqrt[:, None] * inv_sqrt[None, :]

    def spatial_partition(self) -> np.ndarray:
        """Split :meth:`adjacency` into root, centripetal and centrifugal subsets.

        Returns a ``(3, J, J)`` array whose sum over the first axis is the
        normalized adjacency. Entry ``[k, i, j]`` weights neighbour ``i`` when
        aggregating into joint ``j``."""
        a = self.adjacency()
        dist = self.hop_distances()
        subsets = np.zeros((3,) + a.shape)
        for i, j in zip(*np.nonzero(a)):
            if dist[i] == dist[j]:
                subsets[0, i, j] = a[i, j]
            elif dist[i] < dist[j]:
                subsets[1, i, j] = a[i, j]
            else:
                subsets[2, i, j] = a[i, j]
        return subsets

    def as_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "edges": [list(e) for e in self.edges],
            "parts": {k: list(v) for k, v in self.parts.items()},
            "upper_jitter_set": sorted(self.upper_jitter_set),
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "center": self.center,
        }

    def __repr__(self):
        return (
            f"JointTopology(joints={self.num_joints}, edges={len(self.edges)}, "
            f"parts={list(self.parts)})"
        )


def _index(*names: str) -> List[int]:
    return [JOINT_NAMES.index(n) for n in names]


CANONICAL_TOPOLOGY = JointTopology(
    joint_names=JOINT_NAMES,
    edges=BONES,
    parts={
        "torso": _index("root", "spine", "neck", "head"),
        "left_arm": _index("left_shoulder", "left_elbow", "left_hand"),
        "right_arm": _index("right_shoulder", "right_elbow", "right_hand"),
        "left_leg": _index("left_hip", "left_knee", "left_foot"),
        "right_leg": _index("right_hip", "right_knee", "right_foot"),
    },
    upper_jitter_set=_index(
        "left_shoulder",
        "left_elbow",
        "left_hand",
        "right_shoulder",
        "right_elbow",
        "right_hand",
    ),
    flip_pairs=[
        _index("left_shoulder", "right_shoulder"),
        _index("left_elbow", "right_elbow"),
        _index("left_hand", "right_hand"),
        _index("left_hip", "right_hip"),
        _index("left_knee", "right_knee"),
        _index("left_foot", "right_foot"),
    ],
)
