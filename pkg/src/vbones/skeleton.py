"""Joint tree, real/virtual bone sets, and root-to-joint path enumeration.

The skeleton is a rooted tree of 17 joints connected by 16 real bones.
Virtual bones are extra straight-line segments between non-adjacent joints;
adding them to the tree creates loops, so a joint can be reached from the
root along several bone paths.  Path enumeration is the analysis tool that
makes those loops explicit.

Bones are stored as (head, tail) index pairs.  The canonical direction of a
bone points from tail to head; for a real bone the head is the child joint
and the tail its parent.  Walking a bone tail-to-head contributes the bone
vector with sign +1, head-to-tail with sign -1.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError

# 17-joint layout used throughout: pelvis is the root, legs first, then the
# torso column, then the arms hanging off the thorax.
JOINT_NAMES = (
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
)

PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

VIRTUAL_CONFIG_NAMES = ("VB0", "VB5", "VB10", "VB13", "VB23")


@dataclass(frozen=True)
class SkeletonTopology:
    """A rooted joint tree: names plus a parent index per joint (-1 at the root)."""

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]

    def __post_init__(self):
        names, parents = self.joint_names, self.parents
        if len(names) != len(parents):
            raise ValidationError(
                f"{len(names)} joint names but {len(parents)} parent entries"
            )
        if len(names) < 2:
            raise ValidationError("a skeleton needs at least two joints")
        if len(set(names)) != len(names):
            raise ValidationError("duplicate joint names")
        roots = [j for j, p in enumerate(parents) if p == -1]
        if len(roots) != 1:
            raise ValidationError(f"expected exactly one root, found {len(roots)}")
        n = len(names)
        for j, p in enumerate(parents):
            if p == -1:
                continue
            if not 0 <= p < n:
                raise ValidationError(f"parent index {p} of joint {j} out of range")
            if p == j:
                raise ValidationError(f"joint {j} is its own parent")
        # Tree check: every joint must reach the root without revisiting.
        for j in range(n):
            seen = set()
            cur = j
            while cur != -1:
                if cur in seen:
                    raise ValidationError(f"parent chain of joint {j} contains a cycle")
                seen.add(cur)
                cur = parents[cur]

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root_index(self) -> int:
        return self.parents.index(-1)

    @property
    def real_bones(self) -> tuple[tuple[int, int], ...]:
        """All (child, parent) edges, ordered by child index."""
        return tuple(
            (j, p) for j, p in enumerate(self.parents) if p != -1
        )

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown joint name {name!r}") from None

    def children(self, joint: int) -> tuple[int, ...]:
        return tuple(j for j, p in enumerate(self.parents) if p == joint)

    def depth(self, joint: int) -> int:
        """Number of real bones between `joint` and the root."""
        d, cur = 0, joint
        while self.parents[cur] != -1:
            cur = self.parents[cur]
            d += 1
        return d

    @property
    def end_joints(self) -> tuple[int, ...]:
        """Non-root joints with no children (hands, feet, head)."""
        return tuple(
            j
            for j in range(self.num_joints)
            if j != self.root_index and not self.children(j)
        )

    def adjacent(self, a: int, b: int) -> bool:
        """True when a real bone connects the two joints."""
        return self.parents[a] == b or self.parents[b] == a


def default_topology() -> SkeletonTopology:
    return SkeletonTopology(JOINT_NAMES, PARENTS)


@dataclass(frozen=True)
class VirtualBoneConfig:
    """A named set of virtual bones, each an unordered pair of joint indices.

    Pairs are stored sorted (low index first) and the list itself is sorted,
    so two configs with the same pairs compare equal and serialize identically.
    """

    name: str
    pairs: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return len(self.pairs)


def _validate_pairs(
    pairs: Sequence[tuple[int, int]], topology: SkeletonTopology
) -> tuple[tuple[int, int], ...]:
    n = topology.num_joints
    canon = []
    for a, b in pairs:
        if a == b:
            raise ConfigurationError(f"virtual bone ({a}, {b}) connects a joint to itself")
        if not (0 <= a < n and 0 <= b < n):
            raise ConfigurationError(f"virtual bone ({a}, {b}) references a missing joint")
        lo, hi = (a, b) if a < b else (b, a)
        if topology.adjacent(lo, hi):
            raise ConfigurationError(
                f"virtual bone ({lo}, {hi}) duplicates a real bone"
            )
        canon.append((lo, hi))
    ordered = tuple(sorted(canon))
    if len(set(ordered)) != len(ordered):
        raise ConfigurationError("duplicate virtual bone pair")
    return ordered


def make_virtual_config(name: str, topology: SkeletonTopology | None = None) -> VirtualBoneConfig:
    """Build one of the named virtual-bone sets on the given topology.

    VB0   no virtual bones
    VB5   root to each end joint
    VB10  every pair of end joints
    VB13  root to every joint it is not connected to by a real bone
    VB23  union of VB10 and VB13
    """
    topo = topology if topology is not None else default_topology()
    root = topo.root_index
    ends = topo.end_joints
    if name == "VB0":
        pairs: list[tuple[int, int]] = []
    elif name == "VB5":
        pairs = [(root, e) for e in ends]
    elif name == "VB10":
        pairs = list(itertools.combinations(sorted(ends), 2))
    elif name == "VB13":
        pairs = [
            (root, j)
            for j in range(topo.num_joints)
            if j != root and not topo.adjacent(root, j)
        ]
    elif name == "VB23":
        tens = set(itertools.combinations(sorted(ends), 2))
        thirteens = {
            (root, j)
            for j in range(topo.num_joints)
            if j != root and not topo.adjacent(root, j)
        }
        pairs = sorted(tens | thirteens)
    else:
        raise ConfigurationError(
            f"unknown virtual config {name!r}, expected one of {VIRTUAL_CONFIG_NAMES}"
        )
    expected = int(name[2:])
    if len(pairs) != expected:
        raise ConfigurationError(
            f"{name} requires {expected} pairs but this topology yields {len(pairs)}"
        )
    return VirtualBoneConfig(name, _validate_pairs(pairs, topo))


@dataclass(frozen=True)
class BoneSet:
    """The combined bone list: all real bones first, then the virtual ones.

    Real bones keep their (child, parent) orientation; a virtual pair (a, b)
    with a < b becomes the bone (head=b, tail=a), so its canonical direction
    runs from the lower-indexed joint to the higher one.
    """

    topology: SkeletonTopology
    virtual: VirtualBoneConfig

    def __post_init__(self):
        _validate_pairs(self.virtual.pairs, self.topology)

    @property
    def bones(self) -> tuple[tuple[int, int], ...]:
        real = self.topology.real_bones
        virt = tuple((b, a) for a, b in self.virtual.pairs)
        return real + virt

    @property
    def num_real(self) -> int:
        return len(self.topology.real_bones)

    @property
    def size(self) -> int:
        return self.num_real + self.virtual.count

    def heads_tails(self) -> tuple[list[int], list[int]]:
        bones = self.bones
        return [h for h, _ in bones], [t for _, t in bones]

    def bone_name(self, index: int) -> str:
        h, t = self.bones[index]
        names = self.topology.joint_names
        kind = "real" if index < self.num_real else "virtual"
        return f"{kind}:{names[t]}->{names[h]}"


@dataclass(frozen=True)
class PathSet:
    """All simple root-to-target bone paths found under an edge cap.

    Each path is a tuple of (bone_index, sign) steps; sign +1 means the bone
    was walked tail-to-head (its canonical direction), -1 the reverse.  The
    root itself is reachable by the single empty path.
    """

    target_joint: int
    max_edges: int
    paths: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def count(self) -> int:
        return len(self.paths)


def enumerate_paths(bone_set: BoneSet, target: int, max_edges: int) -> PathSet:
    """Enumerate every simple path from the root to `target`.

    Paths visit each joint at most once and use at most `max_edges` bones.
    Results are ordered lexicographically by their bone-index sequence, which
    makes the output deterministic and puts the pure real-bone chain first
    whenever its bones carry the lowest indices.

    The cap must be at least the target's depth in the real tree, otherwise
    even the real-bone chain would be cut off.
    """
    topo = bone_set.topology
    if not 0 <= target < topo.num_joints:
        raise ValidationError(f"target joint {target} out of range")
    depth = topo.depth(target)
    if max_edges < depth:
        raise ValidationError(
            f"max_edges={max_edges} is below the real-tree depth {depth} of joint {target}"
        )
    root = topo.root_index
    if target == root:
        return PathSet(target, max_edges, (tuple(),))

    # adjacency[j] lists (bone_index, other_joint, sign), sorted by bone index
    # so the DFS emits paths in lexicographic bone-sequence order.
    adjacency: list[list[tuple[int, int, int]]] = [[] for _ in range(topo.num_joints)]
    for idx, (head, tail) in enumerate(bone_set.bones):
        adjacency[tail].append((idx, head, +1))
        adjacency[head].append((idx, tail, -1))
    for entries in adjacency:
        entries.sort()

    found: list[tuple[tuple[int, int], ...]] = []
    visited = [False] * topo.num_joints
    visited[root] = True
    steps: list[tuple[int, int]] = []

    def walk(joint: int) -> None:
        if len(steps) == max_edges:
            return
        for bone_idx, other, sign in adjacency[joint]:
            if visited[other]:
                continue
            steps.append((bone_idx, sign))
            if other == target:
                # A simple path cannot revisit the target, so stop extending.
                found.append(tuple(steps))
            else:
                visited[other] = True
                walk(other)
                visited[other] = False
            steps.pop()

    walk(root)
    return PathSet(target, max_edges, tuple(found))


def bone_lengths_from_joints(joints3d, bone_set: BoneSet):
    """Euclidean length of every bone in `bone_set`, real and virtual.

    Accepts numpy arrays or torch tensors shaped [..., J, 3]; returns the
    matching [..., B] array.  Rejects non-finite input.
    """
    heads, tails = bone_set.heads_tails()
    if joints3d.shape[-1] != 3 or joints3d.shape[-2] != bone_set.topology.num_joints:
        raise ValidationError(
            f"expected joints shaped [..., {bone_set.topology.num_joints}, 3], "
            f"got {tuple(joints3d.shape)}"
        )
    if isinstance(joints3d, np.ndarray):
        if not np.isfinite(joints3d).all():
            raise ValidationError("joint positions contain non-finite values")
    else:
        import torch

        if not bool(torch.isfinite(joints3d).all()):
            raise ValidationError("joint positions contain non-finite values")
    vec = joints3d[..., heads, :] - joints3d[..., tails, :]
    return ((vec**2).sum(-1)) ** 0.5


# --- serialization ---------------------------------------------------------

_FORMAT_KEY = "vbones-skeleton-v1"


def skeleton_to_json(
    topology: SkeletonTopology, virtual: VirtualBoneConfig | None = None
) -> str:
    """Canonical JSON text for a topology plus optional virtual bones.

    Key order and whitespace are fixed, so dumping the result of a load
    reproduces the original bytes.
    """
    virt = virtual.pairs if virtual is not None else ()
    doc = {
        "format": _FORMAT_KEY,
        "joints": list(topology.joint_names),
        "parents": list(topology.parents),
        "virtual_bones": [
            [topology.joint_names[a], topology.joint_names[b]] for a, b in virt
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def skeleton_from_json(text: str) -> tuple[SkeletonTopology, VirtualBoneConfig]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"skeleton JSON is not valid JSON: {exc}") from exc
    for key in ("joints", "parents", "virtual_bones"):
        if key not in doc:
            raise ValidationError(f"skeleton JSON is missing the {key!r} key")
    topo = SkeletonTopology(tuple(doc["joints"]), tuple(int(p) for p in doc["parents"]))
    pairs = []
    for entry in doc["virtual_bones"]:
        if len(entry) != 2:
            raise ValidationError(f"virtual bone entry {entry!r} must name two joints")
        pairs.append((topo.index(entry[0]), topo.index(entry[1])))
    config = VirtualBoneConfig("custom", _validate_pairs(pairs, topo))
    # Recognize the built-in sets so round-trips keep their short names.
    for name in VIRTUAL_CONFIG_NAMES:
        try:
            if make_virtual_config(name, topo).pairs == config.pairs:
                config = VirtualBoneConfig(name, config.pairs)
                break
        except ConfigurationError:
            continue
    return topo, config


def save_skeleton(
    path: str | Path, topology: SkeletonTopology, virtual: VirtualBoneConfig | None = None
) -> None:
    Path(path).write_text(skeleton_to_json(topology, virtual))


def load_skeleton(path: str | Path) -> tuple[SkeletonTopology, VirtualBoneConfig]:
    return skeleton_from_json(Path(path).read_text())
