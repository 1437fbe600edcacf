"""Synthetic motion generation, dataset layout, and input preparation.

The synthetic generator builds motions with *exactly* constant real-bone
lengths: per-frame unit bone directions are produced by cubic-spline
smoothing of random waypoints on the sphere (band-limited by a maximum
angular velocity), then forward kinematics rebuilds the joints from a fixed
length profile, and a pinhole camera renders the 2D observations, optionally
with Gaussian pixel noise.  Everything is driven by one seeded generator, so
a spec reproduces its sequence bit for bit.

A dataset on disk is a directory of pose-sequence .npz containers plus an
index.json naming each sequence's subject, action, and camera.  Ingestion
follows the usual subject split: S1/S5/S6/S7/S8 train, S9/S11 test.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GenerationError, IngestionError, ValidationError
from .geometry import (
    CameraIntrinsics,
    PoseSequence,
    load_pose_sequence,
    project_pinhole,
    save_pose_sequence,
)
from .skeleton import SkeletonTopology, default_topology

TRAIN_SUBJECTS = ("S1", "S5", "S6", "S7", "S8")
TEST_SUBJECTS = ("S9", "S11")

DEFAULT_CAMERA = CameraIntrinsics(fx=1145.0, fy=1145.0, u0=500.0, v0=500.0)

# Millimetre length per real bone, ordered like SkeletonTopology.real_bones
# (by child joint index).  Roughly a 1.7 m person.
DEFAULT_BONE_LENGTHS_MM = (
    130.0,  # pelvis -> right_hip
    450.0,  # right_hip -> right_knee
    440.0,  # right_knee -> right_ankle
    130.0,  # pelvis -> left_hip
    450.0,  # left_hip -> left_knee
    440.0,  # left_knee -> left_ankle
    230.0,  # pelvis -> spine
    250.0,  # spine -> thorax
    120.0,  # thorax -> neck
    115.0,  # neck -> head
    155.0,  # thorax -> left_shoulder
    280.0,  # left_shoulder -> left_elbow
    250.0,  # left_elbow -> left_wrist
    155.0,  # thorax -> right_shoulder
    280.0,  # right_shoulder -> right_elbow
    250.0,  # right_elbow -> right_wrist
)

# Rest direction per real bone (same order), camera frame: x right, y down,
# z away from the camera.  A person standing upright facing the camera, with
# small asymmetries so no two bones are exactly parallel.
_REST_DIRECTIONS = (
    (-1.00, 0.05, 0.08),
    (0.10, 1.00, 0.12),
    (0.05, 1.00, -0.15),
    (1.00, 0.05, -0.06),
    (-0.08, 1.00, 0.10),
    (-0.04, 1.00, -0.12),
    (0.02, -1.00, 0.05),
    (-0.03, -1.00, 0.02),
    (0.02, -1.00, 0.08),
    (0.00, -1.00, -0.06),
    (1.00, -0.12, 0.04),
    (0.35, 0.90, 0.10),
    (0.12, 1.00, -0.08),
    (-1.00, -0.10, -0.05),
    (-0.30, 0.92, 0.06),
    (-0.10, 1.00, 0.10),
)


@dataclass(frozen=True)
class SyntheticMotionSpec:
    """Everything needed to synthesize one deterministic motion clip."""

    num_frames: int = 256
    frame_rate: float = 50.0
    bone_lengths_mm: tuple[float, ...] = DEFAULT_BONE_LENGTHS_MM
    max_angular_velocity: float = 1.6  # rad/s cap on bone direction change
    waypoint_interval_s: float = 0.7  # spacing of the random waypoints
    root_center_mm: tuple[float, float, float] = (0.0, 0.0, 4500.0)
    root_wander_mm: float = 250.0
    camera: CameraIntrinsics = DEFAULT_CAMERA
    noise_sigma_2d: float = 0.0  # Gaussian pixel noise on the observations
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValidationError("num_frames must be at least 2")
        if self.frame_rate <= 0:
            raise ValidationError("frame_rate must be positive")
        if len(self.bone_lengths_mm) != len(DEFAULT_BONE_LENGTHS_MM):
            raise ValidationError(
                f"expected {len(DEFAULT_BONE_LENGTHS_MM)} bone lengths, "
                f"got {len(self.bone_lengths_mm)}"
            )
        if any(l <= 0 or not np.isfinite(l) for l in self.bone_lengths_mm):
            raise ValidationError("bone lengths must be positive and finite")
        if self.max_angular_velocity <= 0:
            raise ValidationError("max_angular_velocity must be positive")
        if self.waypoint_interval_s <= 0:
            raise ValidationError("waypoint_interval_s must be positive")
        if self.root_wander_mm < 0:
            raise ValidationError("root_wander_mm must be non-negative")
        if self.noise_sigma_2d < 0:
            raise ValidationError("noise_sigma_2d must be non-negative")


def _rotate(vec: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of `vec` about unit `axis`."""
    return (
        vec * np.cos(angle)
        + np.cross(axis, vec) * np.sin(angle)
        + axis * np.dot(axis, vec) * (1.0 - np.cos(angle))
    )


def _direction_track(
    rest: np.ndarray,
    times: np.ndarray,
    waypoint_times: np.ndarray,
    max_step: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Smooth unit-direction trajectory through random waypoints.

    Waypoints random-walk on the sphere starting from the rest direction,
    each step a rotation by at most `max_step` radians; cubic splines
    interpolate the three components and the result is renormalized.
    """
    waypoints = np.empty((len(waypoint_times), 3))
    current = rest / np.linalg.norm(rest)
    waypoints[0] = current
    for k in range(1, len(waypoint_times)):
        raw = rng.normal(size=3)
        raw -= current * np.dot(raw, current)
        norm = np.linalg.norm(raw)
        if norm < 1e-12:  # degenerate draw; keep the previous direction
            waypoints[k] = current
            continue
        axis = raw / norm
        angle = rng.uniform(0.0, max_step)
        current = _rotate(current, axis, angle)
        current /= np.linalg.norm(current)
        waypoints[k] = current
    spline = CubicSpline(waypoint_times, waypoints, axis=0, bc_type="natural")
    track = spline(times)
    norms = np.linalg.norm(track, axis=-1, keepdims=True)
    if np.any(norms < 1e-8):
        raise GenerationError("direction interpolation collapsed to zero")
    return track / norms


def _synthesize_once(
    spec: SyntheticMotionSpec, topology: SkeletonTopology, rng: np.random.Generator
) -> np.ndarray:
    """One motion draw: [T, J, 3] camera-frame joints in millimetres."""
    t_end = (spec.num_frames - 1) / spec.frame_rate
    times = np.arange(spec.num_frames) / spec.frame_rate
    num_waypoints = max(4, int(np.ceil(t_end / spec.waypoint_interval_s)) + 2)
    waypoint_times = np.linspace(0.0, max(t_end, spec.waypoint_interval_s), num_waypoints)
    max_step = min(spec.max_angular_velocity * spec.waypoint_interval_s, 2.0)

    tracks = [
        _direction_track(np.asarray(rest, dtype=float), times, waypoint_times, max_step, rng)
        for rest in _REST_DIRECTIONS
    ]

    root_waypoints = np.asarray(spec.root_center_mm, dtype=float) + rng.normal(
        0.0, spec.root_wander_mm, size=(num_waypoints, 3)
    )
    root_track = CubicSpline(waypoint_times, root_waypoints, axis=0, bc_type="natural")(times)

    joints = np.zeros((spec.num_frames, topology.num_joints, 3))
    joints[:, topology.root_index] = root_track
    # Parents come before children when walking joints by increasing depth.
    order = sorted(range(topology.num_joints), key=topology.depth)
    bone_of_child = {child: i for i, (child, _p) in enumerate(topology.real_bones)}
    for joint in order:
        parent = topology.parents[joint]
        if parent == -1:
            continue
        bone = bone_of_child[joint]
        joints[:, joint] = (
            joints[:, parent] + spec.bone_lengths_mm[bone] * tracks[bone]
        )
    return joints


def generate_synthetic(
    spec: SyntheticMotionSpec, topology: SkeletonTopology | None = None
) -> PoseSequence:
    """Deterministic synthetic clip: exact constant bone lengths, pinhole 2D.

    If a draw places any joint at or behind the camera plane, the root is
    pushed 600 mm deeper and the motion redrawn, up to 100 attempts.
    """
    topo = topology if topology is not None else default_topology()
    rng = np.random.default_rng(spec.seed)
    working = spec
    for _attempt in range(100):
        joints3d = _synthesize_once(working, topo, rng)
        if joints3d[..., 2].min() > 1.0:  # keep a 1 mm margin in front of the camera
            joints2d = project_pinhole(joints3d, working.camera)
            if working.noise_sigma_2d > 0:
                joints2d = joints2d + rng.normal(
                    0.0, working.noise_sigma_2d, size=joints2d.shape
                )
            return PoseSequence(
                joints2d=joints2d,
                joints3d=joints3d,
                camera=working.camera,
                frame_rate=working.frame_rate,
            )
        center = working.root_center_mm
        working = replace(
            working, root_center_mm=(center[0], center[1], center[2] + 600.0)
        )
    raise GenerationError(
        "could not place the motion in front of the camera after 100 attempts"
    )


# --- dataset layout --------------------------------------------------------

_INDEX_FORMAT = "vbones-dataset-v1"


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    subject: str
    action: str
    camera_id: str
    num_frames: int
    path: str


@dataclass(frozen=True)
class DatasetIndex:
    split: str
    records: tuple[SequenceRecord, ...]

    @property
    def num_sequences(self) -> int:
        return len(self.records)

    @property
    def num_frames(self) -> int:
        return sum(r.num_frames for r in self.records)


def write_dataset(
    out_dir: str | Path,
    entries: list[tuple[str, str, str, str, PoseSequence]],
) -> Path:
    """Write (id, subject, action, camera_id, sequence) entries as a dataset
    directory; returns the index.json path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    listed = []
    seen = set()
    for seq_id, subject, action, camera_id, seq in sorted(entries, key=lambda e: e[0]):
        if seq_id in seen:
            raise ValidationError(f"duplicate sequence id {seq_id!r}")
        seen.add(seq_id)
        fname = f"{seq_id}.npz"
        save_pose_sequence(out / fname, seq)
        listed.append(
            {
                "id": seq_id,
                "subject": subject,
                "action": action,
                "camera": camera_id,
                "num_frames": seq.num_frames,
                "file": fname,
            }
        )
    index_path = out / "index.json"
    index_path.write_text(
        json.dumps({"format": _INDEX_FORMAT, "sequences": listed}, indent=2, sort_keys=True)
        + "\n"
    )
    return index_path


def ingest_h36m_format(root: str | Path, split: str) -> DatasetIndex:
    """Scan a dataset directory and return the deterministic index for a split.

    `split` is "train" (S1, S5, S6, S7, S8) or "test" (S9, S11).  Sequences
    are sorted by (subject, action, camera).  Every indexed file must exist
    and carry camera intrinsics.  An empty directory yields an empty index
    with a warning rather than an error.
    """
    if split == "train":
        subjects = set(TRAIN_SUBJECTS)
    elif split == "test":
        subjects = set(TEST_SUBJECTS)
    else:
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    index_path = root / "index.json"
    if not index_path.exists():
        if not any(root.iterdir()):
            warnings.warn(f"dataset directory {root} is empty; returning an empty index")
            return DatasetIndex(split, ())
        raise IngestionError(f"{root} has files but no index.json")
    try:
        doc = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{index_path} is not valid JSON: {exc}") from exc
    if doc.get("format") != _INDEX_FORMAT:
        raise IngestionError(f"{index_path} has unknown format {doc.get('format')!r}")

    records = []
    seen = set()
    for entry in doc.get("sequences", []):
        subject = entry["subject"]
        if subject not in subjects:
            continue
        seq_id = entry["id"]
        if seq_id in seen:
            raise IngestionError(f"duplicate sequence id {seq_id!r} in index")
        seen.add(seq_id)
        path = root / entry["file"]
        if not path.exists():
            raise IngestionError(f"sequence {seq_id!r}: file {path} is missing")
        seq = load_pose_sequence(path)
        if seq.camera is None:
            raise IngestionError(f"sequence {seq_id!r} has no camera intrinsics")
        records.append(
            SequenceRecord(
                sequence_id=seq_id,
                subject=subject,
                action=entry["action"],
                camera_id=entry["camera"],
                num_frames=seq.num_frames,
                path=str(path),
            )
        )
    records.sort(key=lambda r: (r.subject, r.action, r.camera_id))
    if not records:
        warnings.warn(f"no {split} sequences found under {root}")
    return DatasetIndex(split, tuple(records))


def load_sequences(index: DatasetIndex) -> list[tuple[SequenceRecord, PoseSequence]]:
    return [(rec, load_pose_sequence(rec.path)) for rec in index.records]


def make_synthetic_dataset(
    out_dir: str | Path,
    num_sequences: int,
    spec: SyntheticMotionSpec,
    subject: str = "S1",
    action_prefix: str = "motion",
    camera_id: str = "cam0",
) -> Path:
    """Generate `num_sequences` clips (seeds spec.seed, spec.seed+1, ...) and
    write them as one dataset directory under a single subject and camera."""
    if num_sequences < 1:
        raise ValidationError("num_sequences must be >= 1")
    entries = []
    for i in range(num_sequences):
        clip_spec = replace(spec, seed=spec.seed + i)
        seq = generate_synthetic(clip_spec)
        action = f"{action_prefix}{i:02d}"
        entries.append((f"{subject}_{action}_{camera_id}", subject, action, camera_id, seq))
    return write_dataset(out_dir, entries)


# --- input preparation -----------------------------------------------------


def normalize_2d(joints2d, camera: CameraIntrinsics):
    """Pixels -> camera-normalized coordinates: ((u - u0)/fx, (v - v0)/fy)."""
    if joints2d.shape[-1] != 2:
        raise ValidationError(f"expected [..., 2] pixels, got {tuple(joints2d.shape)}")
    u = (joints2d[..., 0] - camera.u0) / camera.fx
    v = (joints2d[..., 1] - camera.v0) / camera.fy
    if isinstance(joints2d, np.ndarray):
        return np.stack((u, v), axis=-1)
    import torch

    return torch.stack((u, v), dim=-1)


def denormalize_2d(normalized, camera: CameraIntrinsics):
    """Inverse of normalize_2d."""
    if normalized.shape[-1] != 2:
        raise ValidationError(f"expected [..., 2] coordinates, got {tuple(normalized.shape)}")
    u = normalized[..., 0] * camera.fx + camera.u0
    v = normalized[..., 1] * camera.fy + camera.v0
    if isinstance(normalized, np.ndarray):
        return np.stack((u, v), axis=-1)
    import torch

    return torch.stack((u, v), dim=-1)


def sample_random_frames(
    num_frames: int, f_len: int, seed: int | np.random.Generator
) -> np.ndarray:
    """`f_len` distinct frame indices drawn uniformly, returned sorted.

    With f_len == num_frames this is simply every frame in order.
    """
    if f_len < 1:
        raise ValidationError("f_len must be >= 1")
    if f_len > num_frames:
        raise ValidationError(
            f"cannot sample {f_len} distinct frames from {num_frames}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(num_frames, size=f_len, replace=False))


def sliding_windows(num_frames: int, receptive_field: int) -> np.ndarray:
    """Frame-index windows [T, rf], one centered on every frame.

    Edges are padded by replicating the first/last frame index, so each of
    the T frames is the middle of exactly one window.
    """
    if receptive_field < 1 or receptive_field % 2 == 0:
        raise ValidationError("receptive_field must be odd and >= 1")
    if num_frames < receptive_field:
        raise ValidationError(
            f"need at least {receptive_field} frames, got {num_frames}"
        )
    half = receptive_field // 2
    centers = np.arange(num_frames)[:, None]
    offsets = np.arange(-half, half + 1)[None, :]
    return np.clip(centers + offsets, 0, num_frames - 1)
