"""Cameras, pose containers, projection, and bone-path composition.

Units are fixed package-wide: 3D joint positions in millimetres in the
camera frame (x right, y down, z forward), 2D positions in pixels.

The array functions here accept either numpy arrays or torch tensors and
return the same kind, so the training losses can differentiate through them
while analysis code stays in plain numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BehindCameraError, DegenerateBoneError, ValidationError
from .skeleton import BoneSet, PathSet


def _is_torch(x) -> bool:
    return type(x).__module__.split(".")[0] == "torch"


def _stack_last(a, b):
    if _is_torch(a):
        import torch

        return torch.stack((a, b), dim=-1)
    return np.stack((a, b), axis=-1)


def _all_finite(x) -> bool:
    if _is_torch(x):
        import torch

        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(x).all())


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        for field in ("fx", "fy", "u0", "v0"):
            value = getattr(self, field)
            if not np.isfinite(value):
                raise ValidationError(f"camera {field} must be finite, got {value}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "u0": self.u0, "v0": self.v0}

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraIntrinsics":
        missing = {"fx", "fy", "u0", "v0"} - set(doc)
        if missing:
            raise ValidationError(f"camera JSON is missing keys: {sorted(missing)}")
        return cls(float(doc["fx"]), float(doc["fy"]), float(doc["u0"]), float(doc["v0"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CameraIntrinsics":
        return cls.from_dict(json.loads(text))


def save_camera(path: str | Path, camera: CameraIntrinsics) -> None:
    Path(path).write_text(camera.to_json())


def load_camera(path: str | Path) -> CameraIntrinsics:
    return CameraIntrinsics.from_json(Path(path).read_text())


def project_pinhole(points3d, camera: CameraIntrinsics):
    """Project camera-frame 3D points [..., 3] to pixel coordinates [..., 2].

    u = fx * x / z + u0,  v = fy * y / z + v0.  Every depth must be strictly
    positive; a point at or behind the camera plane raises BehindCameraError.
    """
    if points3d.shape[-1] != 3:
        raise ValidationError(f"expected [..., 3] points, got {tuple(points3d.shape)}")
    z = points3d[..., 2]
    if bool((z <= 0).any()):
        raise BehindCameraError("projection requested for a point with depth <= 0")
    u = camera.fx * points3d[..., 0] / z + camera.u0
    v = camera.fy * points3d[..., 1] / z + camera.v0
    return _stack_last(u, v)


def displacements(sequence):
    """Forward differences along the frame axis: out[t] = seq[t+1] - seq[t].

    Input [T, ...] with T >= 2 yields [T-1, ...].
    """
    if sequence.shape[0] < 2:
        raise ValidationError("displacements need at least two frames")
    return sequence[1:] - sequence[:-1]


def bone_directions_from_joints(joints3d, bone_set: BoneSet):
    """Unit direction of every bone, shaped [..., B, 3].

    Directions point from each bone's tail to its head (parent to child for
    real bones).  A zero-length bone has no direction and raises
    DegenerateBoneError carrying the offending bone index.
    """
    heads, tails = bone_set.heads_tails()
    vec = joints3d[..., heads, :] - joints3d[..., tails, :]
    norms = ((vec**2).sum(-1)) ** 0.5
    if bool((norms == 0).any()):
        if _is_torch(norms):
            bad = int((norms == 0).nonzero()[0][-1])
        else:
            bad = int(np.argwhere(norms == 0)[0][-1])
        raise DegenerateBoneError(
            f"bone {bad} ({bone_set.bone_name(bad)}) has zero length", bone_index=bad
        )
    return vec / norms[..., None]


def _check_compose_inputs(directions, lengths) -> None:
    if directions.shape[-1] != 3 or directions.shape[:-1] != lengths.shape:
        raise ValidationError(
            f"directions {tuple(directions.shape)} and lengths {tuple(lengths.shape)} disagree"
        )
    if not (_all_finite(directions) and _all_finite(lengths)):
        raise ValidationError("compose inputs contain non-finite values")
    norms = ((directions**2).sum(-1)) ** 0.5
    if bool((abs(norms - 1.0) > 1e-6).any()):
        raise ValidationError("directions must be unit vectors (within 1e-6)")
    if bool((lengths < 0).any()):
        raise ValidationError("bone lengths must be non-negative")


def compose_joint_single_path(directions, lengths, path: Sequence[tuple[int, int]]):
    """Root-relative position reached by walking one bone path.

    `directions` is [B, 3] of unit vectors, `lengths` is [B], and `path` is a
    sequence of (bone_index, sign) steps.  The empty path composes to the
    origin, i.e. the root itself.
    """
    _check_compose_inputs(directions, lengths)
    total = directions[..., 0, :] * 0.0
    for bone_idx, sign in path:
        if sign not in (-1, 1):
            raise ValidationError(f"path sign must be +1 or -1, got {sign}")
        total = total + sign * lengths[..., bone_idx, None] * directions[..., bone_idx, :]
    return total


def compose_joint_multi_path(directions, lengths, path_set: PathSet, weights):
    """Convex combination of the single-path compositions in `path_set`.

    Weights must be non-negative and sum to one within 1e-9; one weight per
    path.
    """
    weights = np.asarray(weights, dtype=float) if not _is_torch(weights) else weights
    if weights.shape[0] != path_set.count:
        raise ValidationError(
            f"{path_set.count} paths but {weights.shape[0]} weights"
        )
    if bool((weights < 0).any()):
        raise ValidationError("path weights must be non-negative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValidationError("path weights must sum to 1 within 1e-9")
    total = directions[..., 0, :] * 0.0
    for w, path in zip(weights, path_set.paths):
        total = total + w * compose_joint_single_path(directions, lengths, path)
    return total


@dataclass
class PoseSequence:
    """A motion clip: per-frame 2D and/or 3D joints plus its camera.

    joints2d  [T, J, 2] float64 pixels, or None
    joints3d  [T, J, 3] float64 millimetres, camera frame, or None
    """

    joints2d: np.ndarray | None
    joints3d: np.ndarray | None
    camera: CameraIntrinsics | None
    frame_rate: float = 50.0

    def __post_init__(self):
        if self.joints2d is None and self.joints3d is None:
            raise ValidationError("a pose sequence needs 2D or 3D joints")
        if self.joints2d is not None:
            self.joints2d = np.asarray(self.joints2d, dtype=np.float64)
            if self.joints2d.ndim != 3 or self.joints2d.shape[-1] != 2:
                raise ValidationError(
                    f"joints2d must be [T, J, 2], got {self.joints2d.shape}"
                )
        if self.joints3d is not None:
            self.joints3d = np.asarray(self.joints3d, dtype=np.float64)
            if self.joints3d.ndim != 3 or self.joints3d.shape[-1] != 3:
                raise ValidationError(
                    f"joints3d must be [T, J, 3], got {self.joints3d.shape}"
                )
        if self.joints2d is not None and self.joints3d is not None:
            if self.joints2d.shape[:2] != self.joints3d.shape[:2]:
                raise ValidationError(
                    f"joints2d {self.joints2d.shape} and joints3d "
                    f"{self.joints3d.shape} disagree on frames or joints"
                )
        if self.num_frames < 1:
            raise ValidationError("a pose sequence needs at least one frame")
        if self.frame_rate <= 0:
            raise ValidationError(f"frame rate must be positive, got {self.frame_rate}")

    @property
    def num_frames(self) -> int:
        arr = self.joints2d if self.joints2d is not None else self.joints3d
        return int(arr.shape[0])

    @property
    def num_joints(self) -> int:
        arr = self.joints2d if self.joints2d is not None else self.joints3d
        return int(arr.shape[1])

    def root_relative(self, root_index: int) -> np.ndarray:
        if self.joints3d is None:
            raise ValidationError("sequence has no 3D joints")
        return self.joints3d - self.joints3d[:, root_index : root_index + 1]


_SEQ_FORMAT = "vbones-pose-sequence-v1"


def save_pose_sequence(path: str | Path, seq: PoseSequence) -> None:
    """Write a sequence as an .npz container: one array per column plus a
    JSON metadata string (format tag, frame rate, camera)."""
    meta = {
        "format": _SEQ_FORMAT,
        "frame_rate": seq.frame_rate,
        "camera": seq.camera.to_dict() if seq.camera is not None else None,
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    if seq.joints2d is not None:
        arrays["joints2d"] = seq.joints2d
    if seq.joints3d is not None:
        arrays["joints3d"] = seq.joints3d
    np.savez(path, **arrays)


def load_pose_sequence(path: str | Path) -> PoseSequence:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"pose sequence file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise ValidationError(f"{path} is not a pose-sequence container")
        meta = json.loads(str(data["meta"][()]))
        if meta.get("format") != _SEQ_FORMAT:
            raise ValidationError(
                f"{path} has unknown format tag {meta.get('format')!r}"
            )
        camera = (
            CameraIntrinsics.from_dict(meta["camera"])
            if meta.get("camera") is not None
            else None
        )
        return PoseSequence(
            joints2d=data["joints2d"] if "joints2d" in data else None,
            joints3d=data["joints3d"] if "joints3d" in data else None,
            camera=camera,
            frame_rate=float(meta["frame_rate"]),
        )
