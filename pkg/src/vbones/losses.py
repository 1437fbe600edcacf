"""Training losses.

Seven components feed the weighted total:

  length      mean per-joint error of the coarse 3D poses from the length branch
  attention   error of the attention-pooled real-bone lengths
  direction   error of the predicted unit bone directions (real and virtual)
  joint_shift error of relative offsets between joints not connected by a bone
  proj_dir    projection consistency of the composed joints across frame pairs
  proj_len    projection consistency of the coarse poses across adjacent frames
  composer    mean per-joint error of the final composed joints

The projection-consistency pieces compare 2D *displacements*, never absolute
2D positions, so a time-constant 2D offset of an estimate costs nothing while
frame-to-frame oscillation is penalized.

All functions accept numpy arrays or torch tensors and return a 0-dim torch
tensor; gradients flow when the inputs are tensors that require grad.  Inputs
with extra leading batch dimensions are averaged over those dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Mapping

import numpy as np
import torch

from .errors import TrainingDivergenceError, ValidationError
from .geometry import CameraIntrinsics, project_pinhole
from .skeleton import SkeletonTopology

COMPONENT_NAMES = (
    "length",
    "attention",
    "direction",
    "joint_shift",
    "proj_dir",
    "proj_len",
    "composer",
)


@dataclass(frozen=True)
class LossWeights:
    """Per-component weights of the total loss."""

    length: float = 1.0
    attention: float = 0.05
    direction: float = 0.02
    joint_shift: float = 0.1
    proj_dir: float = 1.0
    proj_len: float = 1.0
    composer: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ValidationError(
                    f"loss weight {f.name} must be finite and >= 0, got {value}"
                )

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def without_projection(self) -> "LossWeights":
        return LossWeights(
            length=self.length,
            attention=self.attention,
            direction=self.direction,
            joint_shift=self.joint_shift,
            proj_dir=0.0,
            proj_len=0.0,
            composer=self.composer,
        )


def _as_tensor(x, name: str) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    try:
        return torch.as_tensor(np.asarray(x, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not array-like: {exc}") from exc


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"{what}: estimate {tuple(a.shape)} and target {tuple(b.shape)} differ"
        )


def _norm_last(x: torch.Tensor) -> torch.Tensor:
    return ((x**2).sum(-1)) ** 0.5


def length_loss(est_joints, gt_joints) -> torch.Tensor:
    """Mean Euclidean error per joint between coarse estimates and truth.

    Shapes [..., J, 3]; the mean runs over joints and any leading dims.
    """
    est = _as_tensor(est_joints, "est_joints")
    gt = _as_tensor(gt_joints, "gt_joints")
    _check_same_shape(est, gt, "length_loss")
    if est.shape[-1] != 3:
        raise ValidationError("length_loss expects [..., J, 3] joints")
    return _norm_last(est - gt).mean()


def composer_loss(est_joints, gt_joints) -> torch.Tensor:
    """Mean per-joint error of the final composed joints (same form as
    length_loss, kept separate so logs name the stage it supervises)."""
    est = _as_tensor(est_joints, "est_joints")
    gt = _as_tensor(gt_joints, "gt_joints")
    _check_same_shape(est, gt, "composer_loss")
    if est.shape[-1] != 3:
        raise ValidationError("composer_loss expects [..., J, 3] joints")
    return _norm_last(est - gt).mean()


def attention_loss(est_lengths, gt_lengths) -> torch.Tensor:
    """Euclidean norm of the real-bone length residual.

    Shapes [..., R] where R is the number of real bones; the norm runs over
    the bone axis, leading dims are averaged.
    """
    est = _as_tensor(est_lengths, "est_lengths")
    gt = _as_tensor(gt_lengths, "gt_lengths")
    _check_same_shape(est, gt, "attention_loss")
    if est.ndim < 1:
        raise ValidationError("attention_loss expects at least a bone axis")
    return _norm_last(est - gt).mean()


def direction_loss(est_dirs, gt_dirs) -> torch.Tensor:
    """Euclidean norm of the flattened direction residual over all bones.

    Shapes [..., B, 3].  The residual of every bone is stacked into one
    vector per sample before taking the norm, so a single fully reversed
    bone among otherwise perfect ones contributes exactly 2.  Target rows
    must be unit vectors.
    """
    est = _as_tensor(est_dirs, "est_dirs")
    gt = _as_tensor(gt_dirs, "gt_dirs")
    _check_same_shape(est, gt, "direction_loss")
    if est.ndim < 2 or est.shape[-1] != 3:
        raise ValidationError("direction_loss expects [..., B, 3] directions")
    gt_norms = _norm_last(gt)
    if bool((abs(gt_norms - 1.0) > 1e-5).any()):
        raise ValidationError("gt directions must be unit vectors")
    residual = (est - gt).reshape(*est.shape[:-2], -1)
    return _norm_last(residual).mean()


@lru_cache(maxsize=8)
def _non_bone_pairs(topology: SkeletonTopology) -> tuple[tuple[int, ...], tuple[int, ...]]:
    first, second = [], []
    for i in range(topology.num_joints):
        for j in range(i + 1, topology.num_joints):
            if not topology.adjacent(i, j):
                first.append(i)
                second.append(j)
    return tuple(first), tuple(second)


def joint_shift_loss(est_joints, gt_joints, topology: SkeletonTopology) -> torch.Tensor:
    """Relative-offset error over joint pairs not connected by a real bone.

    For each unordered non-bone pair (i, j), counted once, the residual is
    the error of the offset vector P_i - P_j; the loss sums the residual
    norms over all such pairs (120 of them for the 17-joint tree).
    """
    est = _as_tensor(est_joints, "est_joints")
    gt = _as_tensor(gt_joints, "gt_joints")
    _check_same_shape(est, gt, "joint_shift_loss")
    if est.shape[-2] != topology.num_joints or est.shape[-1] != 3:
        raise ValidationError(
            f"joint_shift_loss expects [..., {topology.num_joints}, 3] joints"
        )
    first, second = _non_bone_pairs(topology)
    est_shift = est[..., first, :] - est[..., second, :]
    gt_shift = gt[..., first, :] - gt[..., second, :]
    per_pair = _norm_last(est_shift - gt_shift)
    summed = per_pair.sum(-1)
    return summed.mean()


def projection_consistency_pairs(
    est3d_a, est3d_b, gt2d_a, gt2d_b, camera: CameraIntrinsics
) -> torch.Tensor:
    """Projection-consistency loss over explicit frame pairs.

    Each argument is [..., J, k] with matching leading shapes; the estimated
    2D displacement between paired frames is the difference of the two
    projections, and the loss is the mean per-joint Euclidean distance to
    the observed 2D displacement.
    """
    a3 = _as_tensor(est3d_a, "est3d_a")
    b3 = _as_tensor(est3d_b, "est3d_b")
    a2 = _as_tensor(gt2d_a, "gt2d_a")
    b2 = _as_tensor(gt2d_b, "gt2d_b")
    _check_same_shape(a3, b3, "projection_consistency: 3D pair")
    _check_same_shape(a2, b2, "projection_consistency: 2D pair")
    if a3.shape[:-1] != a2.shape[:-1] or a3.shape[-1] != 3 or a2.shape[-1] != 2:
        raise ValidationError("projection_consistency: 3D [...,J,3] and 2D [...,J,2] disagree")
    est_disp = project_pinhole(b3, camera) - project_pinhole(a3, camera)
    obs_disp = b2 - a2
    return _norm_last(est_disp - obs_disp).mean()


def projection_consistency_loss(est3d_seq, gt2d_seq, camera: CameraIntrinsics) -> torch.Tensor:
    """Projection-consistency loss along a sequence of T >= 2 frames.

    The T-1 forward differences of the projected estimates are compared with
    the forward differences of the observed 2D sequence; the result is the
    mean per-joint displacement error over all frame pairs and joints.
    """
    est = _as_tensor(est3d_seq, "est3d_seq")
    gt2d = _as_tensor(gt2d_seq, "gt2d_seq")
    if est.ndim != 3 or est.shape[-1] != 3:
        raise ValidationError("est3d_seq must be [T, J, 3]")
    if gt2d.ndim != 3 or gt2d.shape[-1] != 2:
        raise ValidationError("gt2d_seq must be [T, J, 2]")
    if est.shape[0] != gt2d.shape[0] or est.shape[1] != gt2d.shape[1]:
        raise ValidationError("est3d_seq and gt2d_seq disagree on frames or joints")
    if est.shape[0] < 2:
        raise ValidationError("projection consistency needs at least two frames")
    return projection_consistency_pairs(est[:-1], est[1:], gt2d[:-1], gt2d[1:], camera)


def total_loss(
    components: Mapping[str, torch.Tensor | float], weights: LossWeights
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the seven components.

    Returns the scalar total (a torch tensor, differentiable when the
    components are) plus a float breakdown of each weighted term.  A
    non-finite component aborts with TrainingDivergenceError.
    """
    missing = set(COMPONENT_NAMES) - set(components)
    if missing:
        raise ValidationError(f"total_loss is missing components: {sorted(missing)}")
    extra = set(components) - set(COMPONENT_NAMES)
    if extra:
        raise ValidationError(f"total_loss got unknown components: {sorted(extra)}")
    weight_map = weights.as_dict()
    total = None
    breakdown: dict[str, float] = {}
    for name in COMPONENT_NAMES:
        value = components[name]
        tensor = value if torch.is_tensor(value) else torch.as_tensor(float(value))
        raw = float(tensor.detach())
        if not np.isfinite(raw):
            raise TrainingDivergenceError(f"loss component {name} is non-finite ({raw})")
        term = weight_map[name] * tensor
        breakdown[name] = weight_map[name] * raw
        total = term if total is None else total + term
    return total, breakdown
