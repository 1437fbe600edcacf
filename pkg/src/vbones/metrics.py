"""Evaluation protocols and the per-action report.

Protocol 1 is plain MPJPE in millimetres.  Protocol 2 (P-MPJPE) first aligns
each frame to the ground truth with the best similarity transform (rotation,
uniform scale, translation, solved in closed form via SVD).  Protocol 3
(N-MPJPE) only rescales each frame by the least-squares optimal factor.
MPJVE is the MPJPE of first differences along time, reported per frame (no
frame-rate division).

All metric inputs are [T, J, 3] numpy arrays (a single frame [J, 3] is
accepted and treated as T=1) in consistent units; outputs are floats in the
same units.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ValidationError


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(
            f"prediction {pred.shape} and ground truth {gt.shape} differ in shape"
        )
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValidationError(f"expected [T, J, 3] joints, got {pred.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(gt).all()):
        raise ValidationError("metric inputs contain non-finite values")
    return pred, gt


def mpjpe(pred, gt) -> float:
    """Mean Euclidean per-joint error."""
    pred, gt = _prepare(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def p_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame similarity (Procrustes) alignment.

    Each predicted frame is rotated, scaled, and translated to best fit the
    ground truth in the least-squares sense before the error is measured.
    A degenerate frame whose prediction has no spatial extent cannot define
    a rotation; it falls back to translation-only alignment with a warning.
    """
    pred, gt = _prepare(pred, gt)
    errors = []
    degenerate = 0
    for y, x in zip(pred, gt):  # y: prediction, x: truth, [J, 3]
        mu_x = x.mean(axis=0)
        mu_y = y.mean(axis=0)
        x0 = x - mu_x
        y0 = y - mu_y
        denom = (y0**2).sum()
        if denom < 1e-12 or (x0**2).sum() < 1e-12:
            degenerate += 1
            aligned = y0 + mu_x
        else:
            # Cross-covariance taken truth-side first so R maps pred onto truth.
            h = x0.T @ y0
            u, s, vt = np.linalg.svd(h)
            sign = np.sign(np.linalg.det(u @ vt))
            d = np.array([1.0, 1.0, sign])
            rot = u @ np.diag(d) @ vt
            scale = (s * d).sum() / denom
            aligned = scale * y0 @ rot.T + mu_x
        errors.append(np.linalg.norm(aligned - x, axis=-1).mean())
    if degenerate:
        warnings.warn(
            f"p_mpjpe: {degenerate} degenerate frame(s) aligned by translation only"
        )
    return float(np.mean(errors))


def n_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame optimal rescaling of the prediction.

    The scale s* = <pred, gt> / <pred, pred> minimizes the squared error over
    all uniform scales.  An all-zero predicted frame has no scale; it falls
    back to s = 1 with a warning.
    """
    pred, gt = _prepare(pred, gt)
    inner = (pred * gt).sum(axis=(1, 2))
    self_inner = (pred * pred).sum(axis=(1, 2))
    zero = self_inner < 1e-12
    if zero.any():
        warnings.warn(f"n_mpjpe: {int(zero.sum())} all-zero frame(s) kept at scale 1")
    scale = np.where(zero, 1.0, inner / np.where(zero, 1.0, self_inner))
    return float(np.linalg.norm(scale[:, None, None] * pred - gt, axis=-1).mean())


def mpjve(pred, gt) -> float:
    """MPJPE of the frame-to-frame differences, per frame (no rate scaling)."""
    pred, gt = _prepare(pred, gt)
    if pred.shape[0] < 2:
        raise ValidationError("mpjve needs at least two frames")
    return mpjpe(pred[1:] - pred[:-1], gt[1:] - gt[:-1])


@dataclass(frozen=True)
class ActionMetrics:
    protocol1: float
    protocol2: float
    protocol3: float
    velocity: float
    num_frames: int
    # First differences backing the velocity metric.  A single clip has
    # num_frames - 1 of them, but clips never share differences, so a
    # combined action's count is the sum over clips, not num_frames - 1.
    num_velocity_frames: int

    def as_dict(self) -> dict:
        return {
            "protocol1_mpjpe": self.protocol1,
            "protocol2_p_mpjpe": self.protocol2,
            "protocol3_n_mpjpe": self.protocol3,
            "mpjve": self.velocity,
            "num_frames": self.num_frames,
        }


def _combine(parts: list[ActionMetrics]) -> ActionMetrics:
    """Frame-weighted combination; velocity weighted by difference counts."""
    frames = np.array([p.num_frames for p in parts], dtype=float)
    vel_frames = np.array([p.num_velocity_frames for p in parts], dtype=float)
    if frames.sum() <= 0:
        raise ValidationError("cannot combine metrics over zero frames")

    def wavg(values, weights):
        weights = np.asarray(weights, dtype=float)
        if weights.sum() == 0:
            return 0.0
        return float(np.average(values, weights=weights))

    return ActionMetrics(
        protocol1=wavg([p.protocol1 for p in parts], frames),
        protocol2=wavg([p.protocol2 for p in parts], frames),
        protocol3=wavg([p.protocol3 for p in parts], frames),
        velocity=wavg([p.velocity for p in parts], vel_frames),
        num_frames=int(frames.sum()),
        num_velocity_frames=int(vel_frames.sum()),
    )


@dataclass(frozen=True)
class EvalReport:
    """Per-action metrics plus the frame-weighted aggregate ("Avg")."""

    per_action: dict[str, ActionMetrics]
    aggregate: ActionMetrics

    def to_dict(self) -> dict:
        return {
            "actions": {name: m.as_dict() for name, m in sorted(self.per_action.items())},
            "average": self.aggregate.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        """Fixed-width table: one column per action plus Avg, one row per metric."""
        names = sorted(self.per_action)
        header = ["Metric"] + names + ["Avg"]
        rows = [
            ("MPJPE (P1)", "protocol1"),
            ("P-MPJPE (P2)", "protocol2"),
            ("N-MPJPE (P3)", "protocol3"),
            ("MPJVE", "velocity"),
        ]
        widths = [max(14, len(h) + 2) for h in header]
        lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
        for label, attr in rows:
            cells = [label]
            for name in names:
                cells.append(f"{getattr(self.per_action[name], attr):.2f}")
            cells.append(f"{getattr(self.aggregate, attr):.2f}")
            lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def evaluate_actions(
    predictions: Mapping[str, list[np.ndarray]],
    targets: Mapping[str, list[np.ndarray]],
) -> EvalReport:
    """Build a report from per-action lists of [T, J, 3] sequences.

    An action may span several clips; metrics are computed per clip (so
    velocities never straddle clip boundaries) and combined frame-weighted,
    and the aggregate combines the actions the same way.
    """
    if set(predictions) != set(targets):
        raise ValidationError("predictions and targets list different actions")
    if not predictions:
        raise ValidationError("nothing to evaluate")
    per_action = {}
    for name in predictions:
        preds, gts = predictions[name], targets[name]
        if len(preds) != len(gts):
            raise ValidationError(f"action {name!r}: clip counts differ")
        parts = []
        for pred, gt in zip(preds, gts):
            parts.append(
                ActionMetrics(
                    protocol1=mpjpe(pred, gt),
                    protocol2=p_mpjpe(pred, gt),
                    protocol3=n_mpjpe(pred, gt),
                    velocity=mpjve(pred, gt),
                    num_frames=int(np.asarray(pred).shape[0]),
                    num_velocity_frames=int(np.asarray(pred).shape[0]) - 1,
                )
            )
        per_action[name] = _combine(parts)
    aggregate = _combine(list(per_action.values()))
    return EvalReport(per_action=per_action, aggregate=aggregate)
