"""Training loop, gradient checking, prediction, and the ablation runner.

One training sample is a window of consecutive frames centered on a "current"
frame: the direction net reads the whole window, the length net reads the
current frame plus a fresh draw of random frames from the same clip, and the
composer turns their outputs into the current frame's 3D pose.

The two projection-consistency terms need frame *pairs*:

  proj_len  pairs every current frame with its successor inside the same
            clip and compares coarse-pose 2D displacements.
  proj_dir  pairs windows within the batch whose middle frames are
            temporally consecutive under the same camera (each net forward
            only yields the middle frame, so consecutive middles stand in
            for adjacent frames).  When this term is active the batch
            sampler deliberately adds each anchor window's neighbour so
            such pairs always exist.

Estimated poses are root-relative; before projecting them the ground-truth
root position is added back (anchor_root), so the consistency terms compare
displacements in real pixel coordinates.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import normalize_2d, sample_random_frames, sliding_windows
from .errors import (
    ConfigurationError,
    TrainingDivergenceError,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    PoseSequence,
    bone_directions_from_joints,
)
from .losses import (
    LossWeights,
    attention_loss,
    composer_loss,
    direction_loss,
    joint_shift_loss,
    length_loss,
    projection_consistency_pairs,
    total_loss,
)
from .metrics import EvalReport, evaluate_actions
from .nets import LiftingModel, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .skeleton import VIRTUAL_CONFIG_NAMES, bone_lengths_from_joints


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization settings.  batch_size None picks the receptive-field
    default: 2048 for 9-frame models, 1024 for 243-frame models."""

    epochs: int = 60
    batch_size: int | None = None
    learning_rate: float = 1e-3
    lr_decay_per_epoch: float = 0.95
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    deterministic: bool = True
    device: str = "cpu"
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ConfigurationError("learning_rate must be positive and finite")
        if not (0.0 < self.lr_decay_per_epoch <= 1.0):
            raise ConfigurationError("lr_decay_per_epoch must be in (0, 1]")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")

    def resolve_batch_size(self, receptive_field: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 2048 if receptive_field <= 9 else 1024


def learning_rate_at(config: TrainingConfig, epoch: int) -> float:
    """Closed-form schedule: lr * decay**epoch, exact, no accumulated product."""
    return config.learning_rate * config.lr_decay_per_epoch**epoch


@dataclass(frozen=True)
class WindowLabel:
    """Identity of one training window: which clip, camera, and middle frame."""

    sequence_id: str
    camera_id: str
    middle_frame: int


def pair_middle_frames(labels: Sequence[WindowLabel]) -> list[tuple[int, int]]:
    """Indices (i, j) of windows whose middle frames are consecutive.

    A pair requires the same clip and camera with middle_frame[j] equal to
    middle_frame[i] + 1.  Windows can appear in several pairs; windows with
    no temporal neighbour in the batch simply contribute no pair.  Results
    are sorted by (i, j).
    """
    by_key: dict[tuple[str, str, int], list[int]] = {}
    for idx, label in enumerate(labels):
        by_key.setdefault(
            (label.sequence_id, label.camera_id, label.middle_frame), []
        ).append(idx)
    pairs = []
    for idx, label in enumerate(labels):
        successors = by_key.get(
            (label.sequence_id, label.camera_id, label.middle_frame + 1), ()
        )
        for j in successors:
            pairs.append((idx, j))
    return sorted(pairs)


def anchor_root(joints_rel, roots):
    """Add per-frame root positions back onto root-relative joints.

    joints_rel [T, J, 3] plus roots [T, 3] -> camera-frame joints [T, J, 3].
    """
    if joints_rel.ndim != 3 or joints_rel.shape[-1] != 3:
        raise ValidationError("joints_rel must be [T, J, 3]")
    if roots.ndim != 2 or roots.shape[-1] != 3 or roots.shape[0] != joints_rel.shape[0]:
        raise ValidationError("roots must be [T, 3] matching joints_rel frames")
    return joints_rel + roots[:, None, :]


# --- training data preparation ----------------------------------------------


@dataclass
class _Prepared:
    seq_id: str
    camera_id: str
    camera: CameraIntrinsics
    norm2d: np.ndarray  # [T, J, 2]
    gt2d: np.ndarray  # [T, J, 2] pixels
    gt3d_rel: np.ndarray  # [T, J, 3] root-relative mm
    roots: np.ndarray  # [T, 3] mm
    real_lengths: np.ndarray  # [T, R] mm
    directions: np.ndarray  # [T, B, 3]
    windows: np.ndarray  # [T, rf]

    @property
    def num_frames(self) -> int:
        return self.norm2d.shape[0]


def _prepare_sequences(model: LiftingModel, items) -> list[_Prepared]:
    """Precompute per-clip training arrays.  `items` holds PoseSequence
    objects, or (record, PoseSequence) tuples as returned by load_sequences."""
    bone_set = model.bone_set
    root_idx = bone_set.topology.root_index
    rf = model.config.receptive_field
    f_len = model.config.num_random_frames
    camera_ids: dict[tuple, str] = {}
    prepared = []
    for i, item in enumerate(items):
        if isinstance(item, PoseSequence):
            seq = item
            seq_id, camera_id = f"seq{i:03d}", None
        else:
            record, seq = item
            seq_id, camera_id = record.sequence_id, record.camera_id
        if seq.joints2d is None or seq.joints3d is None or seq.camera is None:
            raise ValidationError(
                f"training sequence {seq_id} needs 2D joints, 3D joints, and a camera"
            )
        if camera_id is None:
            key = (seq.camera.fx, seq.camera.fy, seq.camera.u0, seq.camera.v0)
            camera_id = camera_ids.setdefault(key, f"cam{len(camera_ids)}")
        if seq.num_frames < max(rf, f_len):
            raise ValidationError(
                f"sequence {seq_id} has {seq.num_frames} frames, "
                f"need at least {max(rf, f_len)}"
            )
        joints3d = seq.joints3d
        prepared.append(
            _Prepared(
                seq_id=seq_id,
                camera_id=camera_id,
                camera=seq.camera,
                norm2d=normalize_2d(seq.joints2d, seq.camera),
                gt2d=seq.joints2d,
                gt3d_rel=joints3d - joints3d[:, root_idx : root_idx + 1],
                roots=joints3d[:, root_idx],
                real_lengths=np.asarray(
                    bone_lengths_from_joints(joints3d, bone_set)[:, : bone_set.num_real]
                ),
                directions=np.asarray(bone_directions_from_joints(joints3d, bone_set)),
                windows=sliding_windows(seq.num_frames, rf),
            )
        )
    return prepared


@dataclass
class _Batch:
    labels: list[WindowLabel]
    camera_of: list[CameraIntrinsics]
    x_window: torch.Tensor  # [B, rf, J, 2]
    x_random: torch.Tensor  # [B, f, J, 2]
    x_current: torch.Tensor  # [B, J, 2]
    x_next: torch.Tensor  # [B, J, 2]
    has_next: torch.Tensor  # [B] bool
    gt3d_random: torch.Tensor  # [B, f, J, 3]
    gt3d_rel: torch.Tensor  # [B, J, 3]
    gt_real_lengths: torch.Tensor  # [B, R]
    gt_directions: torch.Tensor  # [B, Bones, 3]
    roots: torch.Tensor  # [B, 3]
    roots_next: torch.Tensor  # [B, 3]
    gt2d: torch.Tensor  # [B, J, 2]
    gt2d_next: torch.Tensor  # [B, J, 2]


def _assemble_batch(
    prepared: list[_Prepared],
    chosen: list[tuple[int, int]],
    f_len: int,
    rng: np.random.Generator,
    dtype: torch.dtype,
) -> _Batch:
    rows = {name: [] for name in (
        "x_window", "x_random", "x_current", "x_next", "has_next", "gt3d_random",
        "gt3d_rel", "gt_real_lengths", "gt_directions", "roots", "roots_next",
        "gt2d", "gt2d_next",
    )}
    labels, cameras = [], []
    for s, t in chosen:
        p = prepared[s]
        t_next = t + 1 if t + 1 < p.num_frames else t
        rand_idx = sample_random_frames(p.num_frames, f_len, rng)
        labels.append(WindowLabel(p.seq_id, p.camera_id, t))
        cameras.append(p.camera)
        rows["x_window"].append(p.norm2d[p.windows[t]])
        rows["x_random"].append(p.norm2d[rand_idx])
        rows["x_current"].append(p.norm2d[t])
        rows["x_next"].append(p.norm2d[t_next])
        rows["has_next"].append(t_next != t)
        rows["gt3d_random"].append(p.gt3d_rel[rand_idx])
        rows["gt3d_rel"].append(p.gt3d_rel[t])
        rows["gt_real_lengths"].append(p.real_lengths[t])
        rows["gt_directions"].append(p.directions[t])
        rows["roots"].append(p.roots[t])
        rows["roots_next"].append(p.roots[t_next])
        rows["gt2d"].append(p.gt2d[t])
        rows["gt2d_next"].append(p.gt2d[t_next])
    tensors = {
        name: torch.as_tensor(np.stack(vals), dtype=(torch.bool if name == "has_next" else dtype))
        for name, vals in rows.items()
    }
    return _Batch(labels=labels, camera_of=cameras, **tensors)


def _camera_groups(cameras: list[CameraIntrinsics]) -> list[tuple[CameraIntrinsics, list[int]]]:
    """Group positions 0..n-1 by identical intrinsics, deterministically ordered."""
    groups: dict[tuple, list[int]] = {}
    for pos, cam in enumerate(cameras):
        groups.setdefault((cam.fx, cam.fy, cam.u0, cam.v0), []).append(pos)
    return [(CameraIntrinsics(*key), idx) for key, idx in sorted(groups.items())]


def _grouped_projection_loss(
    cameras: list[CameraIntrinsics],
    est_a: torch.Tensor,
    est_b: torch.Tensor,
    gt2d_a: torch.Tensor,
    gt2d_b: torch.Tensor,
) -> torch.Tensor:
    """Projection-consistency over pairs that may span several cameras; the
    per-camera means are recombined weighted by pair count, so the result
    equals the mean over all pairs."""
    acc = est_a.new_zeros(())
    total = 0
    for cam, pos in _camera_groups(cameras):
        acc = acc + len(pos) * projection_consistency_pairs(
            est_a[pos], est_b[pos], gt2d_a[pos], gt2d_b[pos], cam
        )
        total += len(pos)
    return acc / total


def _batch_losses(
    model: LiftingModel, batch: _Batch, weights: LossWeights
) -> dict[str, torch.Tensor]:
    topo = model.bone_set.topology
    length_out, directions, final = model(batch.x_random, batch.x_current, batch.x_window)

    est_coarse = torch.cat(
        [
            length_out.coarse3d_per_frame.reshape(-1, topo.num_joints, 3),
            length_out.coarse3d_current,
        ]
    )
    gt_coarse = torch.cat(
        [batch.gt3d_random.reshape(-1, topo.num_joints, 3), batch.gt3d_rel]
    )
    components: dict[str, torch.Tensor] = {
        "length": length_loss(est_coarse, gt_coarse),
        "attention": attention_loss(length_out.real_lengths, batch.gt_real_lengths),
        "direction": direction_loss(directions, batch.gt_directions),
        "joint_shift": joint_shift_loss(final, batch.gt3d_rel, topo),
        "composer": composer_loss(final, batch.gt3d_rel),
    }

    zero = final.new_zeros(())
    proj_len = zero
    if weights.proj_len > 0:
        items = [i for i in range(len(batch.labels)) if bool(batch.has_next[i])]
        if items:
            coarse_next = model.length_net.coarse3d(batch.x_next[items])
            proj_len = _grouped_projection_loss(
                [batch.camera_of[i] for i in items],
                anchor_root(length_out.coarse3d_current[items], batch.roots[items]),
                anchor_root(coarse_next, batch.roots_next[items]),
                batch.gt2d[items],
                batch.gt2d_next[items],
            )
    components["proj_len"] = proj_len

    proj_dir = zero
    if weights.proj_dir > 0:
        pairs = pair_middle_frames(batch.labels)
        if pairs:
            a_idx = [i for i, _ in pairs]
            b_idx = [j for _, j in pairs]
            proj_dir = _grouped_projection_loss(
                [batch.camera_of[i] for i in a_idx],
                anchor_root(final[a_idx], batch.roots[a_idx]),
                anchor_root(final[b_idx], batch.roots[b_idx]),
                batch.gt2d[a_idx],
                batch.gt2d[b_idx],
            )
    components["proj_dir"] = proj_dir
    return components


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    epoch_summaries: list[dict]
    total_steps: int


def train(
    model: LiftingModel,
    sequences,
    config: TrainingConfig,
    out_dir: str | Path,
) -> TrainResult:
    """Optimize `model` on the given clips; writes checkpoints and a JSONL
    step log under `out_dir` and returns the paths plus per-epoch summaries.

    With config.deterministic the run is single-threaded and fully seeded, so
    two runs with the same inputs produce identical logs.  A non-finite loss
    aborts with TrainingDivergenceError; the last epoch-boundary checkpoint
    stays on disk, and the failing step is described in divergence.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    device = torch.device(config.device)
    model.to(device)
    dtype = model.config.torch_dtype

    prepared = _prepare_sequences(model, sequences)
    if not prepared:
        raise ValidationError("no training sequences given")
    f_len = model.config.num_random_frames
    batch_size = config.resolve_batch_size(model.config.receptive_field)
    pair_mode = config.weights.proj_dir > 0

    items = [
        (s, t) for s in range(len(prepared)) for t in range(prepared[s].num_frames)
    ]
    anchors_per_batch = max(1, batch_size // 2) if pair_mode else batch_size
    steps_per_epoch = math.ceil(len(items) / anchors_per_batch)

    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999)
    )
    log_path = out / "train_log.jsonl"
    last_path = out / "checkpoint_last.npz"
    save_checkpoint(model, last_path)  # last-good state exists from step zero

    epoch_summaries: list[dict] = []
    global_step = 0
    with open(log_path, "w") as log:
        for epoch in range(config.epochs):
            lr = learning_rate_at(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(items))
            sums: dict[str, float] = {}
            count = 0
            for start in range(0, len(items), anchors_per_batch):
                anchor_ids = order[start : start + anchors_per_batch]
                chosen: list[tuple[int, int]] = []
                for a in anchor_ids:
                    s, t = items[a]
                    chosen.append((s, t))
                    if pair_mode:
                        tmax = prepared[s].num_frames - 1
                        partner = t + 1 if t < tmax else t - 1
                        chosen.append((s, partner))
                batch = _assemble_batch(prepared, chosen, f_len, rng, dtype)
                components = _batch_losses(model, batch, config.weights)
                try:
                    total, _weighted = total_loss(components, config.weights)
                except TrainingDivergenceError as exc:
                    diag = {
                        "epoch": epoch,
                        "step": global_step,
                        "error": str(exc),
                        "components": {
                            k: float(v.detach()) for k, v in components.items()
                        },
                        "last_good_checkpoint": str(last_path),
                    }
                    (out / "divergence.json").write_text(json.dumps(diag, indent=2) + "\n")
                    raise
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                record = {
                    "epoch": epoch,
                    "step": global_step,
                    "lr": lr,
                    "total": float(total.detach()),
                }
                for name, value in components.items():
                    record[name] = float(value.detach())
                log.write(json.dumps(record) + "\n")
                for name in ("total", *components):
                    sums[name] = sums.get(name, 0.0) + record[name]
                count += 1
                global_step += 1
            log.flush()
            summary = {"epoch": epoch, "lr": lr}
            summary.update({name: value / count for name, value in sums.items()})
            epoch_summaries.append(summary)
            save_checkpoint(model, last_path)
            if (epoch + 1) % config.checkpoint_every == 0 or epoch == config.epochs - 1:
                save_checkpoint(model, out / f"checkpoint_epoch{epoch:04d}.npz")
    return TrainResult(
        checkpoint_path=str(last_path),
        log_path=str(log_path),
        epoch_summaries=epoch_summaries,
        total_steps=global_step,
    )


# --- gradient checking -------------------------------------------------------


@dataclass
class GradientCheckEntry:
    parameter: str
    offset: int
    analytic: float
    numeric: float
    relative_error: float


@dataclass
class GradientCheckResult:
    max_relative_error: float
    threshold: float
    entries: list[GradientCheckEntry]

    @property
    def failures(self) -> list[GradientCheckEntry]:
        return [e for e in self.entries if e.relative_error > self.threshold]

    @property
    def ok(self) -> bool:
        return not self.failures

    def report(self) -> str:
        lines = [
            f"gradient check: {len(self.entries)} parameters, "
            f"max relative error {self.max_relative_error:.3e} "
            f"(threshold {self.threshold:.1e})"
        ]
        for e in self.failures:
            lines.append(
                f"  FAIL {e.parameter}[{e.offset}]: analytic {e.analytic:.6e} "
                f"vs numeric {e.numeric:.6e} (rel {e.relative_error:.3e})"
            )
        return "\n".join(lines)


def gradient_check(
    model: torch.nn.Module,
    loss_fn: Callable[[torch.nn.Module], torch.Tensor],
    num_params: int = 64,
    eps: float = 1e-5,
    seed: int = 0,
    threshold: float = 1e-4,
) -> GradientCheckResult:
    """Compare analytic gradients with central finite differences.

    `loss_fn(model)` must return a scalar tensor and be deterministic.  A
    random subset of `num_params` scalar parameters is checked; the relative
    error is |a - n| / max(1, |a|, |n|).  eps must be positive.
    """
    if eps <= 0:
        raise ValidationError(f"finite-difference eps must be positive, got {eps}")
    if num_params < 1:
        raise ValidationError("num_params must be >= 1")
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    if not named:
        raise ValidationError("model has no trainable parameters")
    sizes = np.array([p.numel() for _, p in named])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(num_params, total), replace=False)
    boundaries = np.cumsum(sizes)

    model.zero_grad(set_to_none=True)
    loss = loss_fn(model)
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in named}

    entries = []
    with torch.no_grad():
        for flat in sorted(int(c) for c in chosen):
            param_idx = int(np.searchsorted(boundaries, flat, side="right"))
            offset = flat - (0 if param_idx == 0 else int(boundaries[param_idx - 1]))
            name, param = named[param_idx]
            view = param.data.view(-1)
            original = view[offset].item()
            view[offset] = original + eps
            plus = float(loss_fn(model))
            view[offset] = original - eps
            minus = float(loss_fn(model))
            view[offset] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = float(grads[name].view(-1)[offset])
            rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            entries.append(
                GradientCheckEntry(name, int(offset), analytic, numeric, rel)
            )
    max_err = max(e.relative_error for e in entries)
    return GradientCheckResult(max_err, threshold, entries)


def training_loss_on_sample(
    model: LiftingModel, sequences, weights: LossWeights | None = None, seed: int = 0,
    batch_size: int = 8,
) -> Callable[[LiftingModel], torch.Tensor]:
    """Build a deterministic full-loss closure over one small batch, suitable
    for gradient_check: every loss component is active on the same sample."""
    prepared = _prepare_sequences(model, sequences)
    rng = np.random.default_rng(seed)
    w = weights if weights is not None else LossWeights()
    chosen: list[tuple[int, int]] = []
    for k in range(max(1, batch_size // 2)):
        s = int(rng.integers(len(prepared)))
        t = int(rng.integers(prepared[s].num_frames - 1))
        chosen.extend([(s, t), (s, t + 1)])
    batch = _assemble_batch(prepared, chosen, model.config.num_random_frames, rng, model.config.torch_dtype)

    def loss_fn(m: LiftingModel) -> torch.Tensor:
        components = _batch_losses(m, batch, w)
        total, _ = total_loss(components, w)
        return total

    return loss_fn


# --- prediction and evaluation ----------------------------------------------


def predict_sequence(
    model: LiftingModel, seq: PoseSequence, seed: int = 0, batch_size: int = 256
) -> np.ndarray:
    """Root-relative 3D predictions [T, J, 3] for every frame of a clip.

    The random frames feeding the length branch are drawn once per clip with
    the given seed, so prediction is deterministic.
    """
    if seq.joints2d is None or seq.camera is None:
        raise ValidationError("prediction needs 2D joints and a camera")
    rf = model.config.receptive_field
    f_len = model.config.num_random_frames
    t_total = seq.num_frames
    if t_total < max(rf, f_len):
        raise ValidationError(
            f"sequence too short: {t_total} frames, need {max(rf, f_len)}"
        )
    norm2d = normalize_2d(seq.joints2d, seq.camera)
    windows = sliding_windows(t_total, rf)
    rand_idx = sample_random_frames(t_total, f_len, seed)
    dtype = model.config.torch_dtype
    x_random_one = torch.as_tensor(norm2d[rand_idx], dtype=dtype)
    outputs = []
    model.eval()
    with torch.no_grad():
        for start in range(0, t_total, batch_size):
            idx = windows[start : start + batch_size]
            x_window = torch.as_tensor(norm2d[idx], dtype=dtype)
            b = x_window.shape[0]
            x_random = x_random_one[None].repeat(b, 1, 1, 1)
            x_current = torch.as_tensor(
                norm2d[np.arange(start, min(start + batch_size, t_total))], dtype=dtype
            )
            _out, _dirs, final = model(x_random, x_current, x_window)
            outputs.append(final.cpu().numpy())
    model.train()
    return np.concatenate(outputs, axis=0)


def evaluate_model(
    model: LiftingModel, items, seed: int = 0
) -> tuple[EvalReport, dict]:
    """Predict every clip and compute all four protocols per action.

    `items` holds (record, PoseSequence) pairs as returned by load_sequences,
    or bare PoseSequence objects (grouped under one "sequence" action); clips
    sharing an action are combined frame-weighted.  Also returns plot-friendly
    details: per-frame protocol-1 traces per clip and the per-joint mean
    error over all frames.
    """
    root = model.bone_set.topology.root_index
    predictions: dict[str, list[np.ndarray]] = {}
    targets: dict[str, list[np.ndarray]] = {}
    traces: dict[str, list[float]] = {}
    joint_sums = None
    frames_total = 0
    for i, item in enumerate(items):
        if isinstance(item, PoseSequence):
            seq, seq_id, action = item, f"seq{i:03d}", "sequence"
        else:
            record, seq = item
            seq_id, action = record.sequence_id, record.action
        if seq.joints3d is None:
            raise ValidationError(f"sequence {seq_id} has no ground-truth 3D joints")
        pred = predict_sequence(model, seq, seed=seed)
        gt = seq.root_relative(root)
        predictions.setdefault(action, []).append(pred)
        targets.setdefault(action, []).append(gt)
        per_joint = np.linalg.norm(pred - gt, axis=-1)  # [T, J]
        traces[seq_id] = per_joint.mean(axis=1).tolist()
        joint_sums = per_joint.sum(axis=0) + (0 if joint_sums is None else joint_sums)
        frames_total += per_joint.shape[0]
    report = evaluate_actions(predictions, targets)
    details = {
        "per_frame_mpjpe": traces,
        "per_joint_mpjpe": (joint_sums / frames_total).tolist(),
        "joint_names": list(model.bone_set.topology.joint_names),
    }
    return report, details


# --- ablation ----------------------------------------------------------------


def _ablation_run(args: dict) -> dict:
    """One (virtual config, projection-consistency mode, seed) training run.
    Module-level so the opt-in process pool can pickle it."""
    model_config = ModelConfig(**args["model_config"])
    train_config = TrainingConfig(
        weights=LossWeights(**args["weights"]), **args["train_config"]
    )
    model = init_params(model_config, seed=train_config.seed)
    result = train(model, args["train_items"], train_config, args["run_dir"])
    model = load_checkpoint(result.checkpoint_path)
    report, _details = evaluate_model(model, args["eval_items"], seed=train_config.seed)
    agg = report.aggregate
    return {
        "virtual_config": model_config.virtual_config,
        "projection_consistency": args["pcl"],
        "seed": train_config.seed,
        "protocol1_mpjpe": agg.protocol1,
        "protocol2_p_mpjpe": agg.protocol2,
        "protocol3_n_mpjpe": agg.protocol3,
        "mpjve": agg.velocity,
    }


def run_ablation(
    train_items,
    eval_items,
    model_config: ModelConfig,
    train_config: TrainingConfig,
    out_dir: str | Path,
    virtual_configs: Sequence[str] = VIRTUAL_CONFIG_NAMES,
    pcl_modes: Sequence[bool] = (True, False),
    seeds: Sequence[int] = (0,),
    parallel: int = 1,
) -> dict:
    """Train and evaluate every (virtual config, projection mode, seed) cell.

    Writes ablation.json (all rows plus per-cell summaries with the median
    over seeds) and ablation.txt (one table row per cell) under out_dir.
    Runs sequentially unless parallel > 1.
    """
    for name in virtual_configs:
        if name not in VIRTUAL_CONFIG_NAMES:
            raise ConfigurationError(f"unknown virtual config {name!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for virtual in virtual_configs:
        for pcl in pcl_modes:
            for seed in seeds:
                weights = train_config.weights if pcl else train_config.weights.without_projection()
                run_dir = out / f"{virtual}_pcl{'on' if pcl else 'off'}_seed{seed}"
                jobs.append(
                    {
                        "model_config": {
                            **asdict(model_config),
                            "virtual_config": virtual,
                        },
                        "train_config": {
                            k: v
                            for k, v in asdict(train_config).items()
                            if k not in ("weights",)
                        } | {"seed": seed},
                        "weights": weights.as_dict(),
                        "pcl": pcl,
                        "train_items": train_items,
                        "eval_items": eval_items,
                        "run_dir": str(run_dir),
                    }
                )
    started = time.time()
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_ablation_run, jobs))
    else:
        rows = [_ablation_run(job) for job in jobs]

    summaries = []
    for virtual in virtual_configs:
        for pcl in pcl_modes:
            cell = [
                r
                for r in rows
                if r["virtual_config"] == virtual and r["projection_consistency"] == pcl
            ]
            summaries.append(
                {
                    "virtual_config": virtual,
                    "projection_consistency": pcl,
                    "seeds": [r["seed"] for r in cell],
                    "median_protocol1_mpjpe": float(
                        np.median([r["protocol1_mpjpe"] for r in cell])
                    ),
                    "median_protocol2_p_mpjpe": float(
                        np.median([r["protocol2_p_mpjpe"] for r in cell])
                    ),
                    "median_protocol3_n_mpjpe": float(
                        np.median([r["protocol3_n_mpjpe"] for r in cell])
                    ),
                    "median_mpjve": float(np.median([r["mpjve"] for r in cell])),
                }
            )
    doc = {"rows": rows, "summaries": summaries, "elapsed_s": time.time() - started}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = [
        f"{'config':8s}{'proj-consistency':18s}{'P1':>8s}{'P2':>8s}{'P3':>8s}{'MPJVE':>8s}"
    ]
    for s in summaries:
        lines.append(
            f"{s['virtual_config']:8s}"
            f"{'on' if s['projection_consistency'] else 'off':18s}"
            f"{s['median_protocol1_mpjpe']:8.2f}"
            f"{s['median_protocol2_p_mpjpe']:8.2f}"
            f"{s['median_protocol3_n_mpjpe']:8.2f}"
            f"{s['median_mpjve']:8.2f}"
        )
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")
    return doc
