"""Command-line interface.

Subcommands: synth, train, eval, ablate, paths, gradcheck, plot.  Every
command that writes artifacts refuses to reuse a non-empty output directory
unless --force is given, and drops a manifest.json (config hash, seed, code
version) next to what it wrote.  Failures print one machine-parsable line to
stderr: "error: <ErrorType>: <message>".

The environment variable VBONES_NUM_THREADS caps the compute threads used by
the numerical backend.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    SyntheticMotionSpec,
    generate_synthetic,
    ingest_h36m_format,
    load_sequences,
    make_synthetic_dataset,
)
from .errors import ConfigurationError, ValidationError, VbonesError
from .geometry import CameraIntrinsics, load_pose_sequence
from .losses import LossWeights
from .manifest import write_manifest
from .metrics import evaluate_actions
from .nets import ModelConfig, init_params, load_checkpoint
from .skeleton import (
    VIRTUAL_CONFIG_NAMES,
    BoneSet,
    default_topology,
    enumerate_paths,
    make_virtual_config,
)
from .train import (
    TrainingConfig,
    evaluate_model,
    gradient_check,
    run_ablation,
    train,
    training_loss_on_sample,
)


def _apply_thread_cap() -> None:
    raw = os.environ.get("VBONES_NUM_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"VBONES_NUM_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigurationError(f"VBONES_NUM_THREADS must be >= 1, got {n}")
    import torch

    torch.set_num_threads(n)


def _claim_out_dir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{p} must hold a JSON object")
    return doc


def _dataclass_from(cls, doc: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**doc)


def _model_config_from(doc: dict, args) -> ModelConfig:
    doc = dict(doc)
    if getattr(args, "frames", None):
        doc["receptive_field"] = int(args.frames)
    if getattr(args, "virtual", None):
        doc["virtual_config"] = args.virtual
    return _dataclass_from(ModelConfig, doc, "model config")


def _training_config_from(doc: dict, args) -> TrainingConfig:
    doc = dict(doc)
    weights_doc = doc.pop("weights", None)
    weights = (
        _dataclass_from(LossWeights, weights_doc, "loss weights")
        if weights_doc is not None
        else LossWeights()
    )
    if getattr(args, "pcl", None) == "off":
        weights = weights.without_projection()
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "deterministic", None) is not None:
        doc["deterministic"] = args.deterministic
    return _dataclass_from(TrainingConfig, {**doc, "weights": weights}, "training config")


# --- synth -------------------------------------------------------------------


def _cmd_synth(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    num_sequences = int(doc.pop("num_sequences", args.sequences))
    subject = doc.pop("subject", args.subject)
    action_prefix = doc.pop("action_prefix", "motion")
    camera_id = doc.pop("camera_id", "cam0")
    camera_doc = doc.pop("camera", None)
    spec_doc = dict(doc)
    if args.frames_per_clip is not None:
        spec_doc["num_frames"] = args.frames_per_clip
    if args.noise is not None:
        spec_doc["noise_sigma_2d"] = args.noise
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    if camera_doc is not None:
        spec_doc["camera"] = CameraIntrinsics.from_dict(camera_doc)
    for key in ("bone_lengths_mm", "root_center_mm"):
        if key in spec_doc:
            spec_doc[key] = tuple(spec_doc[key])
    spec = _dataclass_from(SyntheticMotionSpec, spec_doc, "synthetic motion spec")
    out = _claim_out_dir(args.out, args.force)
    index_path = make_synthetic_dataset(
        out, num_sequences, spec, subject=subject, action_prefix=action_prefix,
        camera_id=camera_id,
    )
    write_manifest(
        out,
        "synth",
        {
            "num_sequences": num_sequences,
            "subject": subject,
            "spec": dataclasses.asdict(spec),
        },
        spec.seed,
    )
    print(f"wrote {num_sequences} sequences to {index_path.parent}")
    return 0


# --- train -------------------------------------------------------------------


def _cmd_train(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    model_config = _model_config_from(doc.get("model", {}), args)
    training_config = _training_config_from(doc.get("training", {}), args)
    out = _claim_out_dir(args.out, args.force)

    index = ingest_h36m_format(args.data, "train")
    if not index.records:
        raise ValidationError(f"no training sequences found under {args.data}")
    items = load_sequences(index)
    model = init_params(model_config, seed=training_config.seed)
    result = train(model, items, training_config, out)
    write_manifest(
        out,
        "train",
        {
            "model": dataclasses.asdict(model_config),
            "training": dataclasses.asdict(training_config),
            "data": str(args.data),
        },
        training_config.seed,
    )
    final = result.epoch_summaries[-1]
    print(
        f"trained {training_config.epochs} epochs ({result.total_steps} steps); "
        f"final total loss {final['total']:.4f}; checkpoint {result.checkpoint_path}"
    )
    return 0


# --- eval --------------------------------------------------------------------


def _cmd_eval(args) -> int:
    file_mode = args.pred is not None or args.gt is not None
    if file_mode and (args.pred is None or args.gt is None):
        raise ValidationError("file comparison needs both --pred and --gt")
    if file_mode and args.checkpoint:
        raise ValidationError("pass either --checkpoint/--data or --pred/--gt, not both")
    if not file_mode and (args.checkpoint is None or args.data is None):
        raise ValidationError("model evaluation needs --checkpoint and --data")
    out = _claim_out_dir(args.out, args.force)

    if file_mode:
        pred_seq = load_pose_sequence(args.pred)
        gt_seq = load_pose_sequence(args.gt)
        if pred_seq.joints3d is None or gt_seq.joints3d is None:
            raise ValidationError("both --pred and --gt files need 3D joints")
        name = Path(args.pred).stem
        report = evaluate_actions(
            {name: [pred_seq.joints3d]}, {name: [gt_seq.joints3d]}
        )
        details = None
        config_doc = {"pred": str(args.pred), "gt": str(args.gt)}
    else:
        model = load_checkpoint(args.checkpoint)
        index = ingest_h36m_format(args.data, args.split)
        if not index.records:
            raise ValidationError(f"no {args.split} sequences found under {args.data}")
        items = load_sequences(index)
        report, details = evaluate_model(model, items, seed=args.seed or 0)
        config_doc = {
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "split": args.split,
        }

    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    if details is not None:
        (out / "details.json").write_text(json.dumps(details) + "\n")
    write_manifest(out, "eval", config_doc, args.seed)
    print(report.to_text(), end="")
    return 0


# --- ablate ------------------------------------------------------------------


def _cmd_ablate(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    model_config = _model_config_from(doc.get("model", {}), args)
    training_config = _training_config_from(doc.get("training", {}), args)
    out = _claim_out_dir(args.out, args.force)

    train_items = load_sequences(ingest_h36m_format(args.data, "train"))
    eval_items = load_sequences(ingest_h36m_format(args.eval_data or args.data, "test"))
    if not train_items or not eval_items:
        raise ValidationError("ablation needs non-empty train and test splits")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [training_config.seed]
    virtuals = (
        [v.strip() for v in args.virtual_configs.split(",")]
        if args.virtual_configs
        else list(VIRTUAL_CONFIG_NAMES)
    )
    doc = run_ablation(
        train_items,
        eval_items,
        model_config,
        training_config,
        out,
        virtual_configs=virtuals,
        seeds=seeds,
        parallel=args.parallel,
    )
    write_manifest(
        out,
        "ablate",
        {
            "model": dataclasses.asdict(model_config),
            "training": dataclasses.asdict(training_config),
            "virtual_configs": virtuals,
            "seeds": seeds,
        },
        training_config.seed,
    )
    print((out / "ablation.txt").read_text(), end="")
    return 0


# --- paths -------------------------------------------------------------------


def _cmd_paths(args) -> int:
    topology = default_topology()
    virtual = make_virtual_config(args.virtual, topology)
    bone_set = BoneSet(topology, virtual)
    target = topology.index(args.joint)
    path_set = enumerate_paths(bone_set, target, args.max_edges)
    if args.json:
        doc = {
            "virtual_config": args.virtual,
            "joint": args.joint,
            "max_edges": args.max_edges,
            "count": path_set.count,
            "paths": [[[idx, sign] for idx, sign in path] for path in path_set.paths],
        }
        print(json.dumps(doc, indent=2))
        return 0
    names = topology.joint_names
    print(
        f"{path_set.count} path(s) from {names[topology.root_index]} to "
        f"{args.joint} ({args.virtual}, max {args.max_edges} edges)"
    )
    for k, path in enumerate(path_set.paths):
        joints = [topology.root_index]
        for bone_idx, sign in path:
            head, tail = bone_set.bones[bone_idx]
            joints.append(head if sign > 0 else tail)
        chain = " -> ".join(names[j] for j in joints)
        bones = ", ".join(
            f"{bone_set.bone_name(idx)}{'' if sign > 0 else ' (reversed)'}"
            for idx, sign in path
        )
        print(f"  [{k}] {chain}   via {bones}")
    return 0


# --- gradcheck ---------------------------------------------------------------


def _cmd_gradcheck(args) -> int:
    spec = SyntheticMotionSpec(num_frames=32, seed=args.seed or 0)
    clip = generate_synthetic(spec)
    config = ModelConfig(
        virtual_config=args.virtual,
        receptive_field=int(args.frames),
        hidden_width=args.width,
        num_random_frames=6,
    )
    model = init_params(config, seed=args.seed or 0)
    loss_fn = training_loss_on_sample(model, [clip], seed=args.seed or 0)
    result = gradient_check(
        model, loss_fn, num_params=args.num_params, eps=args.eps, seed=args.seed or 0
    )
    print(result.report())
    return 0 if result.ok else 1


# --- plot --------------------------------------------------------------------


def _plot_training_curves(log_path: Path, out: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = [json.loads(line) for line in log_path.read_text().splitlines() if line]
    if not records:
        raise ValidationError(f"{log_path} holds no training records")
    steps = [r["step"] for r in records]
    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(9, 7), sharex=True, height_ratios=[3, 1]
    )
    for key in ("total", "length", "attention", "direction", "joint_shift",
                "proj_dir", "proj_len", "composer"):
        if key in records[0]:
            values = [max(r[key], 1e-12) for r in records]
            ax_loss.plot(steps, values, label=key, linewidth=1.2 if key == "total" else 0.8)
    ax_loss.set_yscale("log")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(ncol=4, fontsize=8)
    ax_loss.set_title("training loss components")
    ax_lr.plot(steps, [r["lr"] for r in records], color="black")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    fig.tight_layout()
    path = out / "training_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_eval_details(details_path: Path, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    details = json.loads(details_path.read_text())
    written = []
    fig, ax = plt.subplots(figsize=(9, 4))
    names = details["joint_names"]
    ax.bar(range(len(names)), details["per_joint_mpjpe"])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("mean error (mm)")
    ax.set_title("per-joint mean position error")
    fig.tight_layout()
    path = out / "per_joint_error.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(9, 4))
    for seq_id, trace in sorted(details["per_frame_mpjpe"].items()):
        ax.plot(trace, label=seq_id, linewidth=0.8)
    ax.set_xlabel("frame")
    ax.set_ylabel("MPJPE (mm)")
    ax.set_title("per-frame position error")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out / "per_frame_error.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def _plot_offset_demo(out: Path) -> Path:
    """Two estimates with the same per-frame 2D error magnitude: a constant
    offset costs nothing under a displacement comparison, oscillation costs
    double the offset per step."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.arange(64)
    gt = np.stack([480 + 60 * np.cos(t / 9.0), 500 + 45 * np.sin(t / 7.0)], axis=-1)
    offset = np.array([14.0, -10.0])
    constant = gt + offset
    oscillating = gt + offset * ((-1.0) ** t)[:, None]

    def disp_cost(est):
        return float(
            np.linalg.norm(np.diff(est, axis=0) - np.diff(gt, axis=0), axis=-1).mean()
        )

    fig, ax = plt.subplots(figsize=(7, 6))
    ax.plot(gt[:, 0], gt[:, 1], "k-", label="observed 2D path")
    ax.plot(
        constant[:, 0],
        constant[:, 1],
        "-",
        color="tab:blue",
        label=f"constant offset (displacement cost {disp_cost(constant):.2f} px)",
    )
    ax.plot(
        oscillating[:, 0],
        oscillating[:, 1],
        "-",
        color="tab:red",
        alpha=0.6,
        label=f"oscillating offset (displacement cost {disp_cost(oscillating):.2f} px)",
    )
    ax.set_xlabel("u (px)")
    ax.set_ylabel("v (px)")
    ax.set_title("displacement comparison ignores constant offsets")
    ax.legend(fontsize=8)
    ax.invert_yaxis()
    fig.tight_layout()
    path = out / "offset_vs_oscillation.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _cmd_plot(args) -> int:
    if not (args.log or args.details or args.demo):
        raise ValidationError("nothing to plot: pass --log, --details, or --demo")
    out = _claim_out_dir(args.out, args.force)
    written = []
    if args.log:
        written.append(_plot_training_curves(Path(args.log), out))
    if args.details:
        written.extend(_plot_eval_details(Path(args.details), out))
    if args.demo:
        written.append(_plot_offset_demo(out))
    write_manifest(
        out,
        "plot",
        {"log": args.log, "details": args.details, "demo": args.demo},
        args.seed,
    )
    for path in written:
        print(f"wrote {path}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbones",
        description="3D human pose lifting with virtual-bone loop constraints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--force", action="store_true", help="overwrite non-empty output")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--config", help="synthetic motion spec JSON")
    p.add_argument("--sequences", type=int, default=4, help="number of clips")
    p.add_argument("--frames-per-clip", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="2D pixel noise sigma")
    p.add_argument("--subject", default="S1", help="subject id controlling the split")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a lifting model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON with 'model' and 'training' sections")
    p.add_argument("--frames", choices=("9", "243"), help="receptive field")
    p.add_argument("--virtual", choices=VIRTUAL_CONFIG_NAMES, help="virtual bone set")
    p.add_argument("--pcl", choices=("on", "off"), help="projection-consistency terms")
    p.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="single-threaded seeded run (default on)",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or compare pose files")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--pred", help="pose-sequence file with predicted 3D joints")
    p.add_argument("--gt", help="pose-sequence file with ground-truth 3D joints")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate a grid of configurations")
    common(p)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--eval-data", help="evaluation dataset directory (default: --data)")
    p.add_argument("--config", help="JSON with 'model' and 'training' sections")
    p.add_argument("--frames", choices=("9", "243"), help="receptive field")
    p.add_argument("--virtual-configs", help="comma list, default all five")
    p.add_argument("--seeds", help="comma list of seeds, default the config seed")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("paths", help="enumerate root-to-joint bone paths")
    p.add_argument("--virtual", "--config", dest="virtual", default="VB23",
                   choices=VIRTUAL_CONFIG_NAMES, help="virtual bone set")
    p.add_argument("--joint", required=True, help="target joint name")
    p.add_argument("--max-edges", type=int, default=8)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_paths)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--virtual", default="VB23", choices=VIRTUAL_CONFIG_NAMES)
    p.add_argument("--frames", choices=("9", "243"), default="9")
    p.add_argument("--width", type=int, default=64, help="hidden width for the check")
    p.add_argument("--num-params", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("plot", help="render training/evaluation figures")
    common(p)
    p.add_argument("--log", help="train_log.jsonl from a training run")
    p.add_argument("--details", help="details.json from an evaluation")
    p.add_argument("--demo", action="store_true",
                   help="render the offset-versus-oscillation illustration")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except VbonesError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
