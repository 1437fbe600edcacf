"""The three networks of the lifting model and their checkpoint format.

length net    per-frame residual MLP mapping normalized 2D joints to a coarse
              3D pose; real-bone lengths measured on several randomly sampled
              frames are pooled by a learned softmax attention over frames,
              while virtual-bone lengths are measured on the current frame's
              coarse pose only.
direction net temporal fully-convolutional network over a window of normalized
              2D joints, kernel width 3 per stage with dilations growing by a
              factor of 3, emitting one unit direction per bone (real and
              virtual) for the middle frame.
composer      fully connected network mapping the length-scaled bone
              directions to all non-root joint positions.  A trainable linear
              skip is initialized to the real-bone chain routing, so before
              any training the composer reproduces plain tree composition and
              virtual bones start as a strict refinement.

The root joint is never produced by a network; its row is appended as zeros,
so every output pose is root-relative by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import (
    ConfigurationError,
    IncompatibleCheckpointError,
    ValidationError,
)
from .skeleton import (
    VIRTUAL_CONFIG_NAMES,
    BoneSet,
    SkeletonTopology,
    VirtualBoneConfig,
    default_topology,
    make_virtual_config,
)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}

# Millimetre scale of the coarse 3D head; keeps raw network outputs O(1).
_COARSE_SCALE_MM = 1000.0


def _is_power_of_three(n: int) -> bool:
    while n % 3 == 0 and n > 1:
        n //= 3
    return n == 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters shared by all three networks."""

    num_joints: int = 17
    virtual_config: str = "VB23"
    num_random_frames: int = 10
    receptive_field: int = 9
    hidden_width: int = 1024
    num_residual_blocks: int = 2
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.num_joints < 2:
            raise ConfigurationError("num_joints must be at least 2")
        if self.virtual_config not in VIRTUAL_CONFIG_NAMES:
            raise ConfigurationError(
                f"virtual_config must be one of {VIRTUAL_CONFIG_NAMES}, "
                f"got {self.virtual_config!r}"
            )
        if self.num_random_frames < 1:
            raise ConfigurationError("num_random_frames must be >= 1")
        if self.receptive_field < 3 or not _is_power_of_three(self.receptive_field):
            raise ConfigurationError(
                "receptive_field must be a power of three >= 3 (e.g. 9 or 243), "
                f"got {self.receptive_field}"
            )
        if self.hidden_width < 8:
            raise ConfigurationError("hidden_width must be >= 8")
        if self.num_residual_blocks < 1:
            raise ConfigurationError("num_residual_blocks must be >= 1")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


@dataclass
class LengthNetOutput:
    """Everything the length branch produces for one batch."""

    coarse3d_per_frame: torch.Tensor  # [b, f, J, 3] mm, root-relative
    coarse3d_current: torch.Tensor  # [b, J, 3] mm, root-relative
    per_frame_real_lengths: torch.Tensor  # [b, f, R] mm
    attention_weights: torch.Tensor  # [b, f, R], sums to 1 over f
    real_lengths: torch.Tensor  # [b, R] mm, attention-pooled
    virtual_lengths: torch.Tensor  # [b, V] mm, from the current frame


class _ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.relu(self.fc1(x))
        y = torch.relu(self.fc2(y))
        return x + y


class LengthNet(nn.Module):
    """Coarse per-frame 3D poses plus attention-pooled bone lengths."""

    def __init__(self, config: ModelConfig, bone_set: BoneSet):
        super().__init__()
        self.config = config
        self.bone_set = bone_set
        j = config.num_joints
        width = config.hidden_width
        self.expand = nn.Linear(2 * j, width)
        self.blocks = nn.ModuleList(
            _ResidualBlock(width) for _ in range(config.num_residual_blocks)
        )
        self.coarse_head = nn.Linear(width, 3 * (j - 1))
        self.attention_head = nn.Linear(width, bone_set.num_real)
        self._root = bone_set.topology.root_index
        heads, tails = bone_set.heads_tails()
        r = bone_set.num_real
        self._real_heads, self._real_tails = heads[:r], tails[:r]
        self._virt_heads, self._virt_tails = heads[r:], tails[r:]

    def _features(self, frames2d: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.expand(frames2d.reshape(*frames2d.shape[:-2], -1)))
        for block in self.blocks:
            x = block(x)
        return x

    def _coarse_from_features(self, feats: torch.Tensor) -> torch.Tensor:
        j = self.config.num_joints
        flat = self.coarse_head(feats) * _COARSE_SCALE_MM
        nonroot = flat.reshape(*flat.shape[:-1], j - 1, 3)
        full = nonroot.new_zeros(*flat.shape[:-1], j, 3)
        idx = [k for k in range(j) if k != self._root]
        full[..., idx, :] = nonroot
        return full

    def coarse3d(self, frames2d: torch.Tensor) -> torch.Tensor:
        """Coarse root-relative 3D pose for frames shaped [..., J, 2]."""
        self._check_frame_shape(frames2d, "frames2d")
        return self._coarse_from_features(self._features(frames2d))

    def _check_frame_shape(self, x: torch.Tensor, name: str) -> None:
        j = self.config.num_joints
        if x.shape[-1] != 2 or x.shape[-2] != j:
            raise ValidationError(f"{name} must be [..., {j}, 2], got {tuple(x.shape)}")

    def forward(self, x_random: torch.Tensor, x_current: torch.Tensor) -> LengthNetOutput:
        """x_random [b, f, J, 2], x_current [b, J, 2], both camera-normalized.

        Unbatched inputs ([f, J, 2] and [J, 2]) are accepted and yield
        unbatched outputs.
        """
        squeeze = x_random.dim() == 3
        if squeeze:
            x_random = x_random[None]
            x_current = x_current[None]
        self._check_frame_shape(x_random, "x_random")
        self._check_frame_shape(x_current, "x_current")
        if x_random.dim() != 4 or x_current.dim() != 3:
            raise ValidationError("x_random must be [b, f, J, 2] with x_current [b, J, 2]")
        f = self.config.num_random_frames
        if x_random.shape[1] != f:
            raise ConfigurationError(
                f"length net was built for {f} random frames, got {x_random.shape[1]}"
            )
        feats_random = self._features(x_random)  # [b, f, w]
        feats_current = self._features(x_current)  # [b, w]
        coarse_random = self._coarse_from_features(feats_random)
        coarse_current = self._coarse_from_features(feats_current)

        vec = (
            coarse_random[..., self._real_heads, :]
            - coarse_random[..., self._real_tails, :]
        )
        per_frame = ((vec**2).sum(-1)) ** 0.5  # [b, f, R]
        scores = self.attention_head(feats_random)  # [b, f, R]
        weights = torch.softmax(scores, dim=1)
        pooled = (weights * per_frame).sum(dim=1)  # [b, R]

        if self._virt_heads:
            vvec = (
                coarse_current[..., self._virt_heads, :]
                - coarse_current[..., self._virt_tails, :]
            )
            virtual = ((vvec**2).sum(-1)) ** 0.5
        else:
            virtual = coarse_current.new_zeros(coarse_current.shape[0], 0)

        out = LengthNetOutput(
            coarse3d_per_frame=coarse_random,
            coarse3d_current=coarse_current,
            per_frame_real_lengths=per_frame,
            attention_weights=weights,
            real_lengths=pooled,
            virtual_lengths=virtual,
        )
        if squeeze:
            out = LengthNetOutput(*(t[0] for t in (
                out.coarse3d_per_frame,
                out.coarse3d_current,
                out.per_frame_real_lengths,
                out.attention_weights,
                out.real_lengths,
                out.virtual_lengths,
            )))
        return out


class _TemporalBlock(nn.Module):
    def __init__(self, width: int, dilation: int):
        super().__init__()
        self.dilation = dilation
        self.conv = nn.Conv1d(width, width, kernel_size=3, dilation=dilation)
        self.pointwise = nn.Conv1d(width, width, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.relu(self.conv(x))
        y = torch.relu(self.pointwise(y))
        d = self.dilation
        return x[:, :, d:-d] + y


class DirectionNet(nn.Module):
    """Unit bone directions for the middle frame of a 2D window.

    The stack of valid (unpadded) kernel-3 convolutions with dilations
    1, 3, 9, ... collapses a window of exactly `receptive_field` frames to a
    single temporal position, which is the window's centre.
    """

    def __init__(self, config: ModelConfig, bone_set: BoneSet):
        super().__init__()
        self.config = config
        self.bone_set = bone_set
        width = config.hidden_width
        j = config.num_joints
        stages = 0
        rf = config.receptive_field
        while 3**(stages + 1) < rf:
            stages += 1
        self.entry = nn.Conv1d(2 * j, width, kernel_size=3)
        self.blocks = nn.ModuleList(
            _TemporalBlock(width, 3**k) for k in range(1, stages + 1)
        )
        self.head = nn.Conv1d(width, 3 * bone_set.size, kernel_size=1)

    def forward(self, x_window: torch.Tensor) -> torch.Tensor:
        """x_window [b, rf, J, 2] (or [rf, J, 2]) -> unit directions [b, B, 3]."""
        squeeze = x_window.dim() == 3
        if squeeze:
            x_window = x_window[None]
        j = self.config.num_joints
        rf = self.config.receptive_field
        if x_window.dim() != 4 or x_window.shape[-2] != j or x_window.shape[-1] != 2:
            raise ValidationError(
                f"x_window must be [b, {rf}, {j}, 2], got {tuple(x_window.shape)}"
            )
        if x_window.shape[1] != rf:
            raise ValidationError(
                f"direction net needs windows of exactly {rf} frames, "
                f"got {x_window.shape[1]}"
            )
        b = x_window.shape[0]
        x = x_window.reshape(b, rf, 2 * j).transpose(1, 2)  # [b, 2J, rf]
        x = torch.relu(self.entry(x))
        for block in self.blocks:
            x = block(x)
        raw = self.head(x)  # [b, 3B, 1]
        dirs = raw[:, :, 0].reshape(b, self.bone_set.size, 3)
        norms = ((dirs**2).sum(-1, keepdim=True)) ** 0.5
        dirs = dirs / norms.clamp_min(1e-12)
        return dirs[0] if squeeze else dirs


def _routing_matrix(bone_set: BoneSet) -> torch.Tensor:
    """Linear map from concatenated bone vectors to non-root joint positions
    using only each joint's real-bone chain from the root."""
    topo = bone_set.topology
    root = topo.root_index
    bone_of_child = {child: i for i, (child, _parent) in enumerate(topo.real_bones)}
    nonroot = [j for j in range(topo.num_joints) if j != root]
    matrix = torch.zeros(3 * len(nonroot), 3 * bone_set.size, dtype=torch.float64)
    for row, joint in enumerate(nonroot):
        cur = joint
        while cur != root:
            bone = bone_of_child[cur]
            for d in range(3):
                matrix[3 * row + d, 3 * bone + d] = 1.0
            cur = topo.parents[cur]
    return matrix


class JointComposer(nn.Module):
    """Fully connected composition of length-scaled bone directions.

    Input is the concatenation of every bone vector (length times unit
    direction, 3B values); output is every non-root joint, root appended as
    zeros.  The trainable skip starts as the real-bone routing matrix and the
    residual MLP starts at zero, so the initial composer is exact tree
    composition regardless of how many virtual bones are present.
    """

    def __init__(self, config: ModelConfig, bone_set: BoneSet):
        super().__init__()
        self.config = config
        self.bone_set = bone_set
        j = config.num_joints
        b = bone_set.size
        width = config.hidden_width
        self.skip = nn.Linear(3 * b, 3 * (j - 1), bias=False)
        self.fc1 = nn.Linear(3 * b, width)
        self.fc2 = nn.Linear(width, 3 * (j - 1))
        with torch.no_grad():
            self.skip.weight.copy_(_routing_matrix(bone_set))
            self.fc2.weight.zero_()
            self.fc2.bias.zero_()
        self._root = bone_set.topology.root_index

    def forward(
        self,
        real_lengths: torch.Tensor,
        virtual_lengths: torch.Tensor,
        directions: torch.Tensor,
    ) -> torch.Tensor:
        """[b, R] and [b, V] lengths plus [b, B, 3] unit directions -> [b, J, 3]."""
        squeeze = directions.dim() == 2
        if squeeze:
            real_lengths = real_lengths[None]
            virtual_lengths = virtual_lengths[None]
            directions = directions[None]
        r = self.bone_set.num_real
        v = self.bone_set.virtual.count
        if real_lengths.shape[-1] != r:
            raise ConfigurationError(
                f"composer expects {r} real lengths, got {real_lengths.shape[-1]}"
            )
        if virtual_lengths.shape[-1] != v:
            raise ConfigurationError(
                f"composer was built for {v} virtual bones, "
                f"got {virtual_lengths.shape[-1]} lengths"
            )
        if directions.shape[-2] != self.bone_set.size or directions.shape[-1] != 3:
            raise ValidationError(
                f"directions must be [b, {self.bone_set.size}, 3], "
                f"got {tuple(directions.shape)}"
            )
        with torch.no_grad():
            norms = ((directions**2).sum(-1)) ** 0.5
            if bool((abs(norms - 1.0) > 1e-5).any()):
                raise ValidationError("composer directions must be unit vectors")
        lengths = torch.cat([real_lengths, virtual_lengths], dim=-1)
        bone_vecs = lengths[..., None] * directions  # [b, B, 3]
        flat = bone_vecs.reshape(*bone_vecs.shape[:-2], -1)
        out = self.skip(flat) + self.fc2(torch.relu(self.fc1(flat)))
        j = self.config.num_joints
        nonroot = out.reshape(*out.shape[:-1], j - 1, 3)
        full = nonroot.new_zeros(*out.shape[:-1], j, 3)
        idx = [k for k in range(j) if k != self._root]
        full[..., idx, :] = nonroot
        return full[0] if squeeze else full


class LiftingModel(nn.Module):
    """Bundle of the three networks plus the bone set they were built for."""

    def __init__(
        self,
        config: ModelConfig,
        topology: SkeletonTopology | None = None,
        virtual: VirtualBoneConfig | None = None,
    ):
        super().__init__()
        topo = topology if topology is not None else default_topology()
        if topo.num_joints != config.num_joints:
            raise ConfigurationError(
                f"config says {config.num_joints} joints but topology has {topo.num_joints}"
            )
        virt = virtual if virtual is not None else make_virtual_config(config.virtual_config, topo)
        self.config = config
        self.bone_set = BoneSet(topo, virt)
        self.length_net = LengthNet(config, self.bone_set)
        self.direction_net = DirectionNet(config, self.bone_set)
        self.composer = JointComposer(config, self.bone_set)
        self.to(config.torch_dtype)

    def forward(
        self, x_random: torch.Tensor, x_current: torch.Tensor, x_window: torch.Tensor
    ) -> tuple[LengthNetOutput, torch.Tensor, torch.Tensor]:
        """Run all three stages; returns (length output, directions, joints)."""
        length_out = self.length_net(x_random, x_current)
        directions = self.direction_net(x_window)
        joints = self.composer(
            length_out.real_lengths, length_out.virtual_lengths, directions
        )
        return length_out, directions, joints


def init_params(config: ModelConfig, seed: int | None = None) -> LiftingModel:
    """Build a freshly initialized model; identical seeds give identical params."""
    torch.manual_seed(config.seed if seed is None else seed)
    return LiftingModel(config)


_CKPT_FORMAT = "vbones-checkpoint-v1"


def save_checkpoint(model: LiftingModel, path: str | Path) -> None:
    """Single-file checkpoint: an .npz holding one named float array per
    parameter (in state-dict order) plus a JSON metadata string with the
    model config, topology, virtual bone pairs, and the array key list."""
    state = model.state_dict()
    meta = {
        "format": _CKPT_FORMAT,
        "config": asdict(model.config),
        "topology": {
            "joints": list(model.bone_set.topology.joint_names),
            "parents": list(model.bone_set.topology.parents),
        },
        "virtual_name": model.bone_set.virtual.name,
        "virtual_pairs": [list(p) for p in model.bone_set.virtual.pairs],
        "keys": list(state.keys()),
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in state.items()}
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(
    path: str | Path, expected_config: ModelConfig | None = None
) -> LiftingModel:
    """Rebuild a model from a checkpoint written by save_checkpoint.

    When `expected_config` is given, any difference from the stored config
    (virtual bone set, receptive field, widths, ...) is an
    IncompatibleCheckpointError rather than a silent reinterpretation.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise IncompatibleCheckpointError(f"{path} is not a model checkpoint")
        meta = json.loads(str(data["__meta__"][()]))
        if meta.get("format") != _CKPT_FORMAT:
            raise IncompatibleCheckpointError(
                f"{path} has unknown checkpoint format {meta.get('format')!r}"
            )
        config = ModelConfig(**meta["config"])
        if expected_config is not None and config != expected_config:
            diffs = [
                f"{k}: checkpoint={v!r} expected={getattr(expected_config, k)!r}"
                for k, v in asdict(config).items()
                if v != getattr(expected_config, k)
            ]
            raise IncompatibleCheckpointError(
                "checkpoint does not match the requested model: " + "; ".join(diffs)
            )
        topo = SkeletonTopology(
            tuple(meta["topology"]["joints"]),
            tuple(int(p) for p in meta["topology"]["parents"]),
        )
        virtual = VirtualBoneConfig(
            meta["virtual_name"], tuple((int(a), int(b)) for a, b in meta["virtual_pairs"])
        )
        model = LiftingModel(config, topology=topo, virtual=virtual)
        state = {}
        for key in meta["keys"]:
            if key not in data:
                raise IncompatibleCheckpointError(f"checkpoint is missing array {key!r}")
            state[key] = torch.from_numpy(data[key].copy())
        model.load_state_dict(state, strict=True)
        model.to(config.torch_dtype)
        return model
