"""Monocular 3D human pose lifting with virtual-bone loop constraints."""

__version__ = "0.1.0"

from .data import (
    TEST_SUBJECTS,
    TRAIN_SUBJECTS,
    DatasetIndex,
    SequenceRecord,
    SyntheticMotionSpec,
    denormalize_2d,
    generate_synthetic,
    ingest_h36m_format,
    load_sequences,
    make_synthetic_dataset,
    normalize_2d,
    sample_random_frames,
    sliding_windows,
    write_dataset,
)
from .errors import (
    BehindCameraError,
    ConfigurationError,
    DegenerateBoneError,
    GenerationError,
    IncompatibleCheckpointError,
    IngestionError,
    TrainingDivergenceError,
    ValidationError,
    VbonesError,
)
from .geometry import (
    CameraIntrinsics,
    PoseSequence,
    bone_directions_from_joints,
    compose_joint_multi_path,
    compose_joint_single_path,
    displacements,
    load_camera,
    load_pose_sequence,
    project_pinhole,
    save_camera,
    save_pose_sequence,
)
from .losses import (
    COMPONENT_NAMES,
    LossWeights,
    attention_loss,
    composer_loss,
    direction_loss,
    joint_shift_loss,
    length_loss,
    projection_consistency_loss,
    projection_consistency_pairs,
    total_loss,
)
from .metrics import EvalReport, evaluate_actions, mpjpe, mpjve, n_mpjpe, p_mpjpe
from .nets import (
    DirectionNet,
    JointComposer,
    LengthNet,
    LiftingModel,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .skeleton import (
    JOINT_NAMES,
    PARENTS,
    VIRTUAL_CONFIG_NAMES,
    BoneSet,
    PathSet,
    SkeletonTopology,
    VirtualBoneConfig,
    bone_lengths_from_joints,
    default_topology,
    enumerate_paths,
    load_skeleton,
    make_virtual_config,
    save_skeleton,
)
from .train import (
    TrainingConfig,
    TrainResult,
    evaluate_model,
    gradient_check,
    learning_rate_at,
    predict_sequence,
    run_ablation,
    train,
)

__all__ = [
    "__version__",
    "TEST_SUBJECTS",
    "TRAIN_SUBJECTS",
    "DatasetIndex",
    "SequenceRecord",
    "SyntheticMotionSpec",
    "denormalize_2d",
    "generate_synthetic",
    "ingest_h36m_format",
    "load_sequences",
    "make_synthetic_dataset",
    "normalize_2d",
    "sample_random_frames",
    "sliding_windows",
    "write_dataset",
    "BehindCameraError",
    "ConfigurationError",
    "DegenerateBoneError",
    "GenerationError",
    "IncompatibleCheckpointError",
    "IngestionError",
    "TrainingDivergenceError",
    "ValidationError",
    "VbonesError",
    "CameraIntrinsics",
    "PoseSequence",
    "bone_directions_from_joints",
    "compose_joint_multi_path",
    "compose_joint_single_path",
    "displacements",
    "load_camera",
    "load_pose_sequence",
    "project_pinhole",
    "save_camera",
    "save_pose_sequence",
    "COMPONENT_NAMES",
    "LossWeights",
    "attention_loss",
    "composer_loss",
    "direction_loss",
    "joint_shift_loss",
    "length_loss",
    "projection_consistency_loss",
    "projection_consistency_pairs",
    "total_loss",
    "EvalReport",
    "evaluate_actions",
    "mpjpe",
    "mpjve",
    "n_mpjpe",
    "p_mpjpe",
    "DirectionNet",
    "JointComposer",
    "LengthNet",
    "LiftingModel",
    "ModelConfig",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "JOINT_NAMES",
    "PARENTS",
    "VIRTUAL_CONFIG_NAMES",
    "BoneSet",
    "PathSet",
    "SkeletonTopology",
    "VirtualBoneConfig",
    "bone_lengths_from_joints",
    "default_topology",
    "enumerate_paths",
    "load_skeleton",
    "make_virtual_config",
    "save_skeleton",
    "TrainingConfig",
    "TrainResult",
    "evaluate_model",
    "gradient_check",
    "learning_rate_at",
    "predict_sequence",
    "run_ablation",
    "train",
]
