"""Desk-scale smoke simulation and learned keyframe interpolation."""

from .autodiff import AdamState, Tape, Tensor, adam_step, backward
from .formats import (
    CheckpointData,
    FgsField,
    FgsSequence,
    FormatError,
    IntegrityError,
    VersionError,
    check_manifest,
    load_checkpoint,
    read_fgs,
    read_manifest,
    save_checkpoint,
    sequence_to_fgs,
    write_fgs,
    write_manifest,
)
from .grid import (
    BOOLEAN_OPS,
    DEFAULT_RHO_MAX,
    Field2,
    GridDims,
    MacVelocity2,
    NormStats,
    boolean_combine,
    denormalize,
    denormalize_array,
    divergence,
    normalize,
    normalize_array,
    sample_bilinear,
    sample_velocity,
)
from .interpolate import (
    FrameSequence,
    InterpRequest,
    VariantTree,
    baseline_linear,
    baseline_readvect,
    build_variant_tree,
    combine_keyframes,
    diverse_beam_search,
    interpolate,
    substep_times,
    top_k_sample,
)
from .metrics import eval_metrics
from .model import (
    LatentState,
    ModelConfig,
    encode,
    init_params,
    predict_density,
    variant_logits,
)
from .rng import SplitMix64
from .solver import (
    Emitter,
    Obstacle,
    SceneConfig,
    SimSequence,
    SimState,
    advect_semi_lagrangian,
    advect_velocity,
    apply_buoyancy,
    generate_scenario,
    initial_state,
    project,
    step,
)
from .tokenizer import (
    EQUATION_STRING,
    VOCAB,
    SceneConstants,
    TokenSequence,
    build_token_sequence,
    detokenize,
    time_encoding,
    tokenize_equation,
)
from .training import (
    FieldStats,
    LossConfig,
    Scenario,
    TrainConfig,
    TrainResult,
    advection_consistency,
    huber_loss,
    make_dataset,
    random_scene,
    split_dataset,
    train,
    volume_penalty,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BOOLEAN_OPS",
    "CheckpointData",
    "DEFAULT_RHO_MAX",
    "EQUATION_STRING",
    "Emitter",
    "Field2",
    "FieldStats",
    "FgsField",
    "FgsSequence",
    "FormatError",
    "FrameSequence",
    "GridDims",
    "IntegrityError",
    "InterpRequest",
    "LatentState",
    "LossConfig",
    "MacVelocity2",
    "ModelConfig",
    "NormStats",
    "Obstacle",
    "SceneConfig",
    "SceneConstants",
    "Scenario",
    "SimSequence",
    "SimState",
    "SplitMix64",
    "Tape",
    "Tensor",
    "TokenSequence",
    "TrainConfig",
    "TrainResult",
    "VOCAB",
    "VariantTree",
    "VersionError",
    "adam_step",
    "advect_semi_lagrangian",
    "advect_velocity",
    "advection_consistency",
    "apply_buoyancy",
    "backward",
    "baseline_linear",
    "baseline_readvect",
    "boolean_combine",
    "build_token_sequence",
    "build_variant_tree",
    "check_manifest",
    "combine_keyframes",
    "denormalize",
    "denormalize_array",
    "detokenize",
    "diverse_beam_search",
    "divergence",
    "encode",
    "eval_metrics",
    "generate_scenario",
    "huber_loss",
    "init_params",
    "initial_state",
    "interpolate",
    "load_checkpoint",
    "make_dataset",
    "normalize",
    "normalize_array",
    "predict_density",
    "project",
    "random_scene",
    "read_fgs",
    "read_manifest",
    "sample_bilinear",
    "sample_velocity",
    "save_checkpoint",
    "sequence_to_fgs",
    "split_dataset",
    "step",
    "substep_times",
    "time_encoding",
    "tokenize_equation",
    "top_k_sample",
    "train",
    "variant_logits",
    "volume_penalty",
    "write_fgs",
    "write_manifest",
]
