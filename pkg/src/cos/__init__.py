"""Multi-scale windowed cross-attention token bridge.

Turns a square visual feature map into an ordered coarse-to-fine token
sequence via per-scale windowed resamplers, scales the token budget after
pre-training by migrating parameters onto larger configs, and prices
pre-training runs with an affine cost model.
"""

from cos.assembly import (
    BridgeParams,
    ConfigError,
    CosConfig,
    ScaleSpec,
    TokenSequence,
    Violation,
    check_config,
    forward,
    init_bridge,
    token_count,
    validate_config,
)
from cos.checkpoint import CheckpointError, load_bridge, load_tensors, save_bridge, save_tensors
from cos.configs import (
    OptimizerConfig,
    RunConfig,
    SchemaError,
    load_cos_config,
    load_run_config,
)
from cos.cost_model import (
    CostEstimate,
    CostFit,
    CostParams,
    fit_cost_params,
    step_time,
    walltime,
)
from cos.numerics import NonFiniteError, ShapeError, Tensor, grad_check
from cos.resampler import LevelStack, ResamplerParams, record_attention
from cos.scaling import (
    ScaleMapEntry,
    ScalePlan,
    UnmappableScaleError,
    functional_preservation_check,
    migrate_params,
    plan_scale,
)
from cos.training import (
    TrainingDivergedError,
    TrainReport,
    pipeline_pretrain_scale_finetune,
    train_toy,
)
from cos.windowing import DivisibilityError, WindowedFeatures, partition, unpartition

__all__ = [
    "BridgeParams",
    "CheckpointError",
    "ConfigError",
    "CosConfig",
    "CostEstimate",
    "CostFit",
    "CostParams",
    "DivisibilityError",
    "LevelStack",
    "NonFiniteError",
    "OptimizerConfig",
    "ResamplerParams",
    "RunConfig",
    "ScaleMapEntry",
    "ScalePlan",
    "ScaleSpec",
    "SchemaError",
    "ShapeError",
    "Tensor",
    "TokenSequence",
    "TrainReport",
    "TrainingDivergedError",
    "UnmappableScaleError",
    "Violation",
    "WindowedFeatures",
    "check_config",
    "fit_cost_params",
    "forward",
    "functional_preservation_check",
    "grad_check",
    "init_bridge",
    "load_bridge",
    "load_cos_config",
    "load_run_config",
    "load_tensors",
    "migrate_params",
    "partition",
    "pipeline_pretrain_scale_finetune",
    "plan_scale",
    "record_attention",
    "save_bridge",
    "save_tensors",
    "step_time",
    "token_count",
    "train_toy",
    "unpartition",
    "validate_config",
    "walltime",
]
