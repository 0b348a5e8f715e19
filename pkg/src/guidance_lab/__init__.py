"""Desk-scale laboratory for negative guidance in diffusion and flow samplers."""

from .attention import (
    AttentionParams,
    GuidanceConfig,
    NagTrace,
    cross_attention,
    nag_attention,
    nag_extrapolate,
    nag_normalize,
    nag_refine,
    nasa_attention,
)
from .diffusion import (
    NoiseSchedule,
    SamplerState,
    cosine_schedule,
    ddpm_sample,
    flow_sample,
    forward_noise,
    reconstruct_x0,
    uniform_flow_grid,
)
from .experiments import ExperimentConfig, run_experiment, run_latency
from .guidance import (
    LatencyRecord,
    StepPlan,
    cfg_epsilon,
    cfg_x0,
    guidance_active,
    measure_step,
    plan_steps,
)
from .metrics import MetricsReport, preference_score, suppression_rate, w2_exact
from .toymodel import (
    DenoiserModel,
    SyntheticDataset,
    init_model,
    load_model,
    make_dataset,
    save_model,
    train,
)

__all__ = [
    "AttentionParams",
    "GuidanceConfig",
    "NagTrace",
    "cross_attention",
    "nag_attention",
    "nag_extrapolate",
    "nag_normalize",
    "nag_refine",
    "nasa_attention",
    "NoiseSchedule",
    "SamplerState",
    "cosine_schedule",
    "ddpm_sample",
    "flow_sample",
    "forward_noise",
    "reconstruct_x0",
    "uniform_flow_grid",
    "ExperimentConfig",
    "run_experiment",
    "run_latency",
    "LatencyRecord",
    "StepPlan",
    "cfg_epsilon",
    "cfg_x0",
    "guidance_active",
    "measure_step",
    "plan_steps",
    "MetricsReport",
    "preference_score",
    "suppression_rate",
    "w2_exact",
    "DenoiserModel",
    "SyntheticDataset",
    "init_model",
    "load_model",
    "make_dataset",
    "save_model",
    "train",
]

__version__ = "0.1.0"
