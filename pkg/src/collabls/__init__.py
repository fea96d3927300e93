"""Collaborative least squares for agents that observe different feature subsets."""

from .agent import LocalSummary, build_summary, local_ols, residual_risk
from .aggregation import (
    CollabResult,
    collab_run,
    estimate_q,
    gaussian_weights,
    general_weights_collab,
    optimal_weights_general,
    werm_aggregate,
)
from .data_gen import AgentDataset, mcar_masks, sample_dataset, synth_covariance
from .errors import (
    CollabError,
    ConfigError,
    DimensionError,
    DivergedError,
    EmptyComplement,
    RowRejected,
    SingularBlock,
    UnidentifiableModel,
    ZeroRiskError,
)
from .model_core import (
    ModelSpec,
    ViewMask,
    full_feature_risk,
    missing_feature_risk,
    psd_geq,
    psd_order,
    schur_complement,
    t_operator,
)
from .rng import RngSeed

__version__ = "0.1.0"

__all__ = [
    "AgentDataset",
    "build_summary",
    "collab_run",
    "CollabError",
    "CollabResult",
    "ConfigError",
    "DimensionError",
    "DivergedError",
    "EmptyComplement",
    "estimate_q",
    "full_feature_risk",
    "gaussian_weights",
    "general_weights_collab",
    "local_ols",
    "LocalSummary",
    "mcar_masks",
    "missing_feature_risk",
    "ModelSpec",
    "optimal_weights_general",
    "psd_geq",
    "psd_order",
    "residual_risk",
    "RngSeed",
    "RowRejected",
    "sample_dataset",
    "schur_complement",
    "SingularBlock",
    "synth_covariance",
    "t_operator",
    "UnidentifiableModel",
    "ViewMask",
    "werm_aggregate",
    "ZeroRiskError",
]
