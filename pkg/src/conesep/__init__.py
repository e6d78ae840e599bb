"""Robust noisy-triplet learning: fidelity partitioning, negative boundaries, OT unlearning."""

__version__ = "0.1.0"

from .data import GenConfig, TripletDataset, generate
from .gfq import BoundaryEstimate, FidelityPartition, estimate_boundary, fidelity, partition
from .losses import LossValue, inter_loss, intra_loss, robust_contrastive, warmup_objective
from .model import ForwardOutputs, ModelParams, forward, grad_check, init_params, optimizer_step
from .numeric import Rng, cosine_sim_matrix, row_softmax, sample_matrix
from .train import MetricLog, TrainConfig, ablate, train
from .unlearn import (
    MaskedCost,
    SoftLabel,
    TransportPlan,
    build_cost_and_mask,
    final_objective,
    hard_label,
    sinkhorn,
    soft_label,
    unlearn_loss,
)

__all__ = [
    "BoundaryEstimate",
    "FidelityPartition",
    "ForwardOutputs",
    "GenConfig",
    "LossValue",
    "MaskedCost",
    "MetricLog",
    "ModelParams",
    "Rng",
    "SoftLabel",
    "TrainConfig",
    "TransportPlan",
    "TripletDataset",
    "ablate",
    "build_cost_and_mask",
    "cosine_sim_matrix",
    "estimate_boundary",
    "fidelity",
    "final_objective",
    "forward",
    "generate",
    "grad_check",
    "hard_label",
    "init_params",
    "inter_loss",
    "intra_loss",
    "optimizer_step",
    "partition",
    "robust_contrastive",
    "row_softmax",
    "sample_matrix",
    "sinkhorn",
    "soft_label",
    "train",
    "unlearn_loss",
    "warmup_objective",
]
