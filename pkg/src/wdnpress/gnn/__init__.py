"""Residual graph-attention surrogate with hand-written gradients."""

from .checkpoint import load_weights, save_weights
from .masking import MaskedSample, make_batch, mask_sample, n_sensors_for
from .model import (
    AttentionTrace,
    GraphPlan,
    ModelConfig,
    ModelWeights,
    backward,
    forward,
    gat_layer_forward,
    gatres_forward,
    init_weights,
    masked_loss,
)

__all__ = [
    "AttentionTrace",
    "GraphPlan",
    "MaskedSample",
    "ModelConfig",
    "ModelWeights",
    "backward",
    "forward",
    "gat_layer_forward",
    "gatres_forward",
    "init_weights",
    "load_weights",
    "make_batch",
    "mask_sample",
    "masked_loss",
    "n_sensors_for",
    "save_weights",
]
