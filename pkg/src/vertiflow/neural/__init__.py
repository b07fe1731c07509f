"""Minimal dense-tensor autodiff kernel and the policy network built on it."""

from .nets import (
    CHECKPOINT_VERSION,
    ContextEmbedding,
    NetConfig,
    PolicyNetwork,
    TemporalTransformer,
    config_hash,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tensor, concat, grad_enabled, no_grad

__all__ = [
    "CHECKPOINT_VERSION",
    "ContextEmbedding",
    "NetConfig",
    "PolicyNetwork",
    "TemporalTransformer",
    "Tensor",
    "concat",
    "config_hash",
    "grad_enabled",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
