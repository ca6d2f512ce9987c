"""Minimal differentiable network toolkit sized for small Q-networks."""

from . import autodiff
from .autodiff import Node, backward
from .checkpoint import dumps_params, load_params, loads_params, save_params
from .network import (
    dense_forward,
    network_forward,
    network_step,
    recurrent_step,
    zero_hidden,
)
from .optim import (
    OptimizerState,
    adam_update,
    clip_global_norm,
    compute_gradients,
    global_norm,
    init_optimizer_state,
    value_and_grads,
)
from .params import (
    LayerSpec,
    ParameterSet,
    init_params,
    orthogonal_init,
    validate_arch,
)

__all__ = [
    "Node", "backward", "autodiff",
    "LayerSpec", "ParameterSet", "init_params", "orthogonal_init", "validate_arch",
    "dense_forward", "recurrent_step", "network_step", "network_forward", "zero_hidden",
    "OptimizerState", "init_optimizer_state", "adam_update", "clip_global_norm",
    "global_norm", "compute_gradients", "value_and_grads",
    "save_params", "load_params", "dumps_params", "loads_params",
]
