"""Adam, gradient clipping and gradient extraction.

Everything is pure: optimizer state goes in and comes out explicitly, and the
returned ParameterSets are fresh arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .params import ParameterSet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """Per-parameter first/second moment accumulators and the step counter.

    Moments are stored flat (one buffer each) for update speed; the ``m`` and
    ``v`` properties expose them as ParameterSets mirroring the parameters.
    """

    m_flat: np.ndarray
    v_flat: np.ndarray
    template: ParameterSet
    step: int = 0

    @property
    def m(self) -> ParameterSet:
        return unflatten_params(self.m_flat, self.template)

    @property
    def v(self) -> ParameterSet:
        return unflatten_params(self.v_flat, self.template)


def init_optimizer_state(params: ParameterSet) -> OptimizerState:
    n = sum(int(np.asarray(t).size) for _, _, t in params.items())
    return OptimizerState(m_flat=np.zeros(n), v_flat=np.zeros(n),
                          template=params, step=0)


def flatten_params(params: ParameterSet) -> np.ndarray:
    """All tensors concatenated in canonical iteration order."""
    return np.concatenate([np.asarray(t).ravel() for _, _, t in params.items()])


def unflatten_params(vec: np.ndarray, template: ParameterSet) -> ParameterSet:
    """Rebuild a ParameterSet shaped like ``template`` from a flat vector.

    Tensors are reshaped views into ``vec``; parameter updates are pure
    everywhere, so sharing the buffer is safe.
    """
    out = ParameterSet()
    offset = 0
    for layer_id, name, t in template.items():
        shape = np.asarray(t).shape
        size = int(np.prod(shape)) if shape else 1
        out[layer_id, name] = vec[offset:offset + size].reshape(shape)
        offset += size
    if offset != vec.size:
        raise ValueError("flat vector length does not match template")
    return out


def adam_update(params: ParameterSet, grads: ParameterSet, state: OptimizerState,
                lr: float) -> tuple[ParameterSet, OptimizerState]:
    """One bias-corrected Adam step; returns (new params, new state).

    The math runs on flat buffers (one numpy pass over all parameters) and the
    returned ParameterSets are reshaped views over them.
    """
    if params.keys() != grads.keys():
        raise ValueError("parameter/gradient structure mismatch")
    for layer_id, name, p in params.items():
        if np.asarray(grads[layer_id, name]).shape != np.asarray(p).shape:
            raise ValueError(f"layer {layer_id}: gradient shape mismatch for {name!r}")
    t = state.step + 1
    p = flatten_params(params)
    g = flatten_params(grads)
    m = ADAM_BETA1 * state.m_flat + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v_flat + (1.0 - ADAM_BETA2) * (g * g)
    mhat = m / (1.0 - ADAM_BETA1 ** t)
    vhat = v / (1.0 - ADAM_BETA2 ** t)
    new_p = p - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    return (unflatten_params(new_p, params),
            OptimizerState(m_flat=m, v_flat=v, template=params, step=t))


def global_norm(grads: ParameterSet) -> float:
    flat = flatten_params(grads)
    return float(np.sqrt(flat @ flat))


def clip_global_norm(grads: ParameterSet, max_norm: float) -> ParameterSet:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    # The hair of slack keeps a second application an exact no-op.
    if norm <= max_norm * (1.0 + 1e-12):
        return grads
    scale = max_norm / norm
    return grads.map_values(lambda g: g * scale)


def compute_gradients(loss_fn: Callable, params: ParameterSet) -> ParameterSet:
    """Exact reverse-mode gradients of a scalar loss w.r.t. every parameter.

    ``loss_fn`` receives a node view of ``params`` (same structure, autodiff
    leaves as values) and must return the scalar loss built from autodiff ops.
    """
    _, grads = value_and_grads(lambda views: loss_fn(views["params"]),
                               {"params": params})
    return grads["params"]


def value_and_grads(loss_fn: Callable, groups: Mapping[str, ParameterSet]
                    ) -> tuple[float, dict[str, ParameterSet]]:
    """Evaluate ``loss_fn`` on node views of ``groups`` and backpropagate.

    ``loss_fn`` receives ``{name: node-view ParameterSet}`` and must return a
    scalar built from autodiff ops. Returns the loss value and gradient
    ParameterSets shaped like the inputs (zeros for unused tensors).
    """
    views = {name: ps.map_values(ad.Node) for name, ps in groups.items()}
    out = loss_fn(views)
    loss = float(ad.value_of(out))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss: {loss}")
    if isinstance(out, ad.Node):
        ad.backward(out)
    # A loss that never touched the parameters is a constant: zero gradients.
    grads = {
        name: view.map_values(
            lambda node: node.grad if node.grad is not None
            else np.zeros_like(node.value))
        for name, view in views.items()
    }
    return loss, grads
