"""Forward passes for the fixed agent-network shapes.

All functions accept a single vector ``(dim,)`` or a batch ``(batch, dim)``
and work identically on plain arrays or autodiff node views.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .params import LayerSpec, ParameterSet, validate_arch


def _check_last_dim(x, expected: int, layer_id: int, what: str) -> None:
    got = ad.value_of(x).shape[-1]
    if got != expected:
        raise ValueError(
            f"layer {layer_id}: {what} has length {got}, expected {expected}")


def dense_forward(x, layer: LayerSpec, params: ParameterSet):
    """activation(W x + b) for one dense layer."""
    _check_last_dim(x, layer.in_dim, layer.layer_id, "input")
    y = ad.linear(x, params[layer.layer_id, "weight"], params[layer.layer_id, "bias"])
    if layer.activation == "relu":
        return ad.relu(y)
    if layer.activation == "tanh":
        return ad.tanh(y)
    return y


def recurrent_step(x, h, layer: LayerSpec, params: ParameterSet):
    """One gated-recurrence step.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    cand = tanh(W x + U (r*h) + b)
    h' = (1 - z)*h + z*cand
    """
    _check_last_dim(x, layer.in_dim, layer.layer_id, "input")
    _check_last_dim(h, layer.out_dim, layer.layer_id, "hidden state")
    lid = layer.layer_id
    return ad.gru_cell(
        x, h,
        params[lid, "w_update"], params[lid, "u_update"], params[lid, "b_update"],
        params[lid, "w_reset"], params[lid, "u_reset"], params[lid, "b_reset"],
        params[lid, "w_cand"], params[lid, "u_cand"], params[lid, "b_cand"])


def zero_hidden(arch: list[LayerSpec], like=None) -> np.ndarray:
    """All-zero hidden state, batched to match ``like`` if it is 2-d."""
    hid = next((layer.out_dim for layer in arch if layer.kind == "recurrent"), 0)
    if hid == 0:
        return np.zeros(0)
    if like is not None and ad.value_of(like).ndim == 2:
        return np.zeros((ad.value_of(like).shape[0], hid))
    return np.zeros(hid)


def network_step(x, arch: list[LayerSpec], params: ParameterSet, h):
    """One time step through the whole stack; returns (output, new hidden)."""
    h_next = h
    for layer in arch:
        if layer.kind == "recurrent":
            h_next = recurrent_step(x, h, layer, params)
            x = h_next
        else:
            x = dense_forward(x, layer, params)
    return x, h_next


def network_forward(obs_seq, arch: list[LayerSpec], params: ParameterSet, h0=None):
    """Run a whole observation sequence; returns (per-step outputs, final hidden).

    The hidden state threads through the recurrent layer across steps and
    starts at zeros when ``h0`` is not given.
    """
    validate_arch(arch)
    obs_seq = list(obs_seq)
    if not obs_seq:
        raise ValueError("network_forward needs a non-empty observation sequence")
    h = zero_hidden(arch, like=obs_seq[0]) if h0 is None else h0
    outputs = []
    for x in obs_seq:
        y, h = network_step(x, arch, params, h)
        outputs.append(y)
    return outputs, h
