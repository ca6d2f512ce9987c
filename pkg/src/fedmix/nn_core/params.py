"""Parameter containers, layer descriptions and initialization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

ACTIVATIONS = ("linear", "relu", "tanh")
LAYER_KINDS = ("dense", "recurrent")

DENSE_TENSORS = ("weight", "bias")
# Gate naming: update gate z, reset gate r, candidate state.
RECURRENT_TENSORS = (
    "w_update", "u_update", "b_update",
    "w_reset", "u_reset", "b_reset",
    "w_cand", "u_cand", "b_cand",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of an agent network: index, kind, dims, activation."""

    layer_id: int
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"layer {self.layer_id}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"layer {self.layer_id}: unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError(f"layer {self.layer_id}: dims must be positive")


def validate_arch(arch: list[LayerSpec]) -> None:
    """Check layer ids are 0..n-1, dims chain, and at most one recurrent layer."""
    if not arch:
        raise ValueError("architecture must have at least one layer")
    for i, layer in enumerate(arch):
        if layer.layer_id != i:
            raise ValueError(f"layer ids must be consecutive from 0, got {layer.layer_id} at {i}")
        if i > 0 and layer.in_dim != arch[i - 1].out_dim:
            raise ValueError(
                f"layer {layer.layer_id}: in_dim {layer.in_dim} does not match "
                f"previous out_dim {arch[i - 1].out_dim}")
    if sum(1 for layer in arch if layer.kind == "recurrent") > 1:
        raise ValueError("at most one recurrent layer per network")


class ParameterSet:
    """Ordered, layer-indexed collection of named tensors.

    Iteration is always ascending layer id, then sorted tensor name; parameter
    aggregation across agents relies on that order being identical everywhere.
    Values are float64 ndarrays, except in "node views" used for gradient
    computation, where they are autodiff Nodes of the same shapes.
    """

    def __init__(self):
        self._layers: dict[int, dict[str, np.ndarray]] = {}

    def __setitem__(self, key, tensor):
        layer_id, name = key
        self._layers.setdefault(int(layer_id), {})[name] = tensor

    def __getitem__(self, key):
        layer_id, name = key
        try:
            return self._layers[int(layer_id)][name]
        except KeyError:
            raise KeyError(f"no tensor {name!r} in layer {layer_id}") from None

    def __contains__(self, key) -> bool:
        layer_id, name = key
        return int(layer_id) in self._layers and name in self._layers[int(layer_id)]

    def layer_ids(self) -> list[int]:
        return sorted(self._layers)

    def tensor_names(self, layer_id: int) -> list[str]:
        return sorted(self._layers[int(layer_id)])

    def items(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for layer_id in self.layer_ids():
            layer = self._layers[layer_id]
            for name in sorted(layer):
                yield layer_id, name, layer[name]

    def map_values(self, fn: Callable) -> "ParameterSet":
        out = ParameterSet()
        for layer_id, name, tensor in self.items():
            out[layer_id, name] = fn(tensor)
        return out

    def copy(self) -> "ParameterSet":
        return self.map_values(lambda t: np.array(t, dtype=np.float64))

    def zeros_like(self) -> "ParameterSet":
        return self.map_values(lambda t: np.zeros_like(np.asarray(t), dtype=np.float64))

    def keys(self) -> list[tuple[int, str]]:
        return [(lid, name) for lid, name, _ in self.items()]

    def num_params(self) -> int:
        return sum(int(np.asarray(t).size) for _, _, t in self.items())

    def same_shapes(self, other: "ParameterSet") -> bool:
        mine = [(lid, name, np.asarray(t).shape) for lid, name, t in self.items()]
        theirs = [(lid, name, np.asarray(t).shape) for lid, name, t in other.items()]
        return mine == theirs

    def l2_distance(self, other: "ParameterSet", layer_ids=None) -> float:
        total = 0.0
        for layer_id, name, tensor in self.items():
            if layer_ids is not None and layer_id not in layer_ids:
                continue
            diff = np.asarray(tensor) - np.asarray(other[layer_id, name])
            total += float(np.sum(diff * diff))
        return float(np.sqrt(total))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        if self.keys() != other.keys():
            return False
        return all(np.array_equal(t, other[lid, name]) for lid, name, t in self.items())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ParameterSet(layers={self.layer_ids()}, n={self.num_params()})"


def orthogonal_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Matrix whose rows (or columns, whichever are fewer) are orthonormal.

    Deterministic given the generator state; QR of a standard normal draw with
    the sign of R's diagonal folded in so the distribution is uniform over the
    orthogonal group.
    """
    if len(shape) != 2:
        raise ValueError(f"orthogonal_init needs a 2-d shape, got {tuple(shape)}")
    rows, cols = int(shape[0]), int(shape[1])
    a = rng.standard_normal((rows, cols))
    transposed = rows < cols
    if transposed:
        a = a.T
    q, r = np.linalg.qr(a)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    if transposed:
        q = q.T
    return np.ascontiguousarray(q, dtype=np.float64)


def _scaled_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[1])
    return rng.uniform(-bound, bound, size=shape)


def init_params(arch: list[LayerSpec], rng: np.random.Generator,
                orthogonal: bool = True) -> ParameterSet:
    """Weight matrices orthogonal (or fan-in-scaled uniform), zero biases.

    Draw order is fixed (layers ascending, gates update/reset/cand) so equal
    generator states give bit-identical parameters.
    """
    validate_arch(arch)
    weight_init = orthogonal_init if orthogonal else _scaled_uniform
    params = ParameterSet()
    for layer in arch:
        if layer.kind == "dense":
            params[layer.layer_id, "weight"] = weight_init(
                (layer.out_dim, layer.in_dim), rng)
            params[layer.layer_id, "bias"] = np.zeros(layer.out_dim)
        else:
            for gate in ("update", "reset", "cand"):
                params[layer.layer_id, f"w_{gate}"] = weight_init(
                    (layer.out_dim, layer.in_dim), rng)
                params[layer.layer_id, f"u_{gate}"] = weight_init(
                    (layer.out_dim, layer.out_dim), rng)
                params[layer.layer_id, f"b_{gate}"] = np.zeros(layer.out_dim)
    return params
