"""Plain-text parameter serialization, round-trip exact for float64.

One record per tensor: a header line ``tensor <layer_id> <name> <rank> <dims>``
followed by one line of whitespace-separated decimal values written with 17
significant digits, which is lossless for 64-bit floats.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .params import ParameterSet

MAGIC = "fedmix-params v1"


def dumps_params(params: ParameterSet) -> str:
    out = io.StringIO()
    out.write(MAGIC + "\n")
    for layer_id, name, tensor in params.items():
        arr = np.asarray(tensor, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        out.write(f"tensor {layer_id} {name} {arr.ndim}{' ' + dims if dims else ''}\n")
        out.write(" ".join(format(x, ".17e") for x in arr.ravel()) + "\n")
    return out.getvalue()


def loads_params(text: str) -> ParameterSet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError("not a fedmix parameter file (bad magic line)")
    params = ParameterSet()
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        fields = line.split()
        if fields[0] != "tensor" or len(fields) < 4:
            raise ValueError(f"malformed tensor header: {line!r}")
        layer_id, name, rank = int(fields[1]), fields[2], int(fields[3])
        shape = tuple(int(d) for d in fields[4:4 + rank])
        if len(shape) != rank:
            raise ValueError(f"tensor header dims do not match rank: {line!r}")
        count = int(np.prod(shape)) if shape else 1
        if i >= len(lines):
            raise ValueError(f"missing values for tensor {name!r} in layer {layer_id}")
        values = np.array([float(tok) for tok in lines[i].split()], dtype=np.float64)
        i += 1
        if values.size != count:
            raise ValueError(
                f"tensor {name!r} in layer {layer_id}: expected {count} values, "
                f"got {values.size}")
        params[layer_id, name] = values.reshape(shape)
    return params


def save_params(path, params: ParameterSet) -> None:
    Path(path).write_text(dumps_params(params))


def load_params(path) -> ParameterSet:
    return loads_params(Path(path).read_text())
