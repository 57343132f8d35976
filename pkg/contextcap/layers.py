# Copyright 2026 The ContextCap Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""The layer vocabulary of the caption decoder.

Each layer takes the :class:`ParameterSet` it draws weights from and a
dotted ``name``; weights are registered under ``<name>.<weight>`` on first
use, so a layer's identity is its path.
"""
from typing import Optional, Tuple, Union

import numpy as np

from contextcap.exceptions import DegenerateMaskError, DimensionError
from contextcap.parameters import ParameterSet
from contextcap.tensor import (
    Tensor,
    add,
    concat_cols,
    index_rows,
    layer_norm,
    masked_softmax,
    matmul,
    mul,
    relu,
    scale,
    slice_cols,
    softmax_cross_entropy,
    transpose,
)

DEFAULT_HEADS = 4
DEFAULT_EXPANSION = 4
LAYER_NORM_EPS = 1e-5

__all__ = [
    "linear",
    "attention",
    "add_norm",
    "mlp",
    "ffn",
    "embedding",
    "softmax_cross_entropy",
    "causal_mask",
]


def _require_matrix(x: Tensor, name: str) -> None:
    if x.ndim != 2:
        raise DimensionError(name, f"expected a [rows, features] tensor, got shape {x.shape}")


def linear(params: ParameterSet, x: Tensor, name: str, d_out: int) -> Tensor:
    """y = xW + b."""
    _require_matrix(x, name)
    d_in = x.shape[1]
    weight_name = f"{name}.weight"
    if weight_name in params and params[weight_name].shape[0] != d_in:
        raise DimensionError(
            name, f"expected input dim {params[weight_name].shape[0]}, got {d_in}"
        )
    weight = params.get(weight_name, (d_in, d_out), bound=1.0 / np.sqrt(d_in))
    bias = params.get(f"{name}.bias", (d_out,), init="zeros")
    return add(matmul(x, weight), bias)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def attention(
    params: ParameterSet,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    name: str,
    heads: int = DEFAULT_HEADS,
    mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, list]]:
    """Multi-head scaled dot-product attention.

    ``mask[i, j]`` is True when query ``i`` may attend to key ``j``. With
    ``return_weights`` the per-head softmax matrices are returned too.
    """
    for tensor in (q, k, v):
        _require_matrix(tensor, name)
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise DimensionError(name, f"q/k/v widths differ: {q.shape[1]}, {k.shape[1]}, {v.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(name, f"{k.shape[0]} keys but {v.shape[0]} values")
    if k.shape[0] == 0:
        raise DegenerateMaskError(f"{name}: no keys to attend to")
    if d % heads:
        raise DimensionError(name, f"model dim {d} is not divisible by {heads} heads")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[0], k.shape[0]):
            raise DimensionError(name, f"mask shape {mask.shape} != {(q.shape[0], k.shape[0])}")

    queries = linear(params, q, f"{name}.q_proj", d)
    keys = linear(params, k, f"{name}.k_proj", d)
    values = linear(params, v, f"{name}.v_proj", d)
    head_dim = d // heads
    factor = 1.0 / np.sqrt(head_dim)

    outputs = []
    weights = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = scale(matmul(slice_cols(queries, lo, hi), transpose(slice_cols(keys, lo, hi))), factor)
        probs = masked_softmax(scores, mask)
        weights.append(probs)
        outputs.append(matmul(probs, slice_cols(values, lo, hi)))
    merged = outputs[0] if heads == 1 else concat_cols(outputs)
    out = linear(params, merged, f"{name}.out_proj", d)
    if return_weights:
        return out, weights
    return out


def add_norm(params: ParameterSet, a: Tensor, b: Tensor, name: str, eps: float = LAYER_NORM_EPS) -> Tensor:
    """LayerNorm(a + b) with a learned per-feature gain and bias."""
    if a.shape != b.shape:
        raise DimensionError(name, f"cannot add shapes {a.shape} and {b.shape}")
    _require_matrix(a, name)
    d = a.shape[1]
    gain = params.get(f"{name}.gain", (d,), init="ones")
    bias = params.get(f"{name}.bias", (d,), init="zeros")
    return add(mul(layer_norm(add(a, b), eps), gain), bias)


def mlp(
    params: ParameterSet,
    x: Tensor,
    name: str,
    expansion: int = DEFAULT_EXPANSION,
    d_out: Optional[int] = None,
) -> Tensor:
    _require_matrix(x, name)
    d_in = x.shape[1]
    hidden = relu(linear(params, x, f"{name}.fc1", expansion * d_in))
    return linear(params, hidden, f"{name}.fc2", d_out or d_in)


def ffn(params: ParameterSet, x: Tensor, name: str, expansion: int = DEFAULT_EXPANSION) -> Tensor:
    # shape-preserving
    return mlp(params, x, name, expansion=expansion)


def embedding(params: ParameterSet, ids, name: str, rows: int, dim: int) -> Tensor:
    """Row lookup into a [rows, dim] table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise DimensionError(name, f"index out of range for a table of {rows} rows")
    table = params.get(f"{name}.table", (rows, dim), bound=1.0 / np.sqrt(dim))
    return index_rows(table, ids)
