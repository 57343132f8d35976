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
"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (entered with
``with Tape() as tape:``) when at least one input requires a gradient.
Outside a tape nothing is recorded, which is how inference runs: the model
is read-only and any number of threads may decode concurrently.
"""
import contextvars
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger

from contextcap.exceptions import (
    DegenerateMaskError,
    DimensionError,
    TapeStateError,
    TargetRangeError,
)

logger = AdapterLogger("ContextCap")

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: "contextvars.ContextVar[Optional[Tape]]" = contextvars.ContextVar(
    "contextcap_active_tape", default=None
)
_RELU_PATTERNS: "contextvars.ContextVar[Optional[List[np.ndarray]]]" = contextvars.ContextVar(
    "contextcap_relu_patterns", default=None
)


class Tensor:
    """A float64 array plus its gradient-tape bookkeeping.

    ``node_id`` is the handle of the tape node that produced the tensor, or
    ``None`` for leaves (parameters and constants).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.tape: Optional["Tape"] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return reduce_sum(self)

    def mean(self) -> "Tensor":
        return reduce_mean(self)


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents: Tuple[Tensor, ...], backward: BackwardFn):
        self.parents = parents
        self.backward = backward


class Tape:
    """Records operations in execution order; replayed in reverse by backward()."""

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._consumed = False
        self._tokens: List[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: BackwardFn) -> None:
        if self._consumed:
            raise TapeStateError("tape was consumed by backward(); call reset() before recording")
        out.node_id = len(self._nodes)
        out.tape = self
        out.requires_grad = True
        self._nodes.append(_Node(parents, backward))

    def reset(self) -> None:
        self._nodes = []
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self._consumed:
            raise TapeStateError("backward() called twice on the same tape without reset()")
        if loss.size != 1:
            raise DimensionError("backward", f"loss must be a scalar, got shape {loss.shape}")
        if loss.tape is not self or loss.node_id is None:
            raise TapeStateError("loss was not produced by operations on this tape")

        grads = {loss.node_id: np.ones_like(loss.data)}
        for node_id in range(loss.node_id, -1, -1):
            grad = grads.pop(node_id, None)
            if grad is None:
                continue
            node = self._nodes[node_id]
            for parent, parent_grad in zip(node.parents, node.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.tape is self and parent.node_id is not None:
                    if parent.node_id in grads:
                        grads[parent.node_id] = grads[parent.node_id] + parent_grad
                    else:
                        grads[parent.node_id] = parent_grad
                elif parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=DTYPE)
                else:
                    parent.grad = parent.grad + parent_grad
        self._consumed = True
        logger.debug(f"backward replayed {len(self._nodes)} tape nodes")


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


class no_grad:
    """Suspend recording: operations inside the block never reach the active tape."""

    def __enter__(self) -> "no_grad":
        self._token = _ACTIVE_TAPE.set(None)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)


class relu_patterns:
    """Collect the active-unit mask of every ReLU evaluated inside the block, in order."""

    def __enter__(self) -> List[np.ndarray]:
        self.masks: List[np.ndarray] = []
        self._token = _RELU_PATTERNS.set(self.masks)
        return self.masks

    def __exit__(self, *exc_info) -> None:
        _RELU_PATTERNS.reset(self._token)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation on the tape that produced ``loss``."""
    if loss.tape is None:
        raise TapeStateError("loss was produced outside of any tape")
    loss.tape.backward(loss)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", f"cannot multiply {a.shape} by {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _emit(a.data.T, (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    patterns = _RELU_PATTERNS.get()
    if patterns is not None:
        patterns.append(keep)
    return _emit(np.where(keep, a.data, 0.0), (a,), lambda g: (np.where(keep, g, 0.0),))


def reduce_sum(a: Tensor) -> Tensor:
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def reduce_mean(a: Tensor) -> Tensor:
    n = a.size
    return _emit(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def index_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate their gradients."""
    index = np.asarray(index, dtype=np.int64)

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _emit(a.data[index], (a,), _backward)


def broadcast_rows(a: Tensor, rows: int) -> Tensor:
    """Repeat a [1, d] tensor to [rows, d]."""
    if a.ndim != 2 or a.shape[0] != 1:
        raise DimensionError("broadcast_rows", f"expected shape [1, d], got {a.shape}")
    return _emit(
        np.repeat(a.data, rows, axis=0), (a,), lambda g: (g.sum(axis=0, keepdims=True),)
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def _backward(g):
        grad = np.zeros_like(a.data)
        grad[:, start:stop] = g
        return (grad,)

    return _emit(a.data[:, start:stop], (a,), _backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def _backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), _backward)


def stack_scalars(parts: Sequence[Tensor]) -> Tensor:
    """Pack scalar tensors into a 1-D tensor."""

    def _backward(g):
        return tuple(np.asarray(g[i]).reshape(p.shape) for i, p in enumerate(parts))

    return _emit(np.array([p.item() for p in parts], dtype=DTYPE), tuple(parts), _backward)


def masked_softmax(scores: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax; ``mask`` is boolean with True marking usable keys."""
    x = scores.data
    if mask is not None:
        if mask.shape != x.shape:
            raise DimensionError("softmax", f"mask shape {mask.shape} != scores shape {x.shape}")
        empty = ~mask.any(axis=-1)
        if empty.any():
            row = int(np.argmax(empty))
            raise DegenerateMaskError(f"query row {row} has no unmasked key")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    probs = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)

    return _emit(probs, (scores,), _backward)


def log_softmax(logits: Tensor) -> Tensor:
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (logits,), _backward)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Gather individual entries ``a[rows[i], cols[i]]`` into a 1-D tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (rows, cols), g)
        return (grad,)

    return _emit(a.data[rows, cols], (a,), _backward)


def layer_norm(x: Tensor, eps: float) -> Tensor:
    """Normalize each row to zero mean and unit variance (no affine part)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    n = x.shape[-1]

    def _backward(g):
        sum_g = g.sum(axis=-1, keepdims=True)
        sum_gx = (g * xhat).sum(axis=-1, keepdims=True)
        return (inv_std / n * (n * g - sum_g - xhat * sum_gx),)

    return _emit(xhat, (x,), _backward)


def softmax_cross_entropy(logits: Tensor, targets, ignore_id: Optional[int] = None) -> Tensor:
    """Mean of -log softmax(logits)[t, targets[t]] over non-ignored rows."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(
            "softmax_cross_entropy",
            f"logits {logits.shape} do not line up with targets {targets.shape}",
        )
    vocab = logits.shape[1]
    keep = np.ones(targets.shape, dtype=bool) if ignore_id is None else targets != ignore_id
    bad = keep & ((targets < 0) | (targets >= vocab))
    if bad.any():
        raise TargetRangeError(
            f"target id {int(targets[bad][0])} outside vocabulary of size {vocab}"
        )
    count = int(keep.sum())
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.nonzero(keep)[0]
    if count == 0:
        loss = 0.0
    else:
        loss = -log_probs[rows, targets[rows]].sum() / count

    def _backward(g):
        grad = np.zeros_like(x)
        if count:
            grad[rows] = np.exp(log_probs[rows])
            grad[rows, targets[rows]] -= 1.0
            grad *= float(g) / count
        return (grad,)

    return _emit(np.asarray(loss, dtype=DTYPE), (logits,), _backward)
