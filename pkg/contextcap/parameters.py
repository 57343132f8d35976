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
"""Named parameter storage, the Adam optimizer and the checkpoint codec."""
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger

from contextcap.exceptions import CheckpointError, CheckpointVersionError, DataIOError, DimensionError
from contextcap.tensor import DTYPE, Tensor

logger = AdapterLogger("ContextCap")

CHECKPOINT_VERSION = 1
_HEADER_LENGTH = struct.Struct("<Q")
DTYPE_BYTES = 8


class ParameterSet:
    """Map from dotted parameter path to leaf :class:`Tensor`.

    Parameters are created on first request, in request order, from one
    seeded RNG: two sets built with the same seed and the same request
    sequence are bit-identical. Freezing is per subtree: freezing
    ``"detector"`` freezes every ``"detector.*"`` parameter.
    """

    def __init__(self, seed: int = 0):
        self._params: Dict[str, Tensor] = {}
        self._frozen: Set[str] = set()
        self._rng = np.random.default_rng(seed)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    @property
    def frozen_subtrees(self) -> List[str]:
        return sorted(self._frozen)

    def get(
        self, name: str, shape: Tuple[int, ...], init: str = "uniform", bound: Optional[float] = None
    ) -> Tensor:
        shape = tuple(int(s) for s in shape)
        existing = self._params.get(name)
        if existing is not None:
            if existing.shape != shape:
                raise DimensionError(name, f"registered with shape {existing.shape}, requested {shape}")
            return existing
        if init == "uniform":
            limit = bound if bound is not None else 1.0 / np.sqrt(shape[0])
            data = self._rng.uniform(-limit, limit, size=shape)
        elif init == "zeros":
            data = np.zeros(shape, dtype=DTYPE)
        elif init == "ones":
            data = np.ones(shape, dtype=DTYPE)
        else:
            raise ValueError(f"unknown initializer {init!r} for {name}")
        tensor = Tensor(data, requires_grad=not self.is_frozen(name), name=name)
        self._params[name] = tensor
        return tensor

    def is_frozen(self, name: str) -> bool:
        return any(name == prefix or name.startswith(prefix + ".") for prefix in self._frozen)

    def freeze(self, prefix: str) -> None:
        self._frozen.add(prefix)
        self._sync_requires_grad()
        logger.debug(f"froze parameter subtree {prefix}")

    def unfreeze(self, prefix: str) -> None:
        self._frozen.discard(prefix)
        self._sync_requires_grad()
        logger.debug(f"unfroze parameter subtree {prefix}")

    def _sync_requires_grad(self) -> None:
        for name, tensor in self._params.items():
            tensor.requires_grad = not self.is_frozen(name)

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def grad_of(self, name: str) -> np.ndarray:
        """Accumulated gradient of ``name``; zeros when backward never reached it."""
        tensor = self._params[name]
        return np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: Dict[str, np.ndarray], frozen: Optional[List[str]] = None) -> None:
        for name, array in state.items():
            existing = self._params.get(name)
            if existing is not None and existing.shape != array.shape:
                raise DimensionError(name, f"checkpoint shape {array.shape} != model shape {existing.shape}")
            self._params[name] = Tensor(np.array(array, dtype=DTYPE), name=name)
        if frozen is not None:
            self._frozen = set(frozen)
        self._sync_requires_grad()

    def subtree(self, prefix: str) -> Dict[str, np.ndarray]:
        return {
            name: t.data.copy()
            for name, t in self._params.items()
            if name == prefix or name.startswith(prefix + ".")
        }


class Adam:
    """Adam with bias correction; frozen parameters are skipped entirely."""

    def __init__(
        self,
        params: ParameterSet,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, tensor in self.params.items():
            if self.params.is_frozen(name) or tensor.grad is None:
                continue
            g = tensor.grad
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            tensor.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Checkpoint:
    state: Dict[str, np.ndarray]
    frozen: List[str] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(params: ParameterSet, meta: Optional[Dict[str, Any]] = None) -> bytes:
    """Version byte, u64 manifest length, JSON manifest, little-endian f64 payload."""
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params.names()):
        array = np.ascontiguousarray(params[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(array.tobytes())
        offset += array.nbytes
    manifest = {"params": entries, "frozen": params.frozen_subtrees, "meta": meta or {}}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return bytes([CHECKPOINT_VERSION]) + _HEADER_LENGTH.pack(len(header)) + header + b"".join(chunks)


def _manifest_entries(manifest: Any) -> List[Dict[str, Any]]:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("params"), list):
        raise CheckpointError("corrupt checkpoint manifest: missing 'params' list")
    for entry in manifest["params"]:
        if not (
            isinstance(entry, dict)
            and isinstance(entry.get("name"), str)
            and isinstance(entry.get("shape"), list)
            and all(isinstance(d, int) and d >= 0 for d in entry["shape"])
            and isinstance(entry.get("offset"), int)
            and entry["offset"] >= 0
        ):
            raise CheckpointError(f"corrupt checkpoint manifest entry: {entry!r}")
    return manifest["params"]


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if not blob:
        raise CheckpointError("empty checkpoint")
    if blob[0] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(found=blob[0], expected=CHECKPOINT_VERSION)
    start = 1 + _HEADER_LENGTH.size
    if len(blob) < start:
        raise CheckpointError(f"truncated checkpoint: {len(blob)} bytes, header needs {start}")
    (length,) = _HEADER_LENGTH.unpack(blob[1:start])
    if start + length > len(blob):
        raise CheckpointError(f"truncated checkpoint: manifest needs {length} bytes, {len(blob) - start} left")
    try:
        manifest = json.loads(blob[start : start + length].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}")
    entries = _manifest_entries(manifest)
    payload = memoryview(blob)[start + length :]
    state = {}
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * DTYPE_BYTES
        if end > len(payload):
            raise CheckpointError(
                f"truncated checkpoint: {entry['name']} needs payload bytes up to {end}, found {len(payload)}"
            )
        array = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        state[entry["name"]] = array.astype(DTYPE).reshape(entry["shape"])
    return Checkpoint(state=state, frozen=manifest.get("frozen", []), meta=manifest.get("meta", {}))


def save_checkpoint(path: str, params: ParameterSet, meta: Optional[Dict[str, Any]] = None) -> None:
    try:
        with open(path, "wb") as f:
            f.write(encode_checkpoint(params, meta))
    except OSError as exc:
        logger.error(f"Checkpoint write failed: {exc}")
        raise DataIOError(path, exc)
    logger.debug(f"wrote checkpoint {path} ({len(params)} tensors)")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise DataIOError(path, exc)
    return decode_checkpoint(blob)
