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
"""Error types raised across the package.

Everything derives from the dbt_common exception hierarchy so callers can
catch ``DbtRuntimeError`` for any failure, and the CLI can map families to
exit codes.
"""
from typing import Optional

from dbt_common.exceptions import DbtConfigError, DbtRuntimeError, DbtValidationError


class DimensionError(DbtRuntimeError):
    """A tensor shape does not fit the layer it was fed to."""

    def __init__(self, path: str, detail: str) -> None:
        self.path = path
        super().__init__(f"{path}: {detail}")


class DegenerateMaskError(DbtRuntimeError):
    """An attention query row has no unmasked key."""


class TapeStateError(DbtRuntimeError):
    """The gradient tape was used out of order (e.g. backward twice)."""


class TargetRangeError(DbtRuntimeError):
    """A cross-entropy target id lies outside the vocabulary."""


class EmptyBatchError(DbtRuntimeError):
    pass


class SceneGenerationError(DbtRuntimeError):
    """The synthetic scene config cannot be satisfied."""


class SceneSchemaError(DbtValidationError):
    """A scene document violates the scene JSON schema.

    ``pointer`` is the JSON pointer of the offending value.
    """

    def __init__(self, pointer: str, detail: str) -> None:
        self.pointer = pointer
        super().__init__(f"{pointer}: {detail}")


class SelectionError(DbtRuntimeError):
    """More items (FPS samples, neighbors, proposals) were requested than exist."""


class CheckpointError(DbtRuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, expected: int) -> None:
        self.found = found
        self.expected = expected
        super().__init__(
            f"checkpoint format version {found} is not supported "
            f"(this build reads version {expected})"
        )


class DataIOError(DbtRuntimeError):
    """Filesystem failure, reported together with the path involved."""

    def __init__(self, path: str, exc: Optional[BaseException] = None) -> None:
        self.path = path
        reason = f": {exc}" if exc is not None else ""
        super().__init__(f"I/O failure on {path}{reason}")


class ConfigError(DbtConfigError):
    pass


class VerificationError(DbtRuntimeError):
    """One or more verification checks failed."""
