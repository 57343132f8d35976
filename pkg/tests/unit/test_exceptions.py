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

import pytest

from dbt_common.exceptions import DbtBaseException, DbtConfigError, DbtRuntimeError, DbtValidationError

from contextcap.exceptions import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DataIOError,
    DegenerateMaskError,
    DimensionError,
    SceneSchemaError,
    SelectionError,
    TapeStateError,
    VerificationError,
)


def raise_io_error(path):
    try:
        open(path, encoding="utf8")
    except OSError as exc:
        raise DataIOError(path, exc)


# The CLI maps these families to exit codes, so the hierarchy itself is under test.
class TestException:
    def test_runtime_family(self):
        for cls in (DimensionError, DegenerateMaskError, TapeStateError, SelectionError, CheckpointError):
            assert issubclass(cls, DbtRuntimeError)
        assert issubclass(DbtRuntimeError, DbtBaseException)
        assert issubclass(VerificationError, DbtRuntimeError)

    def test_config_and_validation_family(self):
        assert issubclass(ConfigError, DbtConfigError)
        assert issubclass(SceneSchemaError, DbtValidationError)

    def test_dimension_error_names_path(self):
        exc = DimensionError("layer0.gcm.obj_attn", "bad width")
        assert exc.path == "layer0.gcm.obj_attn"
        assert "layer0.gcm.obj_attn: bad width" in str(exc)

    def test_scene_schema_error_carries_pointer(self):
        exc = SceneSchemaError("/gt_objects/1/box", "missing")
        assert exc.pointer == "/gt_objects/1/box"

    def test_checkpoint_version_error_names_both_versions(self):
        exc = CheckpointVersionError(found=9, expected=1)
        assert isinstance(exc, CheckpointError)
        assert "9" in str(exc) and "1" in str(exc)

    def test_data_io_error_wraps_os_error(self, tmp_path):
        missing = str(tmp_path / "nope.json")
        with pytest.raises(DataIOError, match="nope.json") as info:
            raise_io_error(missing)
        assert info.value.path == missing
