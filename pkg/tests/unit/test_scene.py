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

import json
import os

import numpy as np
import pytest

from dbt_common.exceptions import DbtValidationError

from contextcap.exceptions import DataIOError, SceneSchemaError
from contextcap.scene import (
    MANIFEST_NAME,
    Box3D,
    GroundTruthObject,
    Scene,
    dumps_scene,
    load_dataset,
    loads_scene,
    save_scene,
    scene_from_dict,
    write_dataset,
)


def small_scene(scene_id="room"):
    points = np.array(
        [[0.0, 0.0, 0.0, 0.5, 0.5, 0.5], [2.0, 2.0, 1.0, 0.1, 0.2, 0.3], [1.0, 1.0, 0.5, 0.9, 0.1, 0.1]]
    )
    obj = GroundTruthObject(
        category="chair",
        box=Box3D(center=(1.0, 1.0, 0.5), size=(0.5, 0.5, 1.0)),
        captions=["this is a red chair. it is in the middle of the room."],
    )
    return Scene(scene_id=scene_id, points=points, gt_objects=[obj])


def as_dict(scene):
    return json.loads(dumps_scene(scene))


class TestBox3D:
    def test_corners_volume_and_vector(self):
        box = Box3D(center=(1.0, 2.0, 3.0), size=(2.0, 4.0, 6.0))
        np.testing.assert_array_equal(box.lo, [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(box.hi, [2.0, 4.0, 6.0])
        assert box.volume == 48.0
        np.testing.assert_array_equal(box.as_vector(), [1, 2, 3, 2, 4, 6])

    def test_non_positive_extent_rejected(self):
        with pytest.raises(DbtValidationError):
            Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 0.0, 1.0))

    def test_from_bounds_applies_min_extent(self):
        box = Box3D.from_bounds([0, 0, 0], [1, 1, 0], min_extent=0.05)
        assert box.size == (1.0, 1.0, 0.05)

    def test_contains(self):
        box = Box3D(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0))
        np.testing.assert_array_equal(box.contains([[0.5, 0.0, 0.0], [0.6, 0.0, 0.0]]), [True, False])


class TestSceneJson:
    def test_save_load_save_is_byte_stable(self):
        text = dumps_scene(small_scene())
        assert dumps_scene(loads_scene(text)) == text

    def test_points_are_read_only(self):
        scene = small_scene()
        with pytest.raises(ValueError):
            scene.points[0, 0] = 5.0

    def test_missing_field_reports_pointer(self):
        data = as_dict(small_scene())
        del data["gt_objects"][0]["box"]
        with pytest.raises(SceneSchemaError) as info:
            scene_from_dict(data)
        assert info.value.pointer == "/gt_objects/0/box"

    def test_empty_captions_rejected(self):
        data = as_dict(small_scene())
        data["gt_objects"][0]["captions"] = []
        with pytest.raises(SceneSchemaError) as info:
            scene_from_dict(data)
        assert info.value.pointer == "/gt_objects/0/captions"

    def test_negative_extent_rejected(self):
        data = as_dict(small_scene())
        data["gt_objects"][0]["box"]["size"] = [0.5, -1.0, 1.0]
        with pytest.raises(SceneSchemaError) as info:
            scene_from_dict(data)
        assert info.value.pointer == "/gt_objects/0/box/size"

    def test_box_outside_scene_rejected(self):
        data = as_dict(small_scene())
        data["gt_objects"][0]["box"]["center"] = [5.0, 5.0, 5.0]
        with pytest.raises(SceneSchemaError) as info:
            scene_from_dict(data)
        assert info.value.pointer == "/gt_objects/0/box"

    def test_empty_point_cloud_rejected(self):
        data = as_dict(small_scene())
        data["points"] = []
        with pytest.raises(SceneSchemaError) as info:
            scene_from_dict(data)
        assert info.value.pointer == "/points"

    def test_invalid_json(self):
        with pytest.raises(SceneSchemaError):
            loads_scene("{not json")


class TestDataset:
    def test_manifest_lists_every_scene_once(self, tmp_path):
        scenes = [small_scene("a"), small_scene("b")]
        manifest_path = write_dataset(scenes, str(tmp_path), meta={"seed": 3})
        with open(manifest_path) as f:
            manifest = json.load(f)
        assert [e["scene_id"] for e in manifest["scenes"]] == ["a", "b"]
        assert manifest["seed"] == 3
        loaded = load_dataset(str(tmp_path))
        assert [s.scene_id for s in loaded] == ["a", "b"]

    def test_directory_without_manifest(self, tmp_path):
        save_scene(small_scene("z"), str(tmp_path / "z.json"))
        save_scene(small_scene("y"), str(tmp_path / "y.json"))
        assert not os.path.exists(tmp_path / MANIFEST_NAME)
        assert [s.scene_id for s in load_dataset(str(tmp_path))] == ["y", "z"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataIOError):
            load_dataset(str(tmp_path / "missing"))
