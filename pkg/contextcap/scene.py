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
"""Scene types and the scene JSON format.

Scene JSON::

    {"scene_id": str,
     "points": [[x, y, z, r, g, b], ...],
     "gt_objects": [{"category": str,
                     "box": {"center": [x, y, z], "size": [sx, sy, sz]},
                     "captions": [str, ...]}, ...]}

Coordinates are meters in canonical room axes: "left" is smaller x and
"front" is smaller y. Floats are quantized to 6 decimal places and keys are
written in sorted order, so save -> load -> save is byte-stable.
"""
import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.dataclass_schema import ValidationError, dbtClassMixin
from dbt_common.exceptions import DbtValidationError

from contextcap.exceptions import DataIOError, SceneSchemaError

logger = AdapterLogger("ContextCap")

FLOAT_DECIMALS = 6
BOUNDS_TOLERANCE = 1e-4

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class Box3D(dbtClassMixin):
    """Axis-aligned box given by its center and full extents."""

    center: Vec3
    size: Vec3

    def __post_init__(self):
        if len(self.center) != 3 or len(self.size) != 3:
            raise DbtValidationError(f"box needs 3-vectors, got {self.center} / {self.size}")
        if min(self.size) <= 0:
            raise DbtValidationError(f"box extents must be positive, got {self.size}")

    @classmethod
    def from_bounds(cls, lo, hi, min_extent: float = 1e-3) -> "Box3D":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        size = np.maximum(hi - lo, min_extent)
        center = (lo + hi) / 2.0
        return cls(center=tuple(float(c) for c in center), size=tuple(float(s) for s in size))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def as_vector(self) -> np.ndarray:
        """The 6-vector center || size used as the box encoding."""
        return np.concatenate([np.asarray(self.center, float), np.asarray(self.size, float)])

    def contains(self, xyz: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        return np.all((xyz >= self.lo - tol) & (xyz <= self.hi + tol), axis=1)


@dataclass(frozen=True)
class GroundTruthObject(dbtClassMixin):
    category: str
    box: Box3D
    captions: List[str]


@dataclass(frozen=True)
class SceneDocument(dbtClassMixin):
    """Schema of the on-disk scene file."""

    scene_id: str
    points: List[List[float]]
    gt_objects: List[GroundTruthObject]


@dataclass(frozen=True, eq=False)
class Scene:
    """A point cloud with its annotated objects. Immutable once built."""

    scene_id: str
    points: np.ndarray
    gt_objects: List[GroundTruthObject] = field(default_factory=list)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] < 3:
            raise DbtValidationError(f"scene {self.scene_id}: points must be N x (3 + C) with N > 0")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def colors(self) -> np.ndarray:
        return self.points[:, 3:6]

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.xyz.min(axis=0), self.xyz.max(axis=0)

    def check_bounds(self) -> None:
        lo, hi = self.bounds
        for i, obj in enumerate(self.gt_objects):
            if np.any(obj.box.lo < lo - BOUNDS_TOLERANCE) or np.any(obj.box.hi > hi + BOUNDS_TOLERANCE):
                raise SceneSchemaError(f"/gt_objects/{i}/box", "box extends beyond the scene bounding volume")


def _quantize(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, FLOAT_DECIMALS)
    if isinstance(value, dict):
        return {k: _quantize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_quantize(v) for v in value]
    return value


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    return {
        "scene_id": scene.scene_id,
        "points": _quantize(scene.points.tolist()),
        "gt_objects": [_quantize(obj.to_dict()) for obj in scene.gt_objects],
    }


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":"))


def _json_pointer(error: ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required" and isinstance(error.instance, dict):
        missing = [key for key in error.validator_value if key not in error.instance]
        if missing:
            parts.append(missing[0])
    return "/" + "/".join(parts) if parts else "/"


def scene_from_dict(data: Any) -> Scene:
    if not isinstance(data, dict):
        raise SceneSchemaError("/", "scene document must be a JSON object")
    # the point array is checked with numpy below; only its first row goes through the schema
    head = dict(data)
    if isinstance(head.get("points"), list):
        head["points"] = head["points"][:1]
    try:
        SceneDocument.validate(head)
    except ValidationError as exc:
        raise SceneSchemaError(_json_pointer(exc), exc.message)

    try:
        points = np.asarray(data["points"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SceneSchemaError("/points", f"not a numeric matrix: {exc}")
    if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] < 3:
        raise SceneSchemaError("/points", f"expected N x (3 + C) with N > 0, got shape {points.shape}")

    objects = []
    for i, raw in enumerate(data["gt_objects"]):
        if not raw["captions"]:
            raise SceneSchemaError(f"/gt_objects/{i}/captions", "at least one reference caption is required")
        size = raw["box"]["size"]
        if len(size) != 3 or min(size) <= 0:
            raise SceneSchemaError(f"/gt_objects/{i}/box/size", f"extents must be 3 positive values, got {size}")
        try:
            objects.append(GroundTruthObject.from_dict(raw))
        except Exception as exc:
            raise SceneSchemaError(f"/gt_objects/{i}", str(exc))
    scene = Scene(scene_id=data["scene_id"], points=points, gt_objects=objects)
    scene.check_bounds()
    return scene


def loads_scene(text: str) -> Scene:
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise SceneSchemaError("/", f"invalid JSON: {exc}")
    return scene_from_dict(data)


def save_scene(scene: Scene, path: str) -> None:
    try:
        with open(path, "w", encoding="utf8") as f:
            f.write(dumps_scene(scene))
    except OSError as exc:
        logger.error(f"Scene write failed: {exc}")
        raise DataIOError(path, exc)


def load_scene(path: str) -> Scene:
    start = time.time()
    try:
        with open(path, encoding="utf8") as f:
            text = f.read()
    except OSError as exc:
        raise DataIOError(path, exc)
    scene = loads_scene(text)
    logger.debug(f"loaded scene {scene.scene_id} ({len(scene.points)} points) in {time.time() - start:.2f}s")
    return scene


MANIFEST_NAME = "manifest.json"


def write_dataset(scenes: List[Scene], out_dir: str, meta: Optional[Dict[str, Any]] = None) -> str:
    """One ``<scene_id>.json`` per scene plus a manifest listing them; returns the manifest path."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataIOError(out_dir, exc)
    entries = []
    for scene in scenes:
        name = f"{scene.scene_id}.json"
        save_scene(scene, os.path.join(out_dir, name))
        entries.append({"scene_id": scene.scene_id, "file": name})
    manifest = {"scenes": entries, **(meta or {})}
    path = os.path.join(out_dir, MANIFEST_NAME)
    try:
        with open(path, "w", encoding="utf8") as f:
            json.dump(manifest, f, sort_keys=True, indent=2)
    except OSError as exc:
        raise DataIOError(path, exc)
    return path


def load_dataset(data_dir: str) -> List[Scene]:
    """Scenes listed in the directory manifest, or every ``*.json`` scene file when there is none."""
    path = os.path.join(data_dir, MANIFEST_NAME)
    if os.path.exists(path):
        try:
            with open(path, encoding="utf8") as f:
                manifest = json.load(f)
        except OSError as exc:
            raise DataIOError(path, exc)
        except ValueError as exc:
            raise SceneSchemaError("/", f"{path} is not valid JSON: {exc}")
        files = [entry["file"] for entry in manifest.get("scenes", [])]
    else:
        try:
            files = sorted(n for n in os.listdir(data_dir) if n.endswith(".json"))
        except OSError as exc:
            raise DataIOError(data_dir, exc)
    start = time.time()
    scenes = [load_scene(os.path.join(data_dir, name)) for name in files]
    logger.info(f"Loaded {len(scenes)} scenes from {data_dir} in {time.time() - start:.2f}s")
    return scenes
