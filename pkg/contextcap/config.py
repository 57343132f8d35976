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
"""Run configuration.

One JSON document configures a whole run. Sections are dbtClassMixin
dataclasses, so a document is checked against the generated JSON schema
(unknown keys are rejected) before it is turned into objects; cross-field
rules are enforced in ``RunConfig.__post_init__``.
"""
import copy
import json
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from decouple import config as env_config

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.dataclass_schema import ValidationError, dbtClassMixin

from contextcap.exceptions import ConfigError, DataIOError

logger = AdapterLogger("ContextCap")

SEED_ENV_VAR = "CONTEXTCAP_SEED"

DETECTOR_MODES = ("oracle-noise", "cluster")


def _default_categories() -> Dict[str, List[float]]:
    # nominal (sx, sy, sz) in meters
    return {
        "chair": [0.5, 0.5, 0.9],
        "table": [1.2, 0.8, 0.75],
        "bed": [2.0, 1.6, 0.6],
        "cabinet": [0.8, 0.5, 1.8],
        "sofa": [1.9, 0.9, 0.8],
        "desk": [1.3, 0.7, 0.75],
        "lamp": [0.4, 0.4, 1.5],
        "bookshelf": [1.0, 0.35, 1.9],
    }


def _default_palette() -> Dict[str, List[float]]:
    return {
        "red": [0.85, 0.15, 0.15],
        "green": [0.15, 0.7, 0.2],
        "blue": [0.15, 0.25, 0.85],
        "yellow": [0.9, 0.85, 0.15],
        "black": [0.08, 0.08, 0.08],
        "white": [0.97, 0.97, 0.97],
        "brown": [0.5, 0.3, 0.12],
        "purple": [0.55, 0.2, 0.65],
    }


@dataclass
class SceneConfig(dbtClassMixin):
    room_size: List[float] = field(default_factory=lambda: [8.0, 8.0, 3.0])
    min_objects: int = 3
    max_objects: int = 8
    num_points: int = 2048
    # points per square meter of floor and wall; 0 leaves only object points
    background_density: float = 5.0
    categories: Dict[str, List[float]] = field(default_factory=_default_categories)
    palette: Dict[str, List[float]] = field(default_factory=_default_palette)
    color_noise: float = 0.03
    max_captions: int = 3
    wall_proximity: float = 1.0
    min_gap: float = 0.3
    placement_retries: int = 500
    # training-time augmentation is not implemented; the flag must stay off
    augmentation: bool = False


@dataclass
class DetectorConfig(dbtClassMixin):
    mode: str = "oracle-noise"
    num_superpoints: int = 128
    num_proposals: int = 32
    radius: float = 0.8
    cluster_cap: int = 64
    merge_threshold: float = 0.5
    center_noise: float = 0.0
    size_noise: float = 0.0
    distractors: bool = True
    fps_seed_index: int = 0


@dataclass
class ContextConfig(dbtClassMixin):
    k_objects: int = 5
    k_superpoints: int = 10


@dataclass
class ModelConfig(dbtClassMixin):
    d_model: int = 128
    heads: int = 4
    expansion: int = 4
    layers: int = 2
    max_caption_len: int = 30
    layer_norm_eps: float = 1e-5


@dataclass
class AblationFlags(dbtClassMixin):
    """Which context branches are wired in (GCM objects are always on)."""

    gcm_superpoints: bool = True
    lcm: bool = True
    lcm_superpoints: bool = True

    MODELS = {
        "A": (False, False, False),
        "B": (True, False, False),
        "C": (True, True, False),
        "D": (True, True, True),
    }

    @classmethod
    def for_model(cls, name: str) -> "AblationFlags":
        try:
            gcm_sp, lcm, lcm_sp = cls.MODELS[name.upper()]
        except KeyError:
            raise ConfigError(f"unknown ablation model {name!r}; expected one of A, B, C, D")
        return cls(gcm_superpoints=gcm_sp, lcm=lcm, lcm_superpoints=lcm_sp)

    @property
    def model_name(self) -> str:
        key = (self.gcm_superpoints, self.lcm, self.lcm_superpoints)
        for name, flags in self.MODELS.items():
            if flags == key:
                return name
        raise ConfigError(
            f"ablation flags {key} do not match any of the models A-D "
            f"(LCM needs GCM superpoints, LCM superpoints need LCM)"
        )


@dataclass
class TrainConfig(dbtClassMixin):
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    scst_epochs: int = 10
    stage1_lr: float = 1e-3
    stage2_lr: float = 1e-4
    scst_lr: float = 1e-5
    batch_size: int = 8
    # targets whose best candidate IoU falls below this are left out of the loss
    min_target_iou: float = 0.25
    scst_temperature: float = 1.0
    cider_every: int = 10
    checkpoint_every: int = 0
    ablation: AblationFlags = field(default_factory=AblationFlags)


@dataclass
class EvalConfig(dbtClassMixin):
    iou_threshold: float = 0.5


@dataclass
class RunConfig(dbtClassMixin):
    seed: int = 7
    threads: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        scene = self.scene
        if scene.min_objects < 1 or scene.max_objects < scene.min_objects:
            raise ConfigError(
                f"scene.min_objects/max_objects must satisfy 1 <= min <= max, "
                f"got {scene.min_objects}/{scene.max_objects}"
            )
        if len(scene.room_size) != 3 or min(scene.room_size) <= 0:
            raise ConfigError(f"scene.room_size must be 3 positive lengths, got {scene.room_size}")
        if scene.augmentation:
            raise ConfigError("scene.augmentation is not supported at desk scale")
        if self.detector.mode not in DETECTOR_MODES:
            raise ConfigError(f"detector.mode must be one of {DETECTOR_MODES}, got {self.detector.mode!r}")
        if self.detector.radius <= 0:
            raise ConfigError("detector.radius must be positive")
        if self.model.d_model % self.model.heads:
            raise ConfigError(
                f"model.d_model ({self.model.d_model}) must be divisible by model.heads ({self.model.heads})"
            )
        train = self.train
        for name in ("stage1_epochs", "stage2_epochs", "scst_epochs"):
            if getattr(train, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if train.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        # raises for flag combinations outside the four ablation models
        train.ablation.model_name

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key not in ("categories", "palette"):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(assignment: str) -> Dict[str, Any]:
    """Turn ``a.b.c=value`` into ``{"a": {"b": {"c": value}}}``; value is JSON if it parses."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    result: Dict[str, Any] = {}
    cursor = result
    parts = key.strip().split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return result


def _reject_unknown_keys(cls: type, data: Any, where: str) -> None:
    if not isinstance(data, dict):
        return
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}{key}")
        nested = known[key].type
        if dataclasses.is_dataclass(nested):
            _reject_unknown_keys(nested, value, f"{where}{key}.")


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    _reject_unknown_keys(RunConfig, data, "")
    merged = _deep_merge(RunConfig().to_dict(), data)
    try:
        RunConfig.validate(merged)
    except ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid run config at {where}: {exc.message}")
    return RunConfig.from_dict(merged)


def load_run_config(
    path: Optional[str] = None, overrides: Sequence[str] = (), use_env: bool = True
) -> RunConfig:
    """Defaults <- config file <- ``--set`` overrides <- CONTEXTCAP_SEED."""
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, encoding="utf8") as f:
                data = json.load(f)
        except OSError as exc:
            raise DataIOError(path, exc)
        except ValueError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a JSON object")
    for assignment in overrides:
        data = _deep_merge(data, parse_override(assignment))
    if use_env:
        raw_seed = env_config(SEED_ENV_VAR, default="")
        if raw_seed:
            try:
                data["seed"] = int(raw_seed)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw_seed!r}")
    config = config_from_dict(data)
    logger.info(f"Resolved run config: {config.to_json()}")
    return config


def config_with_ablation(config: RunConfig, model: str) -> RunConfig:
    data = config.to_dict()
    data["train"]["ablation"] = AblationFlags.for_model(model).to_dict()
    return RunConfig.from_dict(data)
