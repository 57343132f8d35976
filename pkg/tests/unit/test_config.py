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

import pytest

from contextcap.config import (
    AblationFlags,
    RunConfig,
    config_from_dict,
    config_with_ablation,
    load_run_config,
    parse_override,
)
from contextcap.exceptions import ConfigError, DataIOError
from contextcap.include import SAMPLE_CONFIG_PATH


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.seed == 7
        assert config.detector.mode == "oracle-noise"
        assert config.context.k_objects == 5
        assert config.model.max_caption_len == 30
        assert config.train.ablation.model_name == "D"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"model": {"d_modle": 64}})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"paths": {}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"batch_size": "eight"}})

    def test_cross_field_rules(self):
        with pytest.raises(ConfigError, match="divisible"):
            config_from_dict({"model": {"d_model": 30, "heads": 4}})
        with pytest.raises(ConfigError):
            config_from_dict({"scene": {"min_objects": 5, "max_objects": 2}})
        with pytest.raises(ConfigError):
            config_from_dict({"detector": {"mode": "votenet"}})

    def test_nested_merge_keeps_sibling_defaults(self):
        config = config_from_dict({"train": {"stage1_epochs": 3}})
        assert config.train.stage1_epochs == 3
        assert config.train.stage2_epochs == 10

    def test_json_is_stable(self):
        assert RunConfig().to_json() == RunConfig().to_json()
        assert json.loads(RunConfig().to_json())["seed"] == 7


class TestOverrides:
    def test_parse_override_json_values(self):
        assert parse_override("train.stage1_epochs=5") == {"train": {"stage1_epochs": 5}}
        assert parse_override("detector.mode=cluster") == {"detector": {"mode": "cluster"}}
        assert parse_override("scene.room_size=[4, 4, 3]") == {"scene": {"room_size": [4, 4, 3]}}

    def test_parse_override_needs_equals(self):
        with pytest.raises(ConfigError):
            parse_override("train.stage1_epochs")

    def test_file_then_overrides_then_env(self, tmp_path, monkeypatch):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 1, "train": {"stage1_epochs": 2}}))
        config = load_run_config(str(path), ["train.stage1_epochs=4"], use_env=False)
        assert (config.seed, config.train.stage1_epochs) == (1, 4)
        monkeypatch.setenv("CONTEXTCAP_SEED", "42")
        assert load_run_config(str(path)).seed == 42

    def test_bad_seed_env(self, monkeypatch):
        monkeypatch.setenv("CONTEXTCAP_SEED", "forty")
        with pytest.raises(ConfigError):
            load_run_config()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_run_config(str(tmp_path / "missing.json"))

    def test_sample_config_loads(self):
        config = load_run_config(SAMPLE_CONFIG_PATH, use_env=False)
        assert config.model.d_model == 16


class TestAblation:
    @pytest.mark.parametrize(
        "model,flags",
        [("A", (False, False, False)), ("B", (True, False, False)), ("C", (True, True, False)), ("D", (True, True, True))],
    )
    def test_models(self, model, flags):
        ablation = AblationFlags.for_model(model)
        assert (ablation.gcm_superpoints, ablation.lcm, ablation.lcm_superpoints) == flags
        assert ablation.model_name == model

    def test_config_with_ablation_leaves_source_untouched(self):
        base = RunConfig()
        changed = config_with_ablation(base, "b")
        assert changed.train.ablation.model_name == "B"
        assert base.train.ablation.model_name == "D"

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            AblationFlags.for_model("E")

    def test_inconsistent_flags_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"ablation": {"gcm_superpoints": False, "lcm": True, "lcm_superpoints": True}}})
