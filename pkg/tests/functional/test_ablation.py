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

import os

import pytest

from contextcap.ablation import COLUMNS, run_ablation
from contextcap.exceptions import ConfigError
from contextcap.parameters import load_checkpoint
from contextcap.training import LAST_CHECKPOINT

from .util import read_json, with_overrides


@pytest.fixture(scope="module")
def quick_config(sample_config):
    return with_overrides(sample_config, train={"stage1_epochs": 1, "stage2_epochs": 0, "scst_epochs": 0, "cider_every": 0})


class TestAblation:
    def test_table_and_summary(self, quick_config, sample_scenes, tmp_path):
        scenes = sample_scenes[:2]
        result = run_ablation(quick_config, scenes, scenes, str(tmp_path), seeds=[1, 2], models=["a", "D"])
        assert [(row["model"], int(row["seed"])) for row in result.table.rows] == [("A", 1), ("A", 2), ("D", 1), ("D", 2)]
        assert set(result.summary["means"]) == {"A", "D"}
        assert set(result.summary["means"]["A"]) == set(COLUMNS)
        assert result.summary["n_seeds"] == 2
        assert 0 <= result.summary["d_at_least_a_seeds"] <= 2

        written = read_json(str(tmp_path), "ablation.json")
        assert len(written["runs"]) == 4
        assert written["means"] == result.summary["means"]
        with open(tmp_path / "ablation.csv", encoding="utf8") as f:
            header = f.readline().strip().split(",")
        assert header == ["model", "seed", *COLUMNS]

    def test_each_run_trains_its_own_wiring(self, quick_config, sample_scenes, tmp_path):
        scenes = sample_scenes[:1]
        run_ablation(quick_config, scenes, scenes, str(tmp_path), seeds=[3], models=["A", "D"])
        names_a = load_checkpoint(os.path.join(tmp_path, "model_A", "seed_3", LAST_CHECKPOINT)).state.keys()
        names_d = load_checkpoint(os.path.join(tmp_path, "model_D", "seed_3", LAST_CHECKPOINT)).state.keys()
        assert not [n for n in names_a if ".lcm." in n]
        assert [n for n in names_d if ".lcm.sp_attn" in n]

    def test_without_both_ends_no_trend_is_reported(self, quick_config, sample_scenes, tmp_path):
        scenes = sample_scenes[:1]
        result = run_ablation(quick_config, scenes, scenes, str(tmp_path), seeds=[3], models=["B"])
        assert "d_at_least_a_seeds" not in result.summary

    def test_unknown_model(self, quick_config, sample_scenes, tmp_path):
        with pytest.raises(ConfigError, match="unknown ablation model"):
            run_ablation(quick_config, sample_scenes, sample_scenes, str(tmp_path), seeds=[1], models=["E"])
