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

from _pytest.assertion import truncate

from contextcap.config import load_run_config
from contextcap.include import SAMPLE_CONFIG_PATH
from contextcap.synthetic import generate_synthetic_scene, scene_seeds

truncate.DEFAULT_MAX_LINES = 9999
truncate.DEFAULT_MAX_CHARS = 9999


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="also run tests marked slow")


# Using @pytest.mark.slow skips the test unless --run-slow is given, through the
# 'skip_slow' autouse fixture below
def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "slow: long acceptance run, skipped unless --run-slow is given",
    )


@pytest.fixture(autouse=True)
def skip_slow(request):
    if request.node.get_closest_marker("slow") and not request.config.getoption("--run-slow"):
        pytest.skip("slow acceptance run; pass --run-slow")


@pytest.fixture(autouse=True)
def clean_seed_env(monkeypatch):
    monkeypatch.delenv("CONTEXTCAP_SEED", raising=False)


@pytest.fixture(scope="session")
def sample_config():
    return load_run_config(SAMPLE_CONFIG_PATH, use_env=False)


@pytest.fixture(scope="session")
def sample_scenes(sample_config):
    return [
        generate_synthetic_scene(seed, sample_config.scene, scene_id=f"scene{i:04d}")
        for i, seed in enumerate(scene_seeds(sample_config.seed, 3))
    ]
