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
from contextcap.__version__ import version as __version__
from contextcap.config import RunConfig, load_run_config
from contextcap.pipeline import CaptioningPipeline
from contextcap.scene import Box3D, Scene, load_dataset, load_scene
from contextcap.training import run_schedule
from contextcap.verify import run_verification

from contextcap.include import SAMPLE_CONFIG_PATH
