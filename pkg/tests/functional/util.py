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
"""Helpers shared by the functional tests."""
import json
import os
from typing import Any, Dict, List, Sequence

from contextcap.cli import main
from contextcap.config import RunConfig, config_from_dict
from contextcap.parameters import load_checkpoint


def run_contextcap(args: Sequence[str], expect_exit: int = 0) -> int:
    code = main([str(a) for a in args])
    assert code == expect_exit, f"contextcap {' '.join(map(str, args))} exited {code}, expected {expect_exit}"
    return code


def read_json(*parts: str) -> Any:
    with open(os.path.join(*parts), encoding="utf8") as f:
        return json.load(f)


def read_jsonl(*parts: str) -> List[Dict[str, Any]]:
    with open(os.path.join(*parts), encoding="utf8") as f:
        return [json.loads(line) for line in f if line.strip()]


def read_bytes(*parts: str) -> bytes:
    with open(os.path.join(*parts), "rb") as f:
        return f.read()


def with_overrides(config: RunConfig, **sections: Dict[str, Any]) -> RunConfig:
    """A copy of ``config`` with the given sections partially replaced, e.g. train={"scst_epochs": 0}."""
    data = config.to_dict()
    for section, values in sections.items():
        data[section].update(values)
    return config_from_dict(data)


def state_of(path: str, prefix: str = "") -> Dict[str, Any]:
    return {k: v for k, v in load_checkpoint(path).state.items() if k.startswith(prefix)}
