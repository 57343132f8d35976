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
"""The four-way context ablation: Models A-D, trained and evaluated per seed."""
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import agate

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.clients import agate_helper

from contextcap.config import AblationFlags, RunConfig, config_with_ablation
from contextcap.exceptions import ConfigError, DataIOError
from contextcap.scene import Scene
from contextcap.training import run_schedule

logger = AdapterLogger("ContextCap")

MODELS = tuple(AblationFlags.MODELS)
COLUMNS = ("C@0.5IoU", "B-4@0.5IoU", "M@0.5IoU", "R@0.5IoU", "mAP@0.5IoU")


@dataclass
class AblationResult:
    table: agate.Table
    summary: Dict[str, Any]


def _summarize(table: agate.Table, models: Sequence[str]) -> Dict[str, Any]:
    means = table.group_by("model").aggregate([(column, agate.Mean(column)) for column in COLUMNS])
    summary: Dict[str, Any] = {
        "means": {row["model"]: {c: float(row[c]) for c in COLUMNS} for row in means.rows},
    }
    if "A" in models and "D" in models:
        by_seed: Dict[int, Dict[str, float]] = {}
        for row in table.rows:
            by_seed.setdefault(int(row["seed"]), {})[row["model"]] = float(row["C@0.5IoU"])
        summary["d_at_least_a_seeds"] = sum(1 for s in by_seed.values() if s["D"] >= s["A"])
        summary["n_seeds"] = len(by_seed)
    return summary


def run_ablation(
    config: RunConfig,
    train_scenes: Sequence[Scene],
    eval_scenes: Sequence[Scene],
    out_dir: str,
    seeds: Sequence[int],
    models: Optional[Sequence[str]] = None,
) -> AblationResult:
    """Train and evaluate every (model, seed) pair; writes ablation.csv and ablation.json under ``out_dir``."""
    models = [m.upper() for m in (models or MODELS)]
    for model in models:
        if model not in MODELS:
            raise ConfigError(f"unknown ablation model {model!r}; expected a subset of {''.join(MODELS)}")
    rows: List[Dict[str, Any]] = []
    for model in models:
        for seed in seeds:
            run_config = config_with_ablation(config, model)
            run_config.seed = int(seed)
            run_dir = os.path.join(out_dir, f"model_{model}", f"seed_{seed}")
            logger.info(f"Ablation model {model}, seed {seed} -> {run_dir}")
            trained = run_schedule(run_config, train_scenes, run_dir)
            evaluation, _ = trained.pipeline.evaluate(eval_scenes)
            rows.append({"model": model, "seed": int(seed), **{k: evaluation.to_dict()[k] for k in COLUMNS}})

    table = agate.Table.from_object(rows, column_types=agate_helper.build_type_tester(["model"]))
    result = AblationResult(table=table, summary=_summarize(table, models))
    csv_path = os.path.join(out_dir, "ablation.csv")
    json_path = os.path.join(out_dir, "ablation.json")
    try:
        table.to_csv(csv_path)
        with open(json_path, "w", encoding="utf8") as f:
            json.dump({"runs": rows, **result.summary}, f, sort_keys=True, indent=2)
    except OSError as exc:
        raise DataIOError(out_dir, exc)
    return result
