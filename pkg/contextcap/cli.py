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
"""``contextcap`` command line.

Exit codes: 0 success, 1 usage error, 2 data / config / checkpoint error,
3 verification failure.
"""
import argparse
import json
import os
import sys
import time
from typing import Any, Dict, List, Optional, Sequence

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.exceptions import DbtConfigError, DbtRuntimeError, DbtValidationError

from contextcap.__version__ import version
from contextcap.ablation import MODELS, run_ablation
from contextcap.config import RunConfig, load_run_config
from contextcap.exceptions import DataIOError, SceneGenerationError, VerificationError
from contextcap.pipeline import CaptioningPipeline
from contextcap.scene import load_dataset, load_scene, write_dataset
from contextcap.synthetic import caption_problems, generate_synthetic_scene, scene_seeds
from contextcap.training import run_schedule
from contextcap.verify import SUITES, run_verification

logger = AdapterLogger("ContextCap")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_json(payload: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2)
    if not path:
        print(text)
        return
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf8") as f:
            f.write(text + "\n")
    except OSError as exc:
        raise DataIOError(path, exc)
    logger.info(f"Wrote {path}")


def _config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, args.overrides)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config(args)
    seed = config.seed if args.seed is None else args.seed
    start = time.time()
    scenes = []
    for i, scene_seed in enumerate(scene_seeds(seed, args.n_scenes)):
        scene = generate_synthetic_scene(scene_seed, config.scene, scene_id=f"scene{i:04d}")
        problems = caption_problems(scene, config.scene)
        if problems:
            raise SceneGenerationError(f"{scene.scene_id}: captions disagree with geometry: {problems[0]}")
        scenes.append(scene)
    manifest = write_dataset(scenes, args.out, meta={"seed": seed, "n_scenes": args.n_scenes})
    logger.info(f"Generated {len(scenes)} scenes in {time.time() - start:.2f}s; manifest {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    scenes = load_dataset(args.data)
    result = run_schedule(config, scenes, args.out)
    logger.info(f"Training finished; checkpoints: {', '.join(result.checkpoints)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    pipeline = CaptioningPipeline.from_checkpoint(args.ckpt, threads=args.threads)
    evaluation, _ = pipeline.evaluate(load_dataset(args.data))
    _write_json(evaluation.to_dict(), args.out)
    return EXIT_OK


def cmd_caption(args: argparse.Namespace) -> int:
    if args.debug and not args.out:
        raise UsageError("caption --debug needs --out; the dump is written next to it")
    pipeline = CaptioningPipeline.from_checkpoint(args.ckpt)
    scene = load_scene(args.scene)
    results = pipeline.caption_scene(scene)
    _write_json(pipeline.caption_document(scene, results), args.out)
    if args.debug:
        dump_path = os.path.join(os.path.dirname(args.out), f"{scene.scene_id}.debug.json")
        _write_json(pipeline.debug_dump(scene, results), dump_path)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    summary = run_verification(seed=args.seed, suites=args.suites or None)
    _write_json(summary.to_dict(), args.out)
    if not summary.passed:
        raise VerificationError(f"failing checks: {', '.join(r.name for r in summary.failures)}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    train_scenes = load_dataset(args.data)
    eval_scenes = load_dataset(args.eval_data) if args.eval_data else train_scenes
    result = run_ablation(config, train_scenes, eval_scenes, args.out, args.seeds, list(args.models))
    result.table.print_table(max_columns=None, max_column_width=24)
    return EXIT_OK


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {raw}")
    return value


def _seed_list(raw: str) -> List[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _model_list(raw: str) -> str:
    raw = raw.upper()
    if not raw or any(m not in MODELS for m in raw):
        raise argparse.ArgumentTypeError(f"models must be letters from {''.join(MODELS)}, got {raw!r}")
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contextcap", description="Context-aware dense captioning of synthetic 3D scenes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    commands = parser.add_subparsers(dest="command", required=True)

    def with_config(sub: argparse.ArgumentParser) -> argparse.ArgumentParser:
        sub.add_argument("--config", help="Run config JSON file, overlaid on the built-in defaults")
        sub.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="Override one config value, e.g. train.stage1_epochs=5 (repeatable)",
        )
        return sub

    sub = with_config(commands.add_parser("gen-data", help="Write a synthetic scene corpus"))
    sub.add_argument("--out", required=True, help="Output directory")
    sub.add_argument("--n-scenes", type=_positive_int, default=16)
    sub.add_argument("--seed", type=int, default=None, help="Corpus seed (defaults to the config seed)")
    sub.set_defaults(handler=cmd_gen_data)

    sub = with_config(commands.add_parser("train", help="Run the training schedule"))
    sub.add_argument("--data", required=True, help="Scene directory")
    sub.add_argument("--out", required=True, help="Directory for checkpoints and metrics.jsonl")
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser("eval", help="Evaluate a checkpoint on a scene directory")
    sub.add_argument("--ckpt", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", help="Report JSON path (stdout when omitted)")
    sub.add_argument("--threads", type=int, default=None)
    sub.set_defaults(handler=cmd_eval)

    sub = commands.add_parser("caption", help="Caption every candidate object of one scene")
    sub.add_argument("--ckpt", required=True)
    sub.add_argument("--scene", required=True, help="Scene JSON file")
    sub.add_argument("--out", help="Caption JSON path (stdout when omitted)")
    sub.add_argument(
        "--debug", action="store_true", help="Also dump detections and context selections next to --out"
    )
    sub.set_defaults(handler=cmd_caption)

    sub = commands.add_parser("verify", help="Run the self-check suites")
    sub.add_argument("--out", help="Summary JSON path (stdout when omitted)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--suite", dest="suites", action="append", choices=SUITES, default=[])
    sub.set_defaults(handler=cmd_verify)

    sub = with_config(commands.add_parser("ablate", help="Train and evaluate Models A-D"))
    sub.add_argument("--data", required=True, help="Training scene directory")
    sub.add_argument("--eval-data", help="Evaluation scene directory (defaults to --data)")
    sub.add_argument("--out", required=True)
    sub.add_argument("--seeds", type=_seed_list, default=[7, 8, 9])
    sub.add_argument("--models", type=_model_list, default="".join(MODELS))
    sub.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"contextcap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"contextcap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationError as exc:
        logger.error(str(exc))
        return EXIT_VERIFY
    except (DbtConfigError, DbtValidationError, DbtRuntimeError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
