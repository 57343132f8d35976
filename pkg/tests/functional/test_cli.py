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

import math
import os

import pytest

from contextcap import cli
from contextcap.config import SceneConfig, config_from_dict
from contextcap.include import SAMPLE_CONFIG_PATH
from contextcap.pipeline import CaptioningPipeline
from contextcap.scene import MANIFEST_NAME
from contextcap.synthetic import generate_synthetic_scene
from contextcap.training import LAST_CHECKPOINT
from contextcap.verify import CheckResult, VerificationSummary
from contextcap.vocab import build_vocab

from .util import read_bytes, read_json, run_contextcap

TRAIN_OVERRIDES = ["--set", "train.stage1_epochs=1", "--set", "train.stage2_epochs=0", "--set", "train.scst_epochs=0"]


@pytest.fixture(scope="class")
def workspace(tmp_path_factory):
    """A generated corpus and a checkpoint trained on it."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    run = str(root / "run")
    run_contextcap(["gen-data", "--config", SAMPLE_CONFIG_PATH, "--out", data, "--n-scenes", 3])
    run_contextcap(["train", "--config", SAMPLE_CONFIG_PATH, "--data", data, "--out", run, *TRAIN_OVERRIDES])
    return {"root": root, "data": data, "ckpt": os.path.join(run, LAST_CHECKPOINT)}


class TestGenData:
    def test_deterministic_corpus(self, tmp_path):
        for name in ("a", "b"):
            run_contextcap(["gen-data", "--config", SAMPLE_CONFIG_PATH, "--out", tmp_path / name, "--n-scenes", 3])
        files = sorted(os.listdir(tmp_path / "a"))
        assert files == sorted(os.listdir(tmp_path / "b"))
        for name in files:
            assert read_bytes(str(tmp_path / "a"), name) == read_bytes(str(tmp_path / "b"), name)

    def test_manifest_lists_each_scene_once(self, tmp_path):
        run_contextcap(["gen-data", "--config", SAMPLE_CONFIG_PATH, "--out", tmp_path, "--n-scenes", 3, "--seed", 5])
        manifest = read_json(str(tmp_path), MANIFEST_NAME)
        ids = [entry["scene_id"] for entry in manifest["scenes"]]
        assert ids == ["scene0000", "scene0001", "scene0002"]
        assert manifest["seed"] == 5
        for entry in manifest["scenes"]:
            assert os.path.exists(tmp_path / entry["file"])


class TestTrainEvalCaption:
    def test_checkpoint_written(self, workspace):
        assert os.path.getsize(workspace["ckpt"]) > 0

    def test_eval_report(self, workspace):
        out = workspace["root"] / "report.json"
        run_contextcap(["eval", "--ckpt", workspace["ckpt"], "--data", workspace["data"], "--out", out])
        report = read_json(str(out))
        for key in ("C@0.5IoU", "B-4@0.5IoU", "M@0.5IoU", "R@0.5IoU", "mAP@0.5IoU"):
            assert math.isfinite(report[key]) and report[key] >= 0.0
        assert report["mAP@0.5IoU"] == pytest.approx(100.0)
        assert report["n_gt_objects"] > 0

    def test_eval_threads_match_single_threaded(self, workspace):
        single = workspace["root"] / "single.json"
        pooled = workspace["root"] / "pooled.json"
        run_contextcap(["eval", "--ckpt", workspace["ckpt"], "--data", workspace["data"], "--out", single])
        run_contextcap(
            ["eval", "--ckpt", workspace["ckpt"], "--data", workspace["data"], "--out", pooled, "--threads", 3]
        )
        assert read_json(str(single)) == read_json(str(pooled))

    def test_caption_every_live_candidate(self, workspace):
        out = workspace["root"] / "captions.json"
        scene_path = os.path.join(workspace["data"], "scene0000.json")
        run_contextcap(
            ["caption", "--ckpt", workspace["ckpt"], "--scene", scene_path, "--out", out, "--debug"]
        )
        document = read_json(str(out))
        dump = read_json(str(workspace["root"]), "scene0000.debug.json")
        live = [c for c in dump["detection"]["candidates"] if not c["pad"]]
        assert document["scene_id"] == "scene0000"
        assert len(document["captions"]) == len(live) == len(dump["selections"])
        for caption, candidate in zip(document["captions"], live):
            assert caption["box"] == candidate["box"]
            assert all(isinstance(t, str) for t in caption["tokens"])

    def test_version_mismatch_is_a_data_error(self, workspace, tmp_path):
        blob = bytearray(read_bytes(workspace["ckpt"]))
        blob[0] = 99
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        run_contextcap(["eval", "--ckpt", bad, "--data", workspace["data"]], expect_exit=cli.EXIT_DATA)

    def test_truncated_checkpoint_is_a_data_error(self, workspace, tmp_path):
        blob = read_bytes(workspace["ckpt"])
        scene_path = os.path.join(workspace["data"], "scene0000.json")
        for name, cut in (("header.ckpt", blob[:5]), ("payload.ckpt", blob[:-8])):
            bad = tmp_path / name
            bad.write_bytes(cut)
            run_contextcap(["caption", "--ckpt", bad, "--scene", scene_path], expect_exit=cli.EXIT_DATA)

    def test_debug_dump_needs_out(self, workspace):
        scene_path = os.path.join(workspace["data"], "scene0000.json")
        run_contextcap(
            ["caption", "--ckpt", workspace["ckpt"], "--scene", scene_path, "--debug"], expect_exit=cli.EXIT_USAGE
        )

    def test_missing_data_dir(self, workspace, tmp_path):
        run_contextcap(
            ["eval", "--ckpt", workspace["ckpt"], "--data", tmp_path / "nowhere"], expect_exit=cli.EXIT_DATA
        )


class TestCaptionWithoutDistractors:
    def test_five_objects_five_captions(self):
        config = config_from_dict({"detector": {"distractors": False, "num_proposals": 8}, "model": {"d_model": 16, "heads": 2, "layers": 1}})
        scene = generate_synthetic_scene(21, SceneConfig(min_objects=5, max_objects=5), scene_id="five")
        pipeline = CaptioningPipeline.build(config, build_vocab(c for o in scene.gt_objects for c in o.captions))
        results = pipeline.caption_scene(scene)
        assert len(results) == 5
        assert [r.candidate_index for r in results] == [0, 1, 2, 3, 4]
        assert len(pipeline.caption_document(scene, results)["captions"]) == 5


class TestExitCodes:
    def test_no_command(self):
        run_contextcap([], expect_exit=cli.EXIT_USAGE)

    def test_unknown_flag(self):
        run_contextcap(["train", "--bogus"], expect_exit=cli.EXIT_USAGE)

    def test_bad_scene_count(self, tmp_path):
        run_contextcap(["gen-data", "--out", tmp_path, "--n-scenes", 0], expect_exit=cli.EXIT_USAGE)

    def test_bad_model_letters(self, tmp_path):
        run_contextcap(["ablate", "--data", tmp_path, "--out", tmp_path, "--models", "AX"], expect_exit=cli.EXIT_USAGE)

    def test_unknown_config_key(self, tmp_path):
        run_contextcap(
            ["gen-data", "--out", tmp_path, "--set", "scene.bogus=1"], expect_exit=cli.EXIT_DATA
        )

    def test_verify_passes(self, tmp_path):
        out = tmp_path / "verify.json"
        run_contextcap(["verify", "--suite", "metrics", "--suite", "context", "--out", out])
        summary = read_json(str(out))
        assert summary["passed"] is True
        assert [s["name"] for s in summary["suites"]] == ["metrics", "context"]

    def test_verify_failure(self, monkeypatch, tmp_path):
        failing = VerificationSummary([CheckResult("metrics", "metrics:cider-d", False, "off by one")], {"metrics": 0.1})
        monkeypatch.setattr(cli, "run_verification", lambda seed, suites: failing)
        run_contextcap(["verify", "--out", tmp_path / "v.json"], expect_exit=cli.EXIT_VERIFY)
        assert read_json(str(tmp_path / "v.json"))["suites"][0]["failed"] == ["metrics:cider-d"]
