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

import numpy as np
import pytest

from contextcap.exceptions import EmptyBatchError
from contextcap.parameters import Adam
from contextcap.pipeline import CaptioningPipeline
from contextcap.tensor import no_grad
from contextcap.training import LAST_CHECKPOINT, METRICS_FILE, Trainer, run_schedule
from contextcap.vocab import EOS, build_vocab

from .util import read_bytes, read_jsonl, state_of, with_overrides


@pytest.fixture(scope="module")
def scenes(sample_scenes):
    return sample_scenes[:2]


class TestSchedule:
    def test_metrics_log_has_one_row_per_epoch(self, sample_config, scenes, tmp_path):
        result = run_schedule(sample_config, scenes, str(tmp_path))
        rows = read_jsonl(str(tmp_path), METRICS_FILE)
        assert [(r["stage"], r["epoch"]) for r in rows] == [("stage1", 1), ("stage1", 2), ("stage2", 1), ("scst", 1)]
        assert rows == result.metrics
        assert all(np.isfinite(r["loss"]) for r in rows)
        assert all(r["train_cider"] is not None and r["train_cider"] >= 0.0 for r in rows)
        for name in ("stage1.ckpt", "stage2.ckpt", "scst.ckpt", LAST_CHECKPOINT):
            assert os.path.exists(tmp_path / name)

    def test_unscheduled_cider_is_null(self, sample_config, scenes, tmp_path):
        config = with_overrides(sample_config, train={"stage2_epochs": 0, "scst_epochs": 0, "cider_every": 0})
        run_schedule(config, scenes, str(tmp_path))
        rows = read_jsonl(str(tmp_path), METRICS_FILE)
        assert [r["train_cider"] for r in rows] == [None, None]

    def test_same_seed_same_checkpoint(self, sample_config, scenes, tmp_path):
        config = with_overrides(sample_config, train={"stage1_epochs": 1})
        run_schedule(config, scenes, str(tmp_path / "a"))
        run_schedule(config, scenes, str(tmp_path / "b"))
        assert read_bytes(str(tmp_path / "a"), LAST_CHECKPOINT) == read_bytes(str(tmp_path / "b"), LAST_CHECKPOINT)

    def test_no_epochs_writes_initial_checkpoint(self, sample_config, scenes, tmp_path):
        config = with_overrides(sample_config, train={"stage1_epochs": 0, "stage2_epochs": 0, "scst_epochs": 0})
        result = run_schedule(config, scenes, str(tmp_path))
        assert result.metrics == []
        assert result.checkpoints == [str(tmp_path / LAST_CHECKPOINT)]


class TestStageContract:
    @pytest.fixture(scope="class")
    def runs(self, sample_config, sample_scenes, tmp_path_factory):
        scenes = sample_scenes[:2]
        plans = {
            "init": {"stage1_epochs": 0, "stage2_epochs": 0, "scst_epochs": 0},
            "stage1": {"stage1_epochs": 1, "stage2_epochs": 0, "scst_epochs": 0},
            "stage2": {"stage1_epochs": 0, "stage2_epochs": 1, "scst_epochs": 0},
        }
        paths = {}
        for name, train in plans.items():
            out = tmp_path_factory.mktemp(name)
            run_schedule(with_overrides(sample_config, train=train), scenes, str(out))
            paths[name] = str(out / LAST_CHECKPOINT)
        return paths

    def test_stage1_leaves_detector_untouched(self, runs):
        before = state_of(runs["init"], "detector.")
        after = state_of(runs["stage1"], "detector.")
        assert before
        assert before.keys() == after.keys()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

    def test_stage1_trains_the_decoder(self, runs):
        before = state_of(runs["init"], "head.")
        after = state_of(runs["stage1"], "head.")
        assert any(not np.array_equal(before[n], after[n]) for n in before)

    def test_stage2_fine_tunes_the_detector(self, runs):
        before = state_of(runs["init"], "detector.")
        after = state_of(runs["stage2"], "detector.")
        assert any(not np.array_equal(before[n], after[n]) for n in before)

    def test_greedy_baseline_sampling_leaves_parameters_unchanged(self, sample_config, scenes, tmp_path):
        config = with_overrides(
            sample_config,
            train={"stage1_epochs": 1, "stage2_epochs": 0, "scst_epochs": 1, "scst_temperature": 0.0, "scst_lr": 0.1},
        )
        result = run_schedule(config, scenes, str(tmp_path))
        assert result.metrics[-1]["stage"] == "scst"
        assert result.metrics[-1]["loss"] == 0.0
        before = state_of(str(tmp_path / "stage1.ckpt"))
        after = state_of(str(tmp_path / "scst.ckpt"))
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])


class TestTrainer:
    @pytest.fixture
    def trainer(self, sample_config, scenes):
        vocab = build_vocab(c for s in scenes for o in s.gt_objects for c in o.captions)
        return Trainer(CaptioningPipeline.build(sample_config, vocab), scenes)

    def test_one_sample_per_reference_caption(self, trainer, scenes):
        assert len(trainer.samples) == sum(len(o.captions) for s in scenes for o in s.gt_objects)
        for sample in trainer.samples:
            assert sample.selection.target_iou == pytest.approx(1.0)
            assert sample.inputs[0] == 1
            assert len(sample.inputs) == len(sample.targets)

    def test_xe_loss_is_positive_and_finite(self, trainer):
        loss = trainer.xe_loss(trainer.samples[:3]).item()
        assert np.isfinite(loss) and loss > 0.0

    def test_zero_learning_rate_keeps_parameters(self, trainer):
        before = {k: v.copy() for k, v in trainer.pipeline.params.state().items()}
        optimizer = Adam(trainer.pipeline.params, lr=0.0)
        trainer.xe_step(trainer.samples[:2], optimizer)
        trainer.xe_step(trainer.samples[:2], optimizer)
        for name, value in trainer.pipeline.params.state().items():
            np.testing.assert_array_equal(before[name], value)

    def test_empty_batch(self, trainer):
        with pytest.raises(EmptyBatchError):
            trainer.xe_step([], Adam(trainer.pipeline.params, lr=0.1))
        with pytest.raises(EmptyBatchError):
            trainer.scst_step([], Adam(trainer.pipeline.params, lr=0.1))


class ScriptedScorer:
    """Returns fixed rewards in call order: sampled caption first, then the greedy baseline."""

    def __init__(self, rewards):
        self.rewards = list(rewards)

    def score(self, candidate, references):
        return self.rewards.pop(0)


def record_samples(monkeypatch, model):
    drawn = []
    sample_decode = model.sample_decode

    def recording(*args, **kwargs):
        words, log_probs = sample_decode(*args, **kwargs)
        drawn.append((words, log_probs))
        return words, log_probs

    monkeypatch.setattr(model, "sample_decode", recording)
    return drawn


class TestSelfCritical:
    @pytest.fixture
    def trainer(self, sample_config, scenes):
        vocab = build_vocab(c for s in scenes for o in s.gt_objects for c in o.captions)
        return Trainer(CaptioningPipeline.build(sample_config, vocab), scenes)

    def sequence_score(self, trainer, sample, tokens):
        pipeline = trainer.pipeline
        ctx = pipeline.context(pipeline.detect(trainer.scenes[sample.scene_id]), sample.selection)
        with no_grad():
            return float(pipeline.model.sequence_log_probs(tokens, ctx).data.sum())

    def test_surrogate_matches_hand_computed_value(self, trainer, monkeypatch):
        drawn = record_samples(monkeypatch, trainer.pipeline.model)
        trainer.scorer = ScriptedScorer([0.7, 0.2, 0.1, 0.35])
        loss = trainer.scst_step(trainer.samples[:2], Adam(trainer.pipeline.params, lr=0.0))
        sums = [float(log_probs.data.sum()) for _, log_probs in drawn]
        expected = -(0.5 * sums[0] + (-0.25) * sums[1]) / 2
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_positive_advantage_raises_sampled_log_prob(self, trainer, monkeypatch):
        sample = trainer.samples[0]
        drawn = record_samples(monkeypatch, trainer.pipeline.model)
        trainer.scorer = ScriptedScorer([1.0, 0.0])
        before_params = trainer.pipeline.params.state()
        before_params = {k: v.copy() for k, v in before_params.items()}
        trainer.scst_step([sample], Adam(trainer.pipeline.params, lr=1e-4))

        words, log_probs = drawn[0]
        tokens = list(words) + ([EOS] if len(log_probs.data) > len(words) else [])
        after = self.sequence_score(trainer, sample, tokens)
        trainer.pipeline.params.load_state(before_params)
        before = self.sequence_score(trainer, sample, tokens)
        assert before == pytest.approx(float(log_probs.data.sum()), abs=1e-9)
        assert after > before
