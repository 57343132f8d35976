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
"""Cross-entropy and self-critical training, and the staged schedule.

Stages run in order: ``stage1`` (XE, detector frozen), ``stage2`` (XE,
joint) and ``scst`` (self-critical CIDEr-D fine-tuning). Each stage starts
a fresh Adam. Every epoch appends one JSON line to ``metrics.jsonl``.
"""
import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger

from contextcap.config import RunConfig
from contextcap.context import ContextSelection, select_target_train
from contextcap.detector import DetectionOutput
from contextcap.exceptions import DataIOError, EmptyBatchError
from contextcap.layers import softmax_cross_entropy
from contextcap.metrics import CiderD, REPORT_SCALE
from contextcap.parameters import Adam
from contextcap.pipeline import CaptioningPipeline
from contextcap.scene import Scene
from contextcap.tensor import Tape, Tensor, reduce_mean, reduce_sum, scale, stack_scalars
from contextcap.vocab import PAD, build_vocab, tokenize

logger = AdapterLogger("ContextCap")

DETECTOR_SUBTREE = "detector"
METRICS_FILE = "metrics.jsonl"
LAST_CHECKPOINT = "last.ckpt"
STAGES = ("stage1", "stage2", "scst")


@dataclass(frozen=True)
class TrainingSample:
    """One (scene, GT object, reference caption) triple with its precomputed context."""

    scene_id: str
    gt_index: int
    token_ids: np.ndarray
    length: int
    selection: ContextSelection
    references: Tuple[Tuple[str, ...], ...]

    @property
    def inputs(self) -> np.ndarray:
        return self.token_ids[: self.length]

    @property
    def targets(self) -> np.ndarray:
        return self.token_ids[1 : self.length + 1]


def scst_surrogate(log_probs: Tensor, advantage: float) -> Tensor:
    """-(r(sampled) - r(greedy)) * sum_t log p(sampled_t)."""
    return scale(reduce_sum(log_probs), -advantage)


class Trainer:
    def __init__(self, pipeline: CaptioningPipeline, scenes: Sequence[Scene]):
        self.pipeline = pipeline
        self.config = pipeline.config
        self.scenes: Dict[str, Scene] = {s.scene_id: s for s in scenes}
        self.samples = self._build_samples(scenes)
        self.scorer = CiderD([[list(r) for r in refs] for refs in self._reference_sets().values()])
        self.shuffle_rng = np.random.default_rng(self.config.seed)
        self.sample_rng = np.random.default_rng([self.config.seed, 1])

    def _build_samples(self, scenes: Sequence[Scene]) -> List[TrainingSample]:
        vocab = self.pipeline.vocab
        max_len = self.config.model.max_caption_len
        floor = self.config.train.min_target_iou
        samples = []
        skipped = 0
        for scene in scenes:
            layout = self.pipeline.layout(scene)
            for gi, obj in enumerate(scene.gt_objects):
                target, iou = select_target_train(layout.boxes, obj.box, layout.candidate_pad)
                if iou < floor:
                    skipped += 1
                    continue
                selection = self.pipeline.select(layout, target, iou)
                references = tuple(tuple(tokenize(c)) for c in obj.captions)
                for tokens in references:
                    ids = np.asarray(vocab.encode(list(tokens), max_len), dtype=np.int64)
                    length = min(len(tokens), max_len) + 1
                    samples.append(TrainingSample(scene.scene_id, gi, ids, length, selection, references))
        if skipped:
            logger.debug(f"skipped {skipped} objects whose best candidate IoU is below {floor}")
        return samples

    def _reference_sets(self) -> Dict[Tuple[str, int], Tuple[Tuple[str, ...], ...]]:
        refs = {}
        for sample in self.samples:
            refs.setdefault((sample.scene_id, sample.gt_index), sample.references)
        return refs

    def _detection(self, cache: Dict[str, DetectionOutput], scene_id: str) -> DetectionOutput:
        if scene_id not in cache:
            cache[scene_id] = self.pipeline.detect(self.scenes[scene_id])
        return cache[scene_id]

    def xe_loss(self, batch: Sequence[TrainingSample]) -> Tensor:
        """Token-mean cross-entropy per sample, averaged over the batch."""
        if not batch:
            raise EmptyBatchError("xe_step needs at least one sample")
        model = self.pipeline.model
        detections: Dict[str, DetectionOutput] = {}
        losses = []
        for sample in batch:
            ctx = self.pipeline.context(self._detection(detections, sample.scene_id), sample.selection)
            logits = model.forward_teacher_forced(sample.inputs, ctx)
            losses.append(_cross_entropy(logits, sample.targets))
        return reduce_mean(stack_scalars(losses))

    def xe_step(self, batch: Sequence[TrainingSample], optimizer: Adam) -> float:
        self.pipeline.params.zero_grad()
        with Tape() as tape:
            loss = self.xe_loss(batch)
            tape.backward(loss)
        optimizer.step()
        return loss.item()

    def scst_step(self, batch: Sequence[TrainingSample], optimizer: Adam) -> float:
        """Self-critical step with the greedy caption as baseline.

        No optimizer update happens when every advantage is exactly zero.
        """
        if not batch:
            raise EmptyBatchError("scst_step needs at least one sample")
        model = self.pipeline.model
        vocab = self.pipeline.vocab
        temperature = self.config.train.scst_temperature
        self.pipeline.params.zero_grad()
        with Tape() as tape:
            detections: Dict[str, DetectionOutput] = {}
            terms = []
            for sample in batch:
                references = [list(r) for r in sample.references if r]
                if not references:
                    logger.warning(
                        f"{sample.scene_id}/{sample.gt_index}: no usable reference caption; SCST sample skipped"
                    )
                    continue
                ctx = self.pipeline.context(self._detection(detections, sample.scene_id), sample.selection)
                greedy = model.greedy_decode(ctx)
                sampled, log_probs = model.sample_decode(ctx, temperature, self.sample_rng)
                advantage = self.scorer.score(vocab.decode(sampled), references) - self.scorer.score(
                    vocab.decode(greedy), references
                )
                if advantage != 0.0:
                    terms.append(scst_surrogate(log_probs, advantage))
            if not terms:
                logger.debug("all SCST advantages are zero; no update")
                return 0.0
            loss = scale(reduce_sum(stack_scalars(terms)), 1.0 / len(batch))
            tape.backward(loss)
        optimizer.step()
        return loss.item()

    def run_epoch(self, stage: str, optimizer: Adam) -> float:
        order = self.shuffle_rng.permutation(len(self.samples))
        size = self.config.train.batch_size
        step = self.scst_step if stage == "scst" else self.xe_step
        losses = []
        for start in range(0, len(order), size):
            losses.append(step([self.samples[i] for i in order[start : start + size]], optimizer))
        return float(np.mean(losses)) if losses else 0.0

    def train_cider(self) -> float:
        """Mean CIDEr-D (x100) of greedy captions over the distinct training targets."""
        seen = {}
        for sample in self.samples:
            seen.setdefault((sample.scene_id, sample.gt_index), sample)
        model = self.pipeline.model
        vocab = self.pipeline.vocab
        detections: Dict[str, DetectionOutput] = {}
        scores = []
        for sample in seen.values():
            ctx = self.pipeline.context(self._detection(detections, sample.scene_id), sample.selection)
            words = vocab.decode(model.greedy_decode(ctx))
            scores.append(self.scorer.score(words, [list(r) for r in sample.references]))
        return REPORT_SCALE * float(np.mean(scores)) if scores else 0.0


def _cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    return softmax_cross_entropy(logits, targets, ignore_id=PAD)


@dataclass
class TrainResult:
    pipeline: CaptioningPipeline
    metrics: List[Dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)


def _stage_plan(config: RunConfig) -> List[Tuple[str, int, float]]:
    train = config.train
    return [
        ("stage1", train.stage1_epochs, train.stage1_lr),
        ("stage2", train.stage2_epochs, train.stage2_lr),
        ("scst", train.scst_epochs, train.scst_lr),
    ]


def _cider_due(config: RunConfig, epoch: int, epochs: int) -> bool:
    every = config.train.cider_every
    return every > 0 and (epoch % every == 0 or epoch == epochs)


def run_schedule(config: RunConfig, scenes: Sequence[Scene], out_dir: str) -> TrainResult:
    """Run every stage with a non-zero epoch count; writes checkpoints and the metrics log under ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataIOError(out_dir, exc)
    vocab = build_vocab(c for scene in scenes for obj in scene.gt_objects for c in obj.captions)
    pipeline = CaptioningPipeline.build(config, vocab)
    trainer = Trainer(pipeline, scenes)
    if not trainer.samples:
        raise EmptyBatchError(f"no training samples: every object is below the {config.train.min_target_iou} IoU floor")
    logger.info(
        f"Training on {len(trainer.samples)} samples from {len(scenes)} scenes "
        f"(vocabulary {len(vocab)}, model {config.train.ablation.model_name})"
    )

    result = TrainResult(pipeline=pipeline)
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    try:
        log = open(metrics_path, "w", encoding="utf8")
    except OSError as exc:
        raise DataIOError(metrics_path, exc)
    with log:
        for stage, epochs, lr in _stage_plan(config):
            if epochs == 0:
                continue
            if stage == "stage1":
                pipeline.params.freeze(DETECTOR_SUBTREE)
            else:
                pipeline.params.unfreeze(DETECTOR_SUBTREE)
            optimizer = Adam(pipeline.params, lr=lr)
            for epoch in range(1, epochs + 1):
                start = time.time()
                loss = trainer.run_epoch(stage, optimizer)
                cider = trainer.train_cider() if _cider_due(config, epoch, epochs) else None
                row = {"stage": stage, "epoch": epoch, "loss": loss, "train_cider": cider}
                log.write(json.dumps(row) + "\n")
                log.flush()
                result.metrics.append(row)
                logger.info(
                    f"{stage} epoch {epoch}/{epochs}: loss={loss:.4f}"
                    + (f" train_cider={cider:.2f}" if cider is not None else "")
                    + f" ({time.time() - start:.1f}s)"
                )
                every = config.train.checkpoint_every
                if every and epoch % every == 0:
                    path = os.path.join(out_dir, f"{stage}_epoch{epoch:03d}.ckpt")
                    pipeline.save(path, stage=stage, epoch=epoch)
                    result.checkpoints.append(path)
            path = os.path.join(out_dir, f"{stage}.ckpt")
            pipeline.save(path, stage=stage, epoch=epochs)
            result.checkpoints.append(path)
            pipeline.save(os.path.join(out_dir, LAST_CHECKPOINT), stage=stage, epoch=epochs)
    last = os.path.join(out_dir, LAST_CHECKPOINT)
    if not result.checkpoints:
        pipeline.save(last, stage="init", epoch=0)
    result.checkpoints.append(last)
    return result
