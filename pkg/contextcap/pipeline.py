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
"""Detector, context identification and captioner bound into one model."""
import time
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.utils import executor

from contextcap.captioner import CaptionContext, CaptionerModel, build_context
from contextcap.config import RunConfig, config_from_dict
from contextcap.context import ContextSelection, enumerate_targets_inference, select_neighbors
from contextcap.detector import (
    CLASS_AGNOSTIC,
    DESCRIPTOR_DIM,
    DetectionLayout,
    DetectionOutput,
    detect_layout,
    encode_features,
    encode_layout,
)
from contextcap.exceptions import CheckpointError
from contextcap.metrics import EvalRecord, EvalReport, ScoredBox, match_predictions, report
from contextcap.parameters import ParameterSet, load_checkpoint, save_checkpoint
from contextcap.scene import Scene
from contextcap.tensor import no_grad
from contextcap.vocab import Vocabulary, tokenize

logger = AdapterLogger("ContextCap")


@dataclass
class _ThreadingConfig:
    args: Any
    threads: Optional[int]


def threading_config(threads: int) -> _ThreadingConfig:
    return _ThreadingConfig(args=SimpleNamespace(single_threaded=threads <= 1), threads=max(threads, 1))


@dataclass(frozen=True)
class CandidateCaption:
    candidate_index: int
    selection: ContextSelection
    tokens: List[str]


class CaptioningPipeline:
    """Owns the parameters; detection layouts are cached per scene id."""

    def __init__(self, config: RunConfig, vocab: Vocabulary, params: ParameterSet):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.model = CaptionerModel(params, len(vocab), config.model, config.train.ablation)
        self._layouts: Dict[str, DetectionLayout] = {}

    @classmethod
    def build(cls, config: RunConfig, vocab: Vocabulary) -> "CaptioningPipeline":
        pipeline = cls(config, vocab, ParameterSet(config.seed))
        with no_grad():
            encode_features(
                pipeline.params, np.zeros((1, DESCRIPTOR_DIM)), config.model.d_model, config.model.expansion
            )
        pipeline.model.build()
        logger.debug(f"built pipeline with {len(pipeline.params)} parameter tensors")
        return pipeline

    @classmethod
    def from_checkpoint(cls, path: str, threads: Optional[int] = None) -> "CaptioningPipeline":
        checkpoint = load_checkpoint(path)
        meta = checkpoint.meta
        if "config" not in meta or "vocab" not in meta:
            raise CheckpointError(f"{path} carries no run config or vocabulary")
        data = dict(meta["config"])
        if threads is not None:
            data["threads"] = threads
        config = config_from_dict(data)
        try:
            vocab = Vocabulary(tokens=list(meta["vocab"]))
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{path} carries a corrupt vocabulary: {exc}")
        pipeline = cls.build(config, vocab)
        pipeline.params.load_state(checkpoint.state, checkpoint.frozen)
        logger.info(f"Loaded checkpoint {path} ({meta.get('stage', 'unknown')} stage)")
        logger.info(f"Resolved run config: {config.to_json()}")
        return pipeline

    def checkpoint_meta(self, **extra) -> Dict[str, Any]:
        return {"config": self.config.to_dict(), "vocab": list(self.vocab.tokens), **extra}

    def save(self, path: str, **extra) -> None:
        save_checkpoint(path, self.params, self.checkpoint_meta(**extra))

    def layout(self, scene: Scene) -> DetectionLayout:
        layout = self._layouts.get(scene.scene_id)
        if layout is None:
            layout = detect_layout(scene, self.config.detector, self.config.seed)
            k_obj, k_sp = self.context_sizes(layout)
            if (k_obj, k_sp) != (self.config.context.k_objects, self.config.context.k_superpoints):
                logger.warning(
                    f"{scene.scene_id}: only {k_obj} neighbor objects / {k_sp} superpoints available; "
                    f"context clamped from {self.config.context.k_objects}/{self.config.context.k_superpoints}"
                )
            self._layouts[scene.scene_id] = layout
        return layout

    def context_sizes(self, layout: DetectionLayout) -> Tuple[int, int]:
        live_objects = int((~layout.candidate_pad).sum())
        live_superpoints = int((~layout.superpoint_pad).sum())
        return (
            min(self.config.context.k_objects, max(live_objects - 1, 0)),
            min(self.config.context.k_superpoints, live_superpoints),
        )

    def detect(self, scene: Scene) -> DetectionOutput:
        return encode_layout(self.params, self.layout(scene), self.config.model.d_model, self.config.model.expansion)

    def select(self, layout: DetectionLayout, target: int, target_iou: Optional[float] = None) -> ContextSelection:
        k_obj, k_sp = self.context_sizes(layout)
        return select_neighbors(
            target,
            layout.box_centers,
            layout.superpoint_centers,
            k_obj,
            k_sp,
            layout.candidate_pad,
            layout.superpoint_pad,
            target_iou=target_iou,
        )

    def targets(self, layout: DetectionLayout) -> Iterator[ContextSelection]:
        k_obj, k_sp = self.context_sizes(layout)
        return enumerate_targets_inference(
            layout.box_centers, layout.superpoint_centers, k_obj, k_sp, layout.candidate_pad, layout.superpoint_pad
        )

    def context(self, detection: DetectionOutput, selection: ContextSelection) -> CaptionContext:
        return build_context(detection, selection)

    def caption_scene(self, scene: Scene) -> List[CandidateCaption]:
        """Greedy caption for every non-pad candidate, each taken as the target in turn."""
        layout = self.layout(scene)
        results = []
        with no_grad():
            detection = self.detect(scene)
            for selection in self.targets(layout):
                ids = self.model.greedy_decode(build_context(detection, selection))
                results.append(CandidateCaption(selection.target_index, selection, self.vocab.decode(ids)))
        return results

    def caption_document(self, scene: Scene, results: Sequence[CandidateCaption]) -> Dict[str, Any]:
        layout = self.layout(scene)
        captions = []
        for result in results:
            box = layout.candidates[result.candidate_index].box
            captions.append(
                {
                    "box": {"center": [round(c, 6) for c in box.center], "size": [round(s, 6) for s in box.size]},
                    "tokens": list(result.tokens),
                }
            )
        return {"scene_id": scene.scene_id, "captions": captions}

    def debug_dump(self, scene: Scene, results: Sequence[CandidateCaption]) -> Dict[str, Any]:
        return {
            "detection": self.layout(scene).to_dict(),
            "selections": [r.selection.to_dict() for r in results],
        }

    def _evaluate_scene(self, scene: Scene) -> Tuple[List[EvalRecord], List[ScoredBox], List[ScoredBox]]:
        layout = self.layout(scene)
        class_agnostic = self.config.detector.mode == "cluster"
        records = []
        with no_grad():
            detection = self.detect(scene)
            matches = match_predictions([o.box for o in scene.gt_objects], layout.boxes, layout.candidate_pad)
            for i, (obj, (index, iou)) in enumerate(zip(scene.gt_objects, matches)):
                generated: List[str] = []
                if index is not None:
                    selection = self.select(layout, index, iou)
                    generated = self.vocab.decode(self.model.greedy_decode(build_context(detection, selection)))
                records.append(
                    EvalRecord(
                        gt_id=f"{scene.scene_id}/{i}",
                        candidate_index=index,
                        iou=iou,
                        generated=generated,
                        references=[tokenize(c) for c in obj.captions],
                    )
                )
        detections = [
            ScoredBox(scene.scene_id, cand.category, cand.box, cand.confidence)
            for cand, pad in zip(layout.candidates, layout.candidate_pad)
            if not pad
        ]
        ground_truths = [
            ScoredBox(scene.scene_id, CLASS_AGNOSTIC if class_agnostic else obj.category, obj.box)
            for obj in scene.gt_objects
        ]
        return records, detections, ground_truths

    def evaluate(self, scenes: Sequence[Scene]) -> Tuple[EvalReport, List[EvalRecord]]:
        start = time.time()
        with executor(threading_config(self.config.threads)) as pool:
            futures = [pool.submit(self._evaluate_scene, scene) for scene in scenes]
            results = [future.result() for future in futures]
        records = [r for rec, _, _ in results for r in rec]
        detections = [d for _, det, _ in results for d in det]
        ground_truths = [g for _, _, gts in results for g in gts]
        evaluation = report(records, detections, ground_truths, self.config.eval.iou_threshold)
        logger.info(
            f"Evaluated {len(scenes)} scenes ({len(records)} objects) in {time.time() - start:.2f}s: "
            f"C@0.5IoU={evaluation.cider:.2f}"
        )
        return evaluation, records
