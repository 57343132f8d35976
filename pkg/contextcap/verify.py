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
"""Self-checks behind ``contextcap verify``.

Suites:

* ``gradients``: central finite differences against every backward rule and
  against the full decoder on a tiny configuration.
* ``permutation``: GCM output is invariant to candidate and superpoint order,
  LCM output to neighbor order.
* ``causality``: later tokens never reach earlier logits; incremental
  decoding matches the teacher-forced pass.
* ``metrics``: captioning and detection metrics against the brute-force
  versions in :mod:`contextcap.oracles`.
* ``context``: target and neighbor selection plus farthest point sampling
  against brute force.
"""
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger
from dbt_common.dataclass_schema import dbtClassMixin

from contextcap import oracles
from contextcap import tensor as T
from contextcap.captioner import CaptionContext, CaptionerModel
from contextcap.config import ModelConfig
from contextcap.context import iou3d, select_neighbors, select_target_train
from contextcap.detector import farthest_point_sample
from contextcap.metrics import (
    CiderD,
    EvalRecord,
    ScoredBox,
    bleu4,
    gate_and_aggregate,
    map_at_0_5iou,
    meteor_exact,
    rouge_l,
)
from contextcap.parameters import ParameterSet
from contextcap.scene import Box3D
from contextcap.tensor import Tape, Tensor, no_grad
from contextcap.vocab import EOS, SOS

logger = AdapterLogger("ContextCap")

SUITES = ("gradients", "permutation", "causality", "metrics", "context")

FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
GRAD_FLOOR = 1e-6
GRAD_SAMPLES = 2
# entries whose +/- steps straddle a ReLU kink are redrawn, at most this many times per tensor
GRAD_KINK_REDRAWS = 6
# entries are drawn from those whose analytic gradient is at least this share of the tensor's largest
ELIGIBLE_FRACTION = 1e-3
INERT_TOLERANCE = 1e-8
MIN_CHECKED_PARAMETERS = 50
REQUIRED_BLOCKS = ("gcm", "lcm", "fuse", "embed", "head")
PERMUTATION_TOLERANCE = 1e-9
INCREMENTAL_TOLERANCE = 1e-8
ORACLE_TOLERANCE = 1e-9
CASES = 20
GEOMETRIES = 200

TINY_VOCAB = 12
TINY_OBJECTS = 4
TINY_SUPERPOINTS = 8
TINY_NEIGHBOR_OBJECTS = 2
TINY_NEIGHBOR_SUPERPOINTS = 3


@dataclass
class CheckResult(dbtClassMixin):
    suite: str
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationSummary:
    results: List[CheckResult] = field(default_factory=list)
    seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> Dict[str, Any]:
        suites = []
        for name in self.seconds:
            checks = [r for r in self.results if r.suite == name]
            suites.append(
                {
                    "name": name,
                    "passed": all(r.passed for r in checks),
                    "checks": len(checks),
                    "failed": [r.name for r in checks if not r.passed],
                    "seconds": round(self.seconds[name], 3),
                }
            )
        return {
            "passed": self.passed,
            "suites": suites,
            "checks": [r.to_dict() for r in self.results],
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)


def _central_difference(f: Callable[[], float], array: np.ndarray, index: Tuple[int, ...]) -> float:
    original = array[index]
    array[index] = original + FD_STEP
    plus = f()
    array[index] = original - FD_STEP
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * FD_STEP)


def _central_difference_smooth(f: Callable[[], float], array: np.ndarray, index: Tuple[int, ...]) -> Tuple[float, bool]:
    """Central difference at ``index`` and whether every ReLU kept its active units across both steps."""
    original = array[index]
    array[index] = original + FD_STEP
    with T.relu_patterns() as plus_masks:
        plus = f()
    array[index] = original - FD_STEP
    with T.relu_patterns() as minus_masks:
        minus = f()
    array[index] = original
    smooth = len(plus_masks) == len(minus_masks) and all(
        np.array_equal(a, b) for a, b in zip(plus_masks, minus_masks)
    )
    return (plus - minus) / (2 * FD_STEP), smooth


# ---------------------------------------------------------------------------
# gradients


def _op_cases(rng: np.random.Generator) -> List[Tuple[str, Callable[..., Tensor], List[np.ndarray]]]:
    def r(*shape):
        return rng.normal(size=shape)

    def away_from_zero(*shape):
        return rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)

    mask = np.array([[True, False, True, True], [True, True, False, True], [False, True, True, True]])
    return [
        ("add", lambda a, b: T.add(a, b), [r(3, 4), r(4)]),
        ("sub", lambda a, b: T.sub(a, b), [r(3, 4), r(1, 4)]),
        ("mul", lambda a, b: T.mul(a, b), [r(3, 4), r(3, 1)]),
        ("scale", lambda a: T.scale(a, -1.7), [r(3, 4)]),
        ("matmul", lambda a, b: T.matmul(a, b), [r(3, 4), r(4, 2)]),
        ("transpose", lambda a: T.transpose(a), [r(3, 4)]),
        ("relu", lambda a: T.relu(a), [away_from_zero(3, 4)]),
        ("reduce_sum", lambda a: T.reduce_sum(a), [r(3, 4)]),
        ("reduce_mean", lambda a: T.reduce_mean(a), [r(3, 4)]),
        ("reshape", lambda a: T.reshape(a, (2, 6)), [r(3, 4)]),
        ("index_rows", lambda a: T.index_rows(a, [2, 0, 2]), [r(3, 4)]),
        ("broadcast_rows", lambda a: T.broadcast_rows(a, 3), [r(1, 4)]),
        ("slice_cols", lambda a: T.slice_cols(a, 1, 3), [r(3, 4)]),
        ("concat_cols", lambda a, b: T.concat_cols([a, b]), [r(3, 2), r(3, 3)]),
        ("stack_scalars", lambda a, b: T.stack_scalars([T.reduce_sum(a), T.reduce_mean(b)]), [r(2, 2), r(3)]),
        ("masked_softmax", lambda a: T.masked_softmax(a, mask), [r(3, 4)]),
        ("log_softmax", lambda a: T.log_softmax(a), [r(3, 4)]),
        ("pick", lambda a: T.pick(a, [0, 1, 2, 0], [1, 3, 0, 1]), [r(3, 4)]),
        ("layer_norm", lambda a: T.layer_norm(a, 1e-5), [r(3, 4)]),
        ("softmax_cross_entropy", lambda a: T.softmax_cross_entropy(a, [1, 0, 3], ignore_id=0), [r(3, 4)]),
    ]


def check_op_gradient(
    name: str, op: Callable[..., Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator
) -> CheckResult:
    """Compare every input entry's analytic gradient of <op(inputs), P> with central differences."""
    arrays = [np.array(x, dtype=float) for x in inputs]
    with no_grad():
        out_shape = op(*[Tensor(a) for a in arrays]).shape
    projection = Tensor(rng.normal(size=out_shape))

    def objective(tensors) -> Tensor:
        return T.reduce_sum(T.mul(op(*tensors), projection))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = objective(leaves)
    tape.backward(loss)

    def value() -> float:
        with no_grad():
            return objective([Tensor(a) for a in arrays]).item()

    worst = 0.0
    for leaf, array in zip(leaves, arrays):
        analytic = np.zeros_like(array) if leaf.grad is None else leaf.grad
        for index in np.ndindex(array.shape):
            worst = max(worst, relative_error(float(analytic[index]), _central_difference(value, array, index)))
    return CheckResult("gradients", f"grad:{name}", worst < GRAD_TOLERANCE, f"max rel err {worst:.2e}")


def tiny_model_config() -> ModelConfig:
    return ModelConfig(d_model=32, heads=4, expansion=2, layers=2, max_caption_len=6)


def random_context(rng: np.random.Generator, d_model: int) -> CaptionContext:
    """A context with one padded candidate and one padded superpoint."""
    object_keep = np.ones(TINY_OBJECTS, dtype=bool)
    object_keep[-1] = False
    superpoint_keep = np.ones(TINY_SUPERPOINTS, dtype=bool)
    superpoint_keep[-1] = False
    boxes = np.concatenate(
        [rng.uniform(0, 4, size=(TINY_OBJECTS, 3)), rng.uniform(0.3, 1.5, size=(TINY_OBJECTS, 3))], axis=1
    )
    return CaptionContext(
        object_boxes=Tensor(boxes),
        object_features=Tensor(rng.normal(size=(TINY_OBJECTS, d_model))),
        object_keep=object_keep,
        superpoint_centers=Tensor(rng.uniform(0, 4, size=(TINY_SUPERPOINTS, 3))),
        superpoint_features=Tensor(rng.normal(size=(TINY_SUPERPOINTS, d_model))),
        superpoint_keep=superpoint_keep,
        target_feature=Tensor(rng.normal(size=(1, d_model))),
        neighbor_object_features=Tensor(rng.normal(size=(TINY_NEIGHBOR_OBJECTS, d_model))),
        neighbor_superpoint_features=Tensor(rng.normal(size=(TINY_NEIGHBOR_SUPERPOINTS, d_model))),
    )


def tiny_model(seed: int) -> Tuple[CaptionerModel, CaptionContext, np.random.Generator]:
    rng = np.random.default_rng(seed)
    model = CaptionerModel(ParameterSet(seed), TINY_VOCAB, tiny_model_config())
    model.build()
    return model, random_context(rng, model.d_model), rng


def _block_of(name: str) -> str:
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0].startswith("layer") else parts[0]


def check_model_gradients(seed: int) -> List[CheckResult]:
    """Sampled entries of every decoder parameter, grouped into one result per block."""
    model, ctx, rng = tiny_model(seed)
    length = model.max_positions
    tokens = [SOS] + [int(t) for t in rng.integers(EOS + 1, TINY_VOCAB, size=length - 1)]
    targets = tokens[1:] + [EOS]

    def objective() -> Tensor:
        return T.softmax_cross_entropy(model.forward_teacher_forced(tokens, ctx), targets)

    def value() -> float:
        with no_grad():
            return objective().item()

    model.params.zero_grad()
    with Tape() as tape:
        loss = objective()
    tape.backward(loss)

    by_block: Dict[str, List[Tuple[str, float]]] = {}
    for name, tensor in model.params.items():
        analytic = model.params.grad_of(name)
        peak = float(np.max(np.abs(analytic)))
        if peak < GRAD_FLOOR:
            # shift-invariant parameters (key biases) must be flat numerically as well
            index = tuple(int(rng.integers(s)) for s in tensor.shape)
            numeric = _central_difference(value, tensor.data, index)
            by_block.setdefault(_block_of(name), []).append((name, 0.0 if abs(numeric) < INERT_TOLERANCE else np.inf))
            continue
        eligible = np.argwhere(np.abs(analytic) >= max(GRAD_FLOOR, ELIGIBLE_FRACTION * peak))
        errors: List[float] = []
        redraws = 0
        while len(errors) < GRAD_SAMPLES and redraws <= GRAD_KINK_REDRAWS:
            index = tuple(int(i) for i in eligible[int(rng.integers(len(eligible)))])
            numeric, smooth = _central_difference_smooth(value, tensor.data, index)
            if not smooth:
                redraws += 1
                continue
            errors.append(relative_error(float(analytic[index]), numeric))
        # every smooth sample must pass; a tensor with none is a failure
        err = max(errors) if errors else np.inf
        by_block.setdefault(_block_of(name), []).append((name, err))

    results = []
    for block, errors in by_block.items():
        worst_name, worst = max(errors, key=lambda item: item[1])
        failed = [n for n, e in errors if e >= GRAD_TOLERANCE]
        detail = f"{len(errors)} parameters, max rel err {worst:.2e} ({worst_name})"
        if failed:
            detail += f"; failing: {', '.join(failed)}"
        results.append(CheckResult("gradients", f"grad:{block}", not failed, detail))

    covered = {block.split(".")[-1] for block in by_block}
    checked = sum(len(v) for v in by_block.values())
    missing = [b for b in REQUIRED_BLOCKS if b not in covered]
    results.append(
        CheckResult(
            "gradients",
            "grad:coverage",
            checked >= MIN_CHECKED_PARAMETERS and not missing,
            f"{checked} parameters checked" + (f"; blocks never reached: {missing}" if missing else ""),
        )
    )
    return results


def gradient_suite(seed: int) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [check_op_gradient(name, op, inputs, rng) for name, op, inputs in _op_cases(rng)]
    return results + check_model_gradients(seed)


# ---------------------------------------------------------------------------
# permutation and causality


def _permuted_objects(ctx: CaptionContext, objects: np.ndarray, superpoints: np.ndarray) -> CaptionContext:
    return CaptionContext(
        object_boxes=Tensor(ctx.object_boxes.data[objects]),
        object_features=Tensor(ctx.object_features.data[objects]),
        object_keep=ctx.object_keep[objects],
        superpoint_centers=Tensor(ctx.superpoint_centers.data[superpoints]),
        superpoint_features=Tensor(ctx.superpoint_features.data[superpoints]),
        superpoint_keep=ctx.superpoint_keep[superpoints],
        target_feature=ctx.target_feature,
        neighbor_object_features=ctx.neighbor_object_features,
        neighbor_superpoint_features=ctx.neighbor_superpoint_features,
    )


def _permuted_neighbors(ctx: CaptionContext, objects: np.ndarray, superpoints: np.ndarray) -> CaptionContext:
    return CaptionContext(
        object_boxes=ctx.object_boxes,
        object_features=ctx.object_features,
        object_keep=ctx.object_keep,
        superpoint_centers=ctx.superpoint_centers,
        superpoint_features=ctx.superpoint_features,
        superpoint_keep=ctx.superpoint_keep,
        target_feature=ctx.target_feature,
        neighbor_object_features=Tensor(ctx.neighbor_object_features.data[objects]),
        neighbor_superpoint_features=Tensor(ctx.neighbor_superpoint_features.data[superpoints]),
    )


def permutation_suite(seed: int) -> List[CheckResult]:
    model, ctx, rng = tiny_model(seed)
    h_prev = Tensor(rng.normal(size=(model.max_positions, model.d_model)))
    with no_grad():
        base_global, h_bar, _ = model.gcm_forward(h_prev, ctx, 0)
        base_local = model.lcm_forward(h_bar, ctx, 0)
        gcm_dev = lcm_dev = 0.0
        for _ in range(CASES):
            shuffled = _permuted_objects(
                ctx, rng.permutation(TINY_OBJECTS), rng.permutation(TINY_SUPERPOINTS)
            )
            out, _, _ = model.gcm_forward(h_prev, shuffled, 0)
            gcm_dev = max(gcm_dev, float(np.max(np.abs(out.data - base_global.data))))
            shuffled = _permuted_neighbors(
                ctx, rng.permutation(TINY_NEIGHBOR_OBJECTS), rng.permutation(TINY_NEIGHBOR_SUPERPOINTS)
            )
            out = model.lcm_forward(h_bar, shuffled, 0)
            lcm_dev = max(lcm_dev, float(np.max(np.abs(out.data - base_local.data))))
    return [
        CheckResult(
            "permutation", "permutation:gcm", gcm_dev <= PERMUTATION_TOLERANCE, f"max deviation {gcm_dev:.2e}"
        ),
        CheckResult(
            "permutation", "permutation:lcm", lcm_dev <= PERMUTATION_TOLERANCE, f"max deviation {lcm_dev:.2e}"
        ),
    ]


def causality_suite(seed: int) -> List[CheckResult]:
    model, ctx, rng = tiny_model(seed)
    length = model.max_positions
    leaks = []
    incremental_dev = 0.0
    with no_grad():
        for case in range(CASES):
            tokens = [SOS] + [int(t) for t in rng.integers(EOS + 1, TINY_VOCAB, size=length - 1)]
            cut = int(rng.integers(0, length - 1))
            edited = tokens[: cut + 1] + [int(t) for t in rng.integers(EOS + 1, TINY_VOCAB, size=length - cut - 1)]
            full = model.forward_teacher_forced(tokens, ctx).data
            changed = model.forward_teacher_forced(edited, ctx).data
            if not np.array_equal(full[: cut + 1], changed[: cut + 1]):
                leaks.append(case)

            state = model.new_state()
            for position, token in enumerate(tokens):
                step = model.advance(state, token, ctx)
                incremental_dev = max(incremental_dev, float(np.max(np.abs(step - full[position]))))
    return [
        CheckResult(
            "causality",
            "causality:future-tokens",
            not leaks,
            f"{CASES} cases" + (f"; earlier logits changed in cases {leaks}" if leaks else ""),
        ),
        CheckResult(
            "causality",
            "causality:incremental",
            incremental_dev <= INCREMENTAL_TOLERANCE,
            f"max deviation {incremental_dev:.2e}",
        ),
    ]


# ---------------------------------------------------------------------------
# metrics


_WORDS = ("a", "red", "chair", "near", "the", "wall")


def _sentence(rng: np.random.Generator, lo: int = 1, hi: int = 7) -> List[str]:
    return [str(w) for w in rng.choice(_WORDS, size=int(rng.integers(lo, hi)))]


def _random_box(rng: np.random.Generator, near: Optional[Box3D] = None) -> Box3D:
    if near is None:
        return Box3D(
            center=tuple(float(c) for c in rng.uniform(0, 3, size=3)),
            size=tuple(float(s) for s in rng.uniform(0.3, 1.5, size=3)),
        )
    return Box3D(
        center=tuple(float(c) for c in np.asarray(near.center) + rng.normal(0, 0.15, size=3)),
        size=tuple(float(s) for s in np.asarray(near.size) * rng.uniform(0.8, 1.25, size=3)),
    )


def _compare(name: str, pairs: List[Tuple[float, float]]) -> CheckResult:
    worst = max((abs(a - b) for a, b in pairs), default=0.0)
    return CheckResult("metrics", name, worst <= ORACLE_TOLERANCE, f"{len(pairs)} instances, max |diff| {worst:.2e}")


def metrics_suite(seed: int) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    cider, bleu, rouge, meteor, gated, detection = [], [], [], [], [], []
    for _ in range(CASES):
        corpus = [[_sentence(rng) for _ in range(int(rng.integers(1, 4)))] for _ in range(int(rng.integers(1, 6)))]
        candidate = _sentence(rng)
        references = corpus[int(rng.integers(len(corpus)))]
        cider.append((CiderD(corpus).score(candidate, references), oracles.cider_d(candidate, references, corpus)))
        bleu.append((bleu4(candidate, references), oracles.bleu4(candidate, references)))
        rouge.append((rouge_l(candidate, references), oracles.rouge_l(candidate, references)))
        meteor.append((meteor_exact(candidate, references), oracles.meteor_exact(candidate, references)))

        records = []
        for i in range(int(rng.integers(1, 6))):
            matched = bool(rng.random() < 0.8)
            records.append(
                EvalRecord(
                    gt_id=f"gt{i}",
                    candidate_index=i if matched else None,
                    iou=float(rng.choice([0.3, 0.5, 0.7, 0.9])) if matched else None,
                    generated=_sentence(rng),
                    references=[_sentence(rng) for _ in range(2)],
                )
            )
        gated.append((gate_and_aggregate(records, rouge_l), oracles.gated_mean(records, oracles.rouge_l)))

        ground_truths = [
            ScoredBox(f"s{rng.integers(2)}", str(rng.choice(["chair", "table"])), _random_box(rng))
            for _ in range(int(rng.integers(1, 6)))
        ]
        detections = []
        for _ in range(int(rng.integers(1, 6))):
            source = ground_truths[int(rng.integers(len(ground_truths)))]
            near = source.box if rng.random() < 0.7 else None
            detections.append(
                ScoredBox(
                    source.scene_id,
                    source.category if rng.random() < 0.8 else str(rng.choice(["chair", "table"])),
                    _random_box(rng, near),
                    round(float(rng.random()), 1),
                )
            )
        detection.append(
            (map_at_0_5iou(detections, ground_truths), oracles.mean_average_precision(detections, ground_truths))
        )

    identical = ["a", "red", "chair", "near", "the", "wall"]
    identical_score = CiderD([[identical], [["the", "chair"]]]).score(identical, [identical])
    return [
        _compare("metrics:cider-d", cider),
        _compare("metrics:bleu-4", bleu),
        _compare("metrics:rouge-l", rouge),
        _compare("metrics:meteor-exact", meteor),
        _compare("metrics:gating", gated),
        _compare("metrics:map", detection),
        CheckResult(
            "metrics", "metrics:cider-identical", identical_score == 10.0, f"identical pair scores {identical_score!r}"
        ),
    ]


# ---------------------------------------------------------------------------
# context


def _geometry(rng: np.random.Generator, lattice: bool) -> Tuple[List[Box3D], np.ndarray, np.ndarray]:
    count = int(rng.integers(2, 9))
    if lattice:
        centers = rng.integers(0, 4, size=(count, 3)).astype(float)
        sizes = rng.choice([1.0, 2.0], size=(count, 3))
        superpoints = rng.integers(0, 4, size=(int(rng.integers(1, 12)), 3)).astype(float)
    else:
        centers = rng.uniform(0, 4, size=(count, 3))
        sizes = rng.uniform(0.2, 2.0, size=(count, 3))
        superpoints = rng.uniform(0, 4, size=(int(rng.integers(1, 12)), 3))
    boxes = [Box3D(center=tuple(c), size=tuple(s)) for c, s in zip(centers.tolist(), sizes.tolist())]
    pad = rng.random(count) < 0.2
    if pad.all():
        pad[0] = False
    return boxes, pad, superpoints


def context_suite(seed: int) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    target_mismatch, neighbor_mismatch = [], []
    for case in range(GEOMETRIES):
        boxes, pad, superpoints = _geometry(rng, lattice=case % 2 == 0)
        live = [i for i in range(len(boxes)) if not pad[i]]
        gt = boxes[int(rng.choice(live))] if rng.random() < 0.3 else _random_box(rng)

        index, iou = select_target_train(boxes, gt, pad)
        oracle_pos, oracle_iou = oracles.best_target([boxes[i] for i in live], gt)
        if index != live[oracle_pos] or abs(iou - oracle_iou) > ORACLE_TOLERANCE:
            target_mismatch.append(case)

        centers = np.array([b.center for b in boxes])
        k_objects = int(rng.integers(0, len(live)))
        k_superpoints = int(rng.integers(1, len(superpoints) + 1))
        selection = select_neighbors(index, centers, superpoints, k_objects, k_superpoints, candidate_pad=pad)
        expected_objects = [
            live[j]
            for j in oracles.k_smallest(
                centers[index], [centers[i] for i in live], k_objects, exclude=live.index(index)
            )
        ]
        expected_superpoints = oracles.k_smallest(centers[index], superpoints, k_superpoints)
        if list(selection.neighbor_objects) != expected_objects or list(
            selection.neighbor_superpoints
        ) != expected_superpoints:
            neighbor_mismatch.append(case)

    fps_bad = []
    for case in range(CASES):
        cloud = rng.uniform(0, 3, size=(int(rng.integers(5, 40)), 3))
        n = int(rng.integers(1, len(cloud) + 1))
        if not oracles.fps_is_max_min(cloud, list(farthest_point_sample(cloud, n))):
            fps_bad.append(case)

    unit_offset = iou3d(Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), Box3D((0.5, 0.0, 0.0), (1.0, 1.0, 1.0)))

    def _detail(bad: List[int], total: int) -> str:
        return f"{total} geometries" + (f"; mismatches in {bad[:10]}" if bad else "")

    return [
        CheckResult("context", "context:target", not target_mismatch, _detail(target_mismatch, GEOMETRIES)),
        CheckResult("context", "context:neighbors", not neighbor_mismatch, _detail(neighbor_mismatch, GEOMETRIES)),
        CheckResult("context", "context:fps", not fps_bad, _detail(fps_bad, CASES)),
        CheckResult(
            "context",
            "context:iou-unit-offset",
            abs(unit_offset - 1.0 / 3.0) <= 1e-12,
            f"iou of unit cubes offset by half an edge = {unit_offset!r}",
        ),
    ]


_SUITE_FUNCTIONS: Dict[str, Callable[[int], List[CheckResult]]] = {
    "gradients": gradient_suite,
    "permutation": permutation_suite,
    "causality": causality_suite,
    "metrics": metrics_suite,
    "context": context_suite,
}


def run_verification(seed: int = 0, suites: Optional[Sequence[str]] = None) -> VerificationSummary:
    summary = VerificationSummary()
    for name in suites or SUITES:
        if name not in _SUITE_FUNCTIONS:
            raise KeyError(f"unknown verification suite {name!r}")
        start = time.time()
        results = _SUITE_FUNCTIONS[name](seed)
        summary.seconds[name] = time.time() - start
        summary.results.extend(results)
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.warning(f"verify {name}: {len(failed)} failing checks: {', '.join(failed)}")
        else:
            logger.info(f"verify {name}: {len(results)} checks passed in {summary.seconds[name]:.2f}s")
    return summary
