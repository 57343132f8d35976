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
"""Target and neighbor selection around a candidate object."""
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from contextcap.exceptions import SelectionError
from contextcap.scene import Box3D


@dataclass(frozen=True)
class ContextSelection:
    target_index: int
    neighbor_objects: Tuple[int, ...]
    neighbor_superpoints: Tuple[int, ...]
    target_iou: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target_index,
            "neighbor_objects": list(self.neighbor_objects),
            "neighbor_superpoints": list(self.neighbor_superpoints),
            "target_iou": self.target_iou,
        }


def iou3d(a: Box3D, b: Box3D) -> float:
    overlap = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    inter = float(np.prod(overlap))
    if inter <= 0.0:
        return 0.0
    # volumes from the same corner arithmetic as the overlap, so iou3d(b, b) is exactly 1
    vol_a = float(np.prod(a.hi - a.lo))
    vol_b = float(np.prod(b.hi - b.lo))
    return inter / (vol_a + vol_b - inter)


def _live(count: int, pad: Optional[np.ndarray]) -> np.ndarray:
    return np.ones(count, dtype=bool) if pad is None else ~np.asarray(pad, dtype=bool)


def select_target_train(
    candidates: Sequence[Box3D], gt_box: Box3D, pad: Optional[np.ndarray] = None
) -> Tuple[int, float]:
    """Highest-IoU candidate for ``gt_box``; ties go to the lowest index."""
    if not len(candidates):
        raise SelectionError("target selection needs at least one candidate")
    live = _live(len(candidates), pad)
    best, best_iou = None, -1.0
    for i, box in enumerate(candidates):
        if not live[i]:
            continue
        iou = iou3d(box, gt_box)
        if iou > best_iou:
            best, best_iou = i, iou
    if best is None:
        raise SelectionError("every candidate is padding")
    return best, best_iou


def k_nearest(origin: np.ndarray, points: np.ndarray, k: int, allowed: np.ndarray) -> Tuple[int, ...]:
    """``k`` allowed rows of ``points`` closest to ``origin``, ascending distance then index."""
    candidates = np.nonzero(allowed)[0]
    if k > len(candidates):
        raise SelectionError(f"asked for {k} neighbors but only {len(candidates)} are available")
    dist = np.linalg.norm(points[candidates] - origin, axis=1)
    order = np.lexsort((candidates, dist))
    return tuple(int(i) for i in candidates[order][:k])


def select_neighbors(
    target_index: int,
    box_centers: np.ndarray,
    superpoint_centers: np.ndarray,
    k_objects: int,
    k_superpoints: int,
    candidate_pad: Optional[np.ndarray] = None,
    superpoint_pad: Optional[np.ndarray] = None,
    target_iou: Optional[float] = None,
) -> ContextSelection:
    box_centers = np.asarray(box_centers, dtype=float)
    superpoint_centers = np.asarray(superpoint_centers, dtype=float)
    origin = box_centers[target_index]
    others = _live(len(box_centers), candidate_pad)
    others[target_index] = False
    return ContextSelection(
        target_index=int(target_index),
        neighbor_objects=k_nearest(origin, box_centers, k_objects, others),
        neighbor_superpoints=k_nearest(
            origin, superpoint_centers, k_superpoints, _live(len(superpoint_centers), superpoint_pad)
        ),
        target_iou=target_iou,
    )


def enumerate_targets_inference(
    box_centers: np.ndarray,
    superpoint_centers: np.ndarray,
    k_objects: int,
    k_superpoints: int,
    candidate_pad: Optional[np.ndarray] = None,
    superpoint_pad: Optional[np.ndarray] = None,
) -> Iterator[ContextSelection]:
    """One selection per non-pad candidate, in index order."""
    live = _live(len(box_centers), candidate_pad)
    for i in np.nonzero(live)[0]:
        yield select_neighbors(
            int(i), box_centers, superpoint_centers, k_objects, k_superpoints, candidate_pad, superpoint_pad
        )
