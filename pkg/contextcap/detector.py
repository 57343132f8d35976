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
"""detector-lite: superpoints and candidate objects from a raw point cloud.

Geometry (FPS seeds, ball-query clusters, proposal boxes, pad masks) is a
pure function of the scene and the detector config and is computed once per
scene as a :class:`DetectionLayout`. Features are produced from the layout
by the learnable encoder on every forward pass, so they follow the
``detector.*`` parameters through both training stages.
"""
import time
import zlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger

from contextcap.config import DetectorConfig
from contextcap.exceptions import SelectionError
from contextcap.layers import DEFAULT_EXPANSION, mlp
from contextcap.parameters import ParameterSet
from contextcap.scene import Box3D, Scene
from contextcap.tensor import Tensor, matmul

logger = AdapterLogger("ContextCap")

DESCRIPTOR_DIM = 10
ENCODER_PATH = "detector.encoder"
BACKGROUND = "background"
CLASS_AGNOSTIC = "object"
MIN_BOX_EXTENT = 0.05


@dataclass(frozen=True)
class Superpoint:
    center: np.ndarray
    members: np.ndarray
    descriptor: np.ndarray


@dataclass(frozen=True)
class CandidateObject:
    """A proposal box.

    ``sources`` are the superpoints whose centers lie in the box; ``pool`` are
    the superpoints whose features are averaged into the appearance vector
    (the nearest superpoint when no center falls inside the box).
    """

    box: Box3D
    sources: Tuple[int, ...]
    pool: Tuple[int, ...]
    confidence: float
    category: str


@dataclass(frozen=True)
class DetectionLayout:
    scene_id: str
    superpoints: List[Superpoint]
    candidates: List[CandidateObject]
    superpoint_pad: np.ndarray
    candidate_pad: np.ndarray

    @property
    def descriptors(self) -> np.ndarray:
        return np.stack([sp.descriptor for sp in self.superpoints])

    @property
    def superpoint_centers(self) -> np.ndarray:
        return np.stack([sp.center for sp in self.superpoints])

    @property
    def boxes(self) -> List[Box3D]:
        return [c.box for c in self.candidates]

    @property
    def box_vectors(self) -> np.ndarray:
        return np.stack([c.box.as_vector() for c in self.candidates])

    @property
    def box_centers(self) -> np.ndarray:
        return np.stack([np.asarray(c.box.center, dtype=float) for c in self.candidates])

    def pooling_matrix(self) -> np.ndarray:
        """Row i averages the features of candidate i's pool."""
        pool = np.zeros((len(self.candidates), len(self.superpoints)))
        for i, cand in enumerate(self.candidates):
            pool[i, list(cand.pool)] = 1.0 / len(cand.pool)
        return pool

    def to_dict(self) -> Dict[str, Any]:
        """Debug mirror of the layout, without feature payloads."""
        return {
            "scene_id": self.scene_id,
            "superpoints": [
                {
                    "center": [round(float(c), 6) for c in sp.center],
                    "members": int(len(sp.members)),
                    "pad": bool(pad),
                }
                for sp, pad in zip(self.superpoints, self.superpoint_pad)
            ],
            "candidates": [
                {
                    "box": {
                        "center": [round(c, 6) for c in cand.box.center],
                        "size": [round(s, 6) for s in cand.box.size],
                    },
                    "category": cand.category,
                    "confidence": round(cand.confidence, 6),
                    "sources": list(cand.sources),
                    "pad": bool(pad),
                }
                for cand, pad in zip(self.candidates, self.candidate_pad)
            ],
        }


@dataclass
class DetectionOutput:
    """A layout plus its encoded features: f_i per superpoint, v_i per candidate."""

    layout: DetectionLayout
    superpoint_features: Tensor
    candidate_features: Tensor

    @property
    def superpoints(self) -> List[Superpoint]:
        return self.layout.superpoints

    @property
    def candidates(self) -> List[CandidateObject]:
        return self.layout.candidates


def farthest_point_sample(points: np.ndarray, n: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``n`` indices starting from ``seed_index``.

    Ties go to the lowest index.
    """
    xyz = np.asarray(points, dtype=float)[:, :3]
    total = len(xyz)
    if n > total:
        raise SelectionError(f"cannot sample {n} points from a cloud of {total}")
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    if not 0 <= seed_index < total:
        raise SelectionError(f"seed index {seed_index} outside [0, {total})")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed_index
    dist = np.linalg.norm(xyz - xyz[seed_index], axis=1)
    dist[seed_index] = -1.0
    for i in range(1, n):
        idx = int(np.argmax(dist))
        chosen[i] = idx
        dist = np.minimum(dist, np.linalg.norm(xyz - xyz[idx], axis=1))
        dist[chosen[: i + 1]] = -1.0
    return chosen


def ball_query(xyz: np.ndarray, center: np.ndarray, radius: float, cap: int) -> np.ndarray:
    """Indices within ``radius`` of ``center``, nearest first (ties by index), at most ``cap``."""
    dist = np.linalg.norm(xyz - center, axis=1)
    inside = np.nonzero(dist <= radius)[0]
    order = np.lexsort((inside, dist[inside]))
    return inside[order][:cap]


def cluster_superpoints(
    points: np.ndarray, fps_indices: Sequence[int], radius: float, cap: int = 64
) -> List[Superpoint]:
    """Ball-query clusters around each FPS seed, with their raw descriptors.

    Descriptor: mean xyz, mean color, xyz variance per axis, member count / cap.
    """
    if radius <= 0:
        raise SelectionError(f"ball radius must be positive, got {radius}")
    points = np.asarray(points, dtype=float)
    xyz = points[:, :3]
    colors = points[:, 3:6] if points.shape[1] >= 6 else np.zeros((len(points), 3))
    superpoints = []
    for seed in fps_indices:
        members = ball_query(xyz, xyz[seed], radius, cap)
        if len(members) == 0:
            members = np.array([seed], dtype=np.int64)
        member_xyz = xyz[members]
        center = member_xyz.mean(axis=0)
        descriptor = np.concatenate(
            [center, colors[members].mean(axis=0), member_xyz.var(axis=0), [len(members) / cap]]
        )
        superpoints.append(Superpoint(center=center, members=members, descriptor=descriptor))
    return superpoints


def encode_features(params: ParameterSet, descriptors: np.ndarray, d_model: int, expansion: int = DEFAULT_EXPANSION) -> Tensor:
    """Shared MLP from raw descriptors to d-dim features (``detector.encoder``)."""
    return mlp(params, Tensor(descriptors), ENCODER_PATH, expansion=expansion, d_out=d_model)


def _jitter_rng(seed: int, scene_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(scene_id.encode("utf8"))])


def _centers_inside(box: Box3D, centers: np.ndarray) -> Tuple[int, ...]:
    return tuple(int(i) for i in np.nonzero(box.contains(centers, tol=1e-9))[0])


def _nearest(centers: np.ndarray, point: Sequence[float]) -> int:
    return int(np.argmin(np.linalg.norm(centers - np.asarray(point, dtype=float), axis=1)))


def _oracle_candidates(
    scene: Scene, superpoints: List[Superpoint], sp_pad: np.ndarray, config: DetectorConfig, seed: int
) -> List[CandidateObject]:
    rng = _jitter_rng(seed, scene.scene_id)
    centers = np.stack([sp.center for sp in superpoints])
    gt_objects = scene.gt_objects
    if len(gt_objects) > config.num_proposals:
        logger.warning(
            f"{scene.scene_id}: {len(gt_objects)} objects exceed {config.num_proposals} proposals; "
            f"keeping the first {config.num_proposals}"
        )
        gt_objects = gt_objects[: config.num_proposals]

    candidates = []
    for obj in gt_objects:
        offset = rng.normal(0.0, 1.0, size=3) * config.center_noise
        stretch = np.maximum(1.0 + rng.normal(0.0, 1.0, size=3) * config.size_noise, 0.1)
        box = Box3D(
            center=tuple(float(c) for c in np.asarray(obj.box.center) + offset),
            size=tuple(float(s) for s in np.asarray(obj.box.size) * stretch),
        )
        sources = _centers_inside(box, centers)
        pool = sources or (_nearest(centers, box.center),)
        confidence = float(np.clip(1.0 - np.linalg.norm(offset), 0.0, 1.0))
        candidates.append(CandidateObject(box, sources, pool, confidence, obj.category))

    if config.distractors and len(candidates) < config.num_proposals:
        occupied = np.zeros(len(superpoints), dtype=bool)
        for obj in scene.gt_objects:
            occupied |= obj.box.contains(centers, tol=1e-9)
        free = np.nonzero(~occupied & ~sp_pad)[0]
        wanted = min(config.num_proposals - len(candidates), len(free))
        if wanted:
            spread = free[farthest_point_sample(centers[free], wanted, 0)]
            for i in spread:
                member_xyz = scene.xyz[superpoints[i].members]
                box = Box3D.from_bounds(member_xyz.min(axis=0), member_xyz.max(axis=0), MIN_BOX_EXTENT)
                candidates.append(CandidateObject(box, _centers_inside(box, centers), (int(i),), 0.0, BACKGROUND))
    return candidates


def _cluster_candidates(scene: Scene, superpoints: List[Superpoint], sp_pad: np.ndarray, config: DetectorConfig) -> List[CandidateObject]:
    live = [i for i in range(len(superpoints)) if not sp_pad[i]]
    centers = np.stack([superpoints[i].center for i in live])
    # single linkage = connected components of the tau-neighborhood graph
    parent = list(range(len(live)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    for a, b in zip(*np.nonzero(np.triu(dist <= config.merge_threshold, k=1))):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    groups: Dict[int, List[int]] = {}
    for i in range(len(live)):
        groups.setdefault(find(i), []).append(live[i])
    clusters = sorted(groups.values(), key=lambda g: g[0])
    if len(clusters) > config.num_proposals:
        keep = sorted(range(len(clusters)), key=lambda c: (-len(clusters[c]), c))[: config.num_proposals]
        clusters = [clusters[c] for c in sorted(keep)]
    largest = max(len(g) for g in clusters)

    candidates = []
    for group in clusters:
        member_xyz = scene.xyz[np.concatenate([superpoints[i].members for i in group])]
        box = Box3D.from_bounds(member_xyz.min(axis=0), member_xyz.max(axis=0), MIN_BOX_EXTENT)
        sources = tuple(int(i) for i in group)
        candidates.append(CandidateObject(box, sources, sources, len(group) / largest, CLASS_AGNOSTIC))
    return candidates


def _pad(items: List, count: int) -> Tuple[List, np.ndarray]:
    mask = np.zeros(count, dtype=bool)
    if len(items) < count:
        mask[len(items) :] = True
        items = items + [items[-1]] * (count - len(items))
    return items, mask


def propose_objects(
    scene: Scene,
    superpoints: List[Superpoint],
    config: DetectorConfig,
    seed: int = 0,
    superpoint_pad: Optional[np.ndarray] = None,
) -> Tuple[List[CandidateObject], np.ndarray]:
    """Candidate boxes for ``config.mode``, padded to ``num_proposals``; returns (candidates, pad mask)."""
    if not superpoints:
        raise SelectionError("propose_objects needs at least one superpoint")
    sp_pad = np.zeros(len(superpoints), dtype=bool) if superpoint_pad is None else superpoint_pad
    if config.mode == "cluster":
        candidates = _cluster_candidates(scene, superpoints, sp_pad, config)
    else:
        candidates = _oracle_candidates(scene, superpoints, sp_pad, config, seed)
    if not candidates:
        raise SelectionError(f"{scene.scene_id}: detector produced no candidates")
    return _pad(candidates, config.num_proposals)


def detect_layout(scene: Scene, config: DetectorConfig, seed: int = 0) -> DetectionLayout:
    start = time.time()
    n_sp = min(config.num_superpoints, len(scene.points))
    seeds = farthest_point_sample(scene.points, n_sp, config.fps_seed_index % len(scene.points))
    superpoints, sp_pad = _pad(
        cluster_superpoints(scene.points, seeds, config.radius, config.cluster_cap), config.num_superpoints
    )
    candidates, cand_pad = propose_objects(scene, superpoints, config, seed, sp_pad)
    logger.debug(
        f"{scene.scene_id}: {int((~sp_pad).sum())} superpoints, {int((~cand_pad).sum())} candidates "
        f"in {time.time() - start:.2f}s"
    )
    return DetectionLayout(scene.scene_id, superpoints, candidates, sp_pad, cand_pad)


def encode_layout(params: ParameterSet, layout: DetectionLayout, d_model: int, expansion: int = DEFAULT_EXPANSION) -> DetectionOutput:
    features = encode_features(params, layout.descriptors, d_model, expansion)
    appearance = matmul(Tensor(layout.pooling_matrix()), features)
    return DetectionOutput(layout, features, appearance)


def coverage_distance(points: np.ndarray, layout: DetectionLayout) -> float:
    """Largest distance from a scene point to its nearest live superpoint center."""
    centers = layout.superpoint_centers[~layout.superpoint_pad]
    xyz = np.asarray(points, dtype=float)[:, :3]
    nearest = np.full(len(xyz), np.inf)
    for c in centers:
        nearest = np.minimum(nearest, np.linalg.norm(xyz - c, axis=1))
    return float(nearest.max())
