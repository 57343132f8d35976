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
"""Procedural rooms with colored furniture boxes and templated captions.

Axis convention (shared with the captions): "left" means smaller x, "front"
means smaller y. Walls are named after the side of the room they bound.
"""
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dbt.adapters.events.logging import AdapterLogger

from contextcap.config import SceneConfig
from contextcap.exceptions import SceneGenerationError
from contextcap.scene import Box3D, GroundTruthObject, Scene

logger = AdapterLogger("ContextCap")

FLOOR_COLOR = (0.55, 0.5, 0.45)
WALL_COLOR = (0.8, 0.78, 0.72)
ORDINALS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"]
RELATIONS = ("to the left of", "to the right of", "in front of", "behind")
WALLS = ("left", "right", "front", "back")
CENTER_PHRASE = "in the middle of the room"

_WALL_OR_CENTER = r"(next to the (left|right|front|back) wall|in the middle of the room)"
_TEMPLATE_PATTERNS = {
    "identity": re.compile(rf"^this is a (\w+) (\w+)\. it is {_WALL_OR_CENTER}\.$"),
    "relation": re.compile(
        r"^the (\w+) (\w+) is (to the left of|to the right of|in front of|behind) the (\w+) (\w+)\.$"
    ),
    "ordinal": re.compile(r"^it is the (\w+) (\w+) from the left\. it is (\w+)\.$"),
    "presence": re.compile(rf"^there is a (\w+) (\w+) {_WALL_OR_CENTER}\.$"),
}


@dataclass(frozen=True)
class PlacedObject:
    category: str
    color: str
    box: Box3D


def relation_phrase(subject: Box3D, reference: Box3D) -> str:
    """Spatial relation of ``subject`` as seen against ``reference``."""
    dx = reference.center[0] - subject.center[0]
    dy = reference.center[1] - subject.center[1]
    if abs(dx) >= abs(dy):
        return "to the left of" if dx > 0 else "to the right of"
    return "in front of" if dy > 0 else "behind"


def wall_phrase(box: Box3D, room_size: Sequence[float], proximity: float) -> str:
    width, depth = room_size[0], room_size[1]
    gaps = {
        "left": box.lo[0],
        "right": width - box.hi[0],
        "front": box.lo[1],
        "back": depth - box.hi[1],
    }
    side = min(WALLS, key=lambda s: (gaps[s], WALLS.index(s)))
    if gaps[side] < proximity:
        return f"next to the {side} wall"
    return CENTER_PHRASE


def nearest_other(index: int, boxes: Sequence[Box3D]) -> Optional[int]:
    best, best_dist = None, np.inf
    for j, other in enumerate(boxes):
        if j == index:
            continue
        dist = float(np.linalg.norm(np.subtract(other.center, boxes[index].center)))
        if dist < best_dist:
            best, best_dist = j, dist
    return best


def ordinal_rank(index: int, objects: Sequence[PlacedObject]) -> Tuple[int, int]:
    """(0-based rank from the left among same-category objects, group size)."""
    category = objects[index].category
    group = [i for i, o in enumerate(objects) if o.category == category]
    group.sort(key=lambda i: (objects[i].box.center[0], objects[i].box.center[1], i))
    return group.index(index), len(group)


def caption_candidates(
    index: int, objects: Sequence[PlacedObject], room_size: Sequence[float], proximity: float
) -> List[str]:
    obj = objects[index]
    walls = wall_phrase(obj.box, room_size, proximity)
    captions = [
        f"this is a {obj.color} {obj.category}. it is {walls}.",
        f"there is a {obj.color} {obj.category} {walls}.",
    ]
    other = nearest_other(index, [o.box for o in objects])
    if other is not None:
        ref = objects[other]
        relation = relation_phrase(obj.box, ref.box)
        captions.append(f"the {obj.color} {obj.category} is {relation} the {ref.color} {ref.category}.")
    rank, group = ordinal_rank(index, objects)
    if group > 1 and rank < len(ORDINALS):
        captions.append(f"it is the {ORDINALS[rank]} {obj.category} from the left. it is {obj.color}.")
    return captions


def _place_objects(rng: np.random.Generator, config: SceneConfig) -> List[PlacedObject]:
    width, depth, height = config.room_size
    categories = list(config.categories)
    colors = list(config.palette)
    if not categories or not colors:
        raise SceneGenerationError("scene config needs at least one category and one color")
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    if count > len(categories) * len(colors):
        raise SceneGenerationError(
            f"{count} objects need unique (color, category) pairs but only "
            f"{len(categories) * len(colors)} exist"
        )
    margin = config.min_gap
    placed: List[PlacedObject] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > config.placement_retries:
            raise SceneGenerationError(
                f"could not place {count} objects in a {width}x{depth} m room "
                f"after {config.placement_retries} attempts (placed {len(placed)})"
            )
        category = categories[int(rng.integers(len(categories)))]
        color = colors[int(rng.integers(len(colors)))]
        size = np.asarray(config.categories[category], dtype=float) * rng.uniform(0.9, 1.1, size=3)
        size[2] = min(size[2], height)
        free_x = width - size[0] - 2 * margin
        free_y = depth - size[1] - 2 * margin
        if free_x < 0 or free_y < 0:
            continue
        if any(p.category == category and p.color == color for p in placed):
            continue
        cx = margin + size[0] / 2 + rng.uniform(0.0, free_x)
        cy = margin + size[1] / 2 + rng.uniform(0.0, free_y)
        overlaps = any(
            abs(cx - p.box.center[0]) < (size[0] + p.box.size[0]) / 2 + margin
            and abs(cy - p.box.center[1]) < (size[1] + p.box.size[1]) / 2 + margin
            for p in placed
        )
        if overlaps:
            continue
        box = Box3D(center=(float(cx), float(cy), float(size[2] / 2)), size=tuple(float(s) for s in size))
        placed.append(PlacedObject(category=category, color=color, box=box))
    logger.debug(f"placed {count} objects in {attempts} attempts")
    return placed


def _sample_box_surface(rng: np.random.Generator, box: Box3D, n: int) -> np.ndarray:
    lo, hi = box.lo, box.hi
    sx, sy, sz = box.size
    # faces: (fixed axis, fixed value)
    faces = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1]), (2, lo[2]), (2, hi[2])]
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    per_face = np.ones(6, dtype=int)
    extra = rng.choice(6, size=n - 6, p=areas / areas.sum())
    per_face += np.bincount(extra, minlength=6)
    chunks = []
    for (axis, value), m in zip(faces, per_face):
        pts = rng.uniform(lo, hi, size=(m, 3))
        pts[:, axis] = value
        chunks.append(pts)
    return np.concatenate(chunks, axis=0)


def _sample_background(
    rng: np.random.Generator, config: SceneConfig, objects: Sequence[PlacedObject], n: int
) -> np.ndarray:
    width, depth, height = config.room_size
    wall_areas = np.array([depth * height, depth * height, width * height, width * height])
    areas = np.concatenate([[width * depth], wall_areas])
    counts = np.bincount(rng.choice(5, size=n, p=areas / areas.sum()), minlength=5)

    floor = []
    while sum(len(f) for f in floor) < counts[0]:
        pts = np.column_stack(
            [rng.uniform(0, width, counts[0]), rng.uniform(0, depth, counts[0]), np.zeros(counts[0])]
        )
        covered = np.zeros(len(pts), dtype=bool)
        for obj in objects:
            covered |= obj.box.contains(pts, tol=1e-3)
        floor.append(pts[~covered])
    floor_pts = np.concatenate(floor, axis=0)[: counts[0]] if counts[0] else np.zeros((0, 3))

    walls = []
    for side, m in zip(WALLS, counts[1:]):
        if side in ("left", "right"):
            x = np.full(m, 0.0 if side == "left" else width)
            pts = np.column_stack([x, rng.uniform(0, depth, m), rng.uniform(0, height, m)])
        else:
            y = np.full(m, 0.0 if side == "front" else depth)
            pts = np.column_stack([rng.uniform(0, width, m), y, rng.uniform(0, height, m)])
        walls.append(pts)
    floor_rgb = np.tile(FLOOR_COLOR, (len(floor_pts), 1))
    wall_pts = np.concatenate(walls, axis=0)
    wall_rgb = np.tile(WALL_COLOR, (len(wall_pts), 1))
    xyz = np.concatenate([floor_pts, wall_pts], axis=0)
    rgb = np.concatenate([floor_rgb, wall_rgb], axis=0)
    rgb = np.clip(rgb + rng.normal(0.0, config.color_noise, size=rgb.shape), 0.0, 1.0)
    return np.column_stack([xyz, rgb])


def generate_synthetic_scene(seed: int, config: SceneConfig, scene_id: Optional[str] = None) -> Scene:
    """Build one room deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    objects = _place_objects(rng, config)

    width, depth, height = config.room_size
    background_area = width * depth + 2 * (width + depth) * height
    n_background = int(round(config.background_density * background_area))
    n_object_points = config.num_points - n_background
    if n_object_points < 6 * len(objects):
        raise SceneGenerationError(
            f"num_points={config.num_points} leaves {n_object_points} object points for "
            f"{len(objects)} objects (need at least 6 each)"
        )
    shares = np.full(len(objects), n_object_points // len(objects))
    shares[: n_object_points % len(objects)] += 1

    chunks = []
    for obj, share in zip(objects, shares):
        xyz = _sample_box_surface(rng, obj.box, int(share))
        rgb = np.asarray(config.palette[obj.color], dtype=float)
        rgb = np.clip(rgb + rng.normal(0.0, config.color_noise, size=(len(xyz), 3)), 0.0, 1.0)
        chunks.append(np.column_stack([xyz, rgb]))
    if n_background:
        chunks.append(_sample_background(rng, config, objects, n_background))
    points = np.concatenate(chunks, axis=0)

    gt_objects = []
    for i, obj in enumerate(objects):
        options = caption_candidates(i, objects, config.room_size, config.wall_proximity)
        n_captions = int(rng.integers(1, min(config.max_captions, len(options)) + 1))
        chosen = sorted(rng.choice(len(options), size=n_captions, replace=False))
        gt_objects.append(
            GroundTruthObject(category=obj.category, box=obj.box, captions=[options[c] for c in chosen])
        )
    return Scene(scene_id=scene_id or f"synthetic_{seed}", points=points, gt_objects=gt_objects)


def scene_seeds(seed: int, count: int) -> List[int]:
    """Per-scene seeds for a dataset drawn from one master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def observed_color(scene: Scene, box: Box3D, palette: Dict[str, List[float]]) -> Optional[str]:
    """Palette entry nearest to the mean color of the points inside ``box``."""
    inside = box.contains(scene.xyz, tol=1e-5)
    if not inside.any() or scene.points.shape[1] < 6:
        return None
    mean = scene.colors[inside].mean(axis=0)
    return min(palette, key=lambda name: float(np.sum((np.asarray(palette[name]) - mean) ** 2)))


def caption_problems(scene: Scene, config: SceneConfig) -> List[str]:
    """Check every caption against the scene geometry; returns a list of discrepancies."""
    colors = [observed_color(scene, o.box, config.palette) for o in scene.gt_objects]
    placed = [
        PlacedObject(category=o.category, color=c or "", box=o.box) for o, c in zip(scene.gt_objects, colors)
    ]
    problems = []

    def _find(color: str, category: str) -> Optional[int]:
        for j, p in enumerate(placed):
            if p.color == color and p.category == category:
                return j
        return None

    for i, obj in enumerate(scene.gt_objects):
        me = placed[i]
        for caption in obj.captions:
            where = f"{scene.scene_id}/gt_objects/{i}: {caption!r}"
            kind, match = next(
                ((k, p.match(caption)) for k, p in _TEMPLATE_PATTERNS.items() if p.match(caption)),
                (None, None),
            )
            if match is None:
                problems.append(f"{where}: matches no caption template")
                continue
            if kind in ("identity", "presence"):
                color, category, walls = match.group(1), match.group(2), match.group(3)
                if (color, category) != (me.color, me.category):
                    problems.append(f"{where}: names a {color} {category}, object is a {me.color} {me.category}")
                expected = wall_phrase(me.box, config.room_size, config.wall_proximity)
                if walls != expected:
                    problems.append(f"{where}: says {walls!r}, geometry gives {expected!r}")
            elif kind == "relation":
                color, category, relation, ocolor, ocategory = match.groups()
                if (color, category) != (me.color, me.category):
                    problems.append(f"{where}: names a {color} {category}, object is a {me.color} {me.category}")
                other = _find(ocolor, ocategory)
                if other is None:
                    problems.append(f"{where}: no {ocolor} {ocategory} in the scene")
                elif relation != relation_phrase(me.box, placed[other].box):
                    problems.append(
                        f"{where}: says {relation!r}, geometry gives {relation_phrase(me.box, placed[other].box)!r}"
                    )
            else:
                ordinal, category, color = match.groups()
                rank, _ = ordinal_rank(i, placed)
                if category != me.category or color != me.color:
                    problems.append(f"{where}: names a {color} {category}, object is a {me.color} {me.category}")
                elif ordinal not in ORDINALS or ORDINALS.index(ordinal) != rank:
                    problems.append(f"{where}: says {ordinal!r}, geometry gives {ORDINALS[rank]!r}")
    return problems
