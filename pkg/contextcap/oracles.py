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
"""Brute-force reference computations used by ``contextcap verify`` and the tests.

These deliberately share no code with the implementations they check: they
loop over explicit index ranges and recompute everything from scratch.
"""
import math
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

from contextcap.scene import Box3D


def _grams(tokens: Sequence[str], n: int) -> List[str]:
    return [" ".join(tokens[i : i + n]) for i in range(0, len(tokens) - n + 1)]


def _count(items: List[str], item: str) -> int:
    return sum(1 for x in items if x == item)


def cider_d(candidate, references, corpus, sigma: float = 6.0) -> float:
    if len(candidate) == 0 or len(references) == 0:
        return 0.0
    n_docs = len(corpus)

    def idf(gram: str, n: int) -> float:
        df = 0
        for refs in corpus:
            if any(gram in _grams(r, n) for r in refs):
                df += 1
        return math.log(n_docs) - math.log(max(df, 1))

    def weights(tokens, n, use_idf):
        grams = _grams(tokens, n)
        return {g: _count(grams, g) * (idf(g, n) if use_idf else 1.0) for g in set(grams)}

    def cosine(a, b):
        na = sum(x * x for x in a.values())
        nb = sum(x * x for x in b.values())
        if na == 0 or nb == 0:
            return 0.0
        num = 0.0
        for g in a:
            if g in b:
                num += min(a[g], b[g]) * b[g]
        return num / math.sqrt(na * nb)

    per_ref = []
    for ref in references:
        gauss = math.exp(-((len(candidate) - len(ref)) ** 2) / (2 * sigma * sigma))
        sims = []
        for n in range(1, 5):
            a, b = weights(candidate, n, True), weights(ref, n, True)
            if all(v == 0 for v in a.values()) and all(v == 0 for v in b.values()):
                a, b = weights(candidate, n, False), weights(ref, n, False)
            sims.append(cosine(a, b) * gauss)
        per_ref.append(sum(sims) / 4.0)
    return 10.0 * sum(per_ref) / len(per_ref)


def bleu4(candidate, references) -> float:
    references = [r for r in references if len(r) > 0]
    if len(candidate) == 0 or len(references) == 0:
        return 0.0
    logs = []
    for n in range(1, 5):
        grams = _grams(candidate, n)
        hits = 0
        for g in set(grams):
            best = max(_count(_grams(r, n), g) for r in references)
            hits += min(_count(grams, g), best)
        if hits == 0 and n == 1:
            return 0.0
        logs.append(math.log((hits + 1) / (len(grams) + 1) if hits == 0 else hits / len(grams)))
    c = len(candidate)
    lengths = sorted(len(r) for r in references)
    r = lengths[0]
    for length in lengths:
        if abs(length - c) < abs(r - c):
            r = length
    bp = math.exp(1 - r / c) if c <= r else 1.0
    return bp * math.exp(sum(logs) / 4)


def lcs(a, b) -> int:
    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l(candidate, references, beta: float = 1.2) -> float:
    if len(candidate) == 0:
        return 0.0
    ps = [lcs(tuple(candidate), tuple(r)) / len(candidate) for r in references if r]
    rs = [lcs(tuple(candidate), tuple(r)) / len(r) for r in references if r]
    if not ps or max(ps) == 0 or max(rs) == 0:
        return 0.0
    p, r = max(ps), max(rs)
    return (1 + beta * beta) * p * r / (r + beta * beta * p)


def _alignments(candidate, reference):
    """Every one-to-one exact alignment, as lists of (cand_pos, ref_pos)."""
    out = []

    def walk(i, used, pairs):
        if i == len(candidate):
            out.append(list(pairs))
            return
        walk(i + 1, used, pairs)
        for j in range(len(reference)):
            if j not in used and reference[j] == candidate[i]:
                walk(i + 1, used | {j}, pairs + [(i, j)])

    walk(0, frozenset(), [])
    return out


def meteor_exact(candidate, references, alpha=0.9, beta=3.0, gamma=0.5) -> float:
    scores = [0.0]
    for ref in references:
        if len(candidate) == 0 or len(ref) == 0:
            continue
        best_m, best_ch = 0, 0
        for pairs in _alignments(candidate, ref):
            m = len(pairs)
            ch = 0
            for k in range(m):
                if k == 0 or pairs[k][0] != pairs[k - 1][0] + 1 or pairs[k][1] != pairs[k - 1][1] + 1:
                    ch += 1
            if m > best_m or (m == best_m and ch < best_ch):
                best_m, best_ch = m, ch
        if best_m == 0:
            continue
        p, r = best_m / len(candidate), best_m / len(ref)
        f = p * r / (alpha * p + (1 - alpha) * r)
        whole = best_ch == 1 and best_m == len(candidate) and best_m == len(ref)
        pen = 0.0 if whole else gamma * (best_ch / best_m) ** beta
        scores.append(f * (1 - pen))
    return max(scores)


def gated_mean(records, metric, threshold: float = 0.5) -> float:
    if len(records) == 0:
        return 0.0
    scores = []
    for rec in records:
        ok = rec.iou is not None and rec.iou > threshold
        scores.append(metric(rec.generated, rec.references) if ok else 0.0)
    return 100.0 * sum(scores) / len(scores)


def iou(a: Box3D, b: Box3D) -> float:
    inter = 1.0
    for axis in range(3):
        lo = max(a.center[axis] - a.size[axis] / 2, b.center[axis] - b.size[axis] / 2)
        hi = min(a.center[axis] + a.size[axis] / 2, b.center[axis] + b.size[axis] / 2)
        inter *= max(0.0, hi - lo)
    va = a.size[0] * a.size[1] * a.size[2]
    vb = b.size[0] * b.size[1] * b.size[2]
    return inter / (va + vb - inter)


def average_precision(detections, ground_truths, threshold: float = 0.5) -> float:
    """AP from the enumerated PR curve: precision at each recall level is the best precision at any deeper cut."""
    if len(ground_truths) == 0 or len(detections) == 0:
        return 0.0
    ranked = sorted(enumerate(detections), key=lambda item: (-item[1].confidence, item[0]))
    hits = []
    taken = set()
    for _, det in ranked:
        candidates = [(iou(det.box, g.box), j) for j, g in enumerate(ground_truths) if g.scene_id == det.scene_id]
        best_iou, best_j = 0.0, None
        for value, j in candidates:
            if value > best_iou:
                best_iou, best_j = value, j
        ok = best_j is not None and best_iou > threshold and best_j not in taken
        if ok:
            taken.add(best_j)
        hits.append(1 if ok else 0)
    curve = []
    for k in range(1, len(hits) + 1):
        tp = sum(hits[:k])
        curve.append((tp / len(ground_truths), tp / k))
    ap = 0.0
    previous = 0.0
    for recall, _ in curve:
        if recall > previous:
            ap += (recall - previous) * max(p for r, p in curve if r >= recall)
            previous = recall
    return ap


def mean_average_precision(detections, ground_truths, threshold: float = 0.5) -> float:
    cats = sorted(set(g.category for g in ground_truths))
    if not cats:
        return 0.0
    total = 0.0
    for c in cats:
        total += average_precision(
            [d for d in detections if d.category == c], [g for g in ground_truths if g.category == c], threshold
        )
    return total / len(cats)


def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def fps_is_max_min(points, indices) -> bool:
    """Every pick after the first maximizes distance to the picks before it (lowest index on ties)."""
    for step in range(1, len(indices)):
        chosen = list(indices[:step])
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(_dist(points[i], points[c]) for c in chosen)
            if d > best_d:
                best, best_d = i, d
        if best != indices[step]:
            return False
    return True


def radius_members(points, center_index: int, radius: float) -> List[int]:
    return [i for i in range(len(points)) if _dist(points[i], points[center_index]) <= radius]


def best_target(boxes, gt: Box3D) -> Tuple[int, float]:
    scores = [iou(b, gt) for b in boxes]
    top = max(scores)
    return scores.index(top), top


def k_smallest(origin, points, k: int, exclude: Optional[int] = None) -> List[int]:
    ranked = sorted((_dist(origin, p), i) for i, p in enumerate(points) if i != exclude)
    return [i for _, i in ranked[:k]]


def single_linkage_groups(centers, tau: float) -> int:
    seen = set()
    groups = 0
    for start in range(len(centers)):
        if start in seen:
            continue
        groups += 1
        stack = [start]
        seen.add(start)
        while stack:
            i = stack.pop()
            for j in range(len(centers)):
                if j not in seen and _dist(centers[i], centers[j]) <= tau:
                    seen.add(j)
                    stack.append(j)
    return groups
