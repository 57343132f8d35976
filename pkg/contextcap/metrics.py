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
"""Captioning metrics, IoU-gated aggregation and detection mAP.

Per-sentence scores: CIDEr-D in [0, 10], the others in [0, 1]. Aggregates
(m@0.5IoU, mAP@0.5IoU in reports) are scaled by 100.

Frozen conventions:

* BLEU-4 is sentence level. The reference length is the closest one (ties go
  to the shorter), the brevity penalty is exp(1 - r/c) when c <= r, and an
  order n >= 2 with no clipped match uses (0 + 1) / (total_n + 1).
* METEOR runs in exact-match mode only (no stemming, synonyms or
  paraphrases). The alignment maximizes matches, then minimizes chunks. A
  candidate that equals the reference is a single full chunk and carries no
  fragmentation penalty.
* When the tf-idf vectors of both sides vanish (every n-gram occurs in every
  idf document, e.g. a single-document corpus), CIDEr-D compares clipped
  term frequencies instead.
"""
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dbt_common.exceptions import DbtValidationError

from contextcap.context import iou3d
from contextcap.scene import Box3D

Tokens = Sequence[str]
SentenceMetric = Callable[[Tokens, Sequence[Tokens]], float]

NGRAM_ORDER = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
METEOR_MAX_ALIGNMENTS = 5000
IOU_THRESHOLD = 0.5
REPORT_SCALE = 100.0


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _all_ngrams(tokens: Tokens, order: int = NGRAM_ORDER) -> Counter:
    counts: Counter = Counter()
    for n in range(1, order + 1):
        counts.update(ngram_counts(tokens, n))
    return counts


class CiderD:
    """CIDEr-D scorer with document frequencies fixed at construction.

    ``corpus`` is one reference set per described object; the document
    frequency of an n-gram is the number of sets in which any reference
    contains it.
    """

    def __init__(self, corpus: Sequence[Sequence[Tokens]], n: int = NGRAM_ORDER, sigma: float = CIDER_SIGMA):
        if not corpus:
            raise DbtValidationError("CIDEr-D needs a non-empty idf corpus")
        self.n = n
        self.sigma = sigma
        self.document_frequency: Counter = Counter()
        for refs in corpus:
            seen = set()
            for ref in refs:
                seen.update(_all_ngrams(ref, n))
            self.document_frequency.update(seen)
        self.log_corpus_size = math.log(float(len(corpus)))

    def _vectors(self, tokens: Tokens):
        tf = [dict(ngram_counts(tokens, k)) for k in range(1, self.n + 1)]
        vec = []
        for counts in tf:
            vec.append(
                {
                    g: c * (self.log_corpus_size - math.log(max(1.0, self.document_frequency[g])))
                    for g, c in counts.items()
                }
            )
        return tf, vec

    @staticmethod
    def _clipped_cosine(hyp: Dict, ref: Dict) -> float:
        sq_hyp = sum(v * v for v in hyp.values())
        sq_ref = sum(v * v for v in ref.values())
        if sq_hyp == 0.0 or sq_ref == 0.0:
            return 0.0
        dot = sum(min(v, ref.get(g, 0.0)) * ref.get(g, 0.0) for g, v in hyp.items())
        return dot / math.sqrt(sq_hyp * sq_ref)

    def score(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        if not candidate or not references:
            return 0.0
        tf_hyp, vec_hyp = self._vectors(candidate)
        total = 0.0
        for ref in references:
            tf_ref, vec_ref = self._vectors(ref)
            delta = float(len(candidate) - len(ref))
            penalty = math.exp(-(delta**2) / (2 * self.sigma**2))
            per_order = []
            for k in range(self.n):
                if not any(vec_hyp[k].values()) and not any(vec_ref[k].values()):
                    sim = self._clipped_cosine(tf_hyp[k], tf_ref[k])
                else:
                    sim = self._clipped_cosine(vec_hyp[k], vec_ref[k])
                per_order.append(sim * penalty)
            total += sum(per_order) / self.n
        return CIDER_SCALE * total / len(references)


def cider_d(
    candidates: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
    idf_corpus: Optional[Sequence[Sequence[Tokens]]] = None,
) -> Tuple[List[float], float]:
    """Per-sentence CIDEr-D and their mean; the idf corpus defaults to ``references``."""
    scorer = CiderD(idf_corpus if idf_corpus is not None else references)
    scores = [scorer.score(c, r) for c, r in zip(candidates, references)]
    return scores, float(np.mean(scores)) if scores else 0.0


def _closest_ref_length(c: int, references: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def bleu4(candidate: Tokens, references: Sequence[Tokens]) -> float:
    references = [r for r in references if r]
    if not candidate or not references:
        return 0.0
    log_precision = 0.0
    for n in range(1, NGRAM_ORDER + 1):
        counts = ngram_counts(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            max_ref |= ngram_counts(ref, n)
        matches = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = sum(counts.values())
        if matches == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1.0)
        else:
            precision = matches / total
        log_precision += math.log(precision)
    c = len(candidate)
    r = _closest_ref_length(c, references)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_precision / NGRAM_ORDER)


def lcs_length(a: Tokens, b: Tokens) -> int:
    row = [0] * (len(b) + 1)
    for x in a:
        prev_diag = 0
        for j, y in enumerate(b, start=1):
            above = row[j]
            row[j] = prev_diag + 1 if x == y else max(row[j], row[j - 1])
            prev_diag = above
    return row[-1]


def rouge_l(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    if not candidate or not references:
        return 0.0
    precision = recall = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = lcs_length(candidate, ref)
        precision = max(precision, lcs / len(candidate))
        recall = max(recall, lcs / len(ref))
    if precision == 0.0 or recall == 0.0:
        return 0.0
    return (1 + beta**2) * precision * recall / (recall + beta**2 * precision)


def _chunks(pairs: Sequence[Tuple[int, int]]) -> int:
    pairs = sorted(pairs)
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or i != pairs[k - 1][0] + 1 or j != pairs[k - 1][1] + 1:
            chunks += 1
    return chunks


def _word_alignments(cand_pos: List[int], ref_pos: List[int]) -> List[List[Tuple[int, int]]]:
    m = min(len(cand_pos), len(ref_pos))
    options = []
    for chosen in itertools.combinations(cand_pos, m):
        for targets in itertools.permutations(ref_pos, m):
            options.append(list(zip(chosen, targets)))
    return options


def _tile_alignment(candidate: Tokens, reference: Tokens) -> List[Tuple[int, int]]:
    """Greedy tiling: repeatedly match the longest common run of unmatched tokens.

    Ties go to the lowest candidate start, then the lowest reference start.
    Every word ends up matched min(candidate count, reference count) times.
    """
    free_c = [True] * len(candidate)
    free_r = [True] * len(reference)
    pairs: List[Tuple[int, int]] = []
    while True:
        best = (0, 0, 0)
        run = [[0] * (len(reference) + 1) for _ in range(len(candidate) + 1)]
        for i in range(len(candidate) - 1, -1, -1):
            for j in range(len(reference) - 1, -1, -1):
                if free_c[i] and free_r[j] and candidate[i] == reference[j]:
                    run[i][j] = run[i + 1][j + 1] + 1
                    if run[i][j] >= best[0]:
                        best = (run[i][j], i, j)
        length, i, j = best
        if length == 0:
            return pairs
        for k in range(length):
            free_c[i + k] = free_r[j + k] = False
            pairs.append((i + k, j + k))


def meteor_alignment(candidate: Tokens, reference: Tokens) -> Tuple[int, int]:
    """(matches, chunks) of the maximum exact alignment with the fewest chunks.

    Exhaustive up to ``METEOR_MAX_ALIGNMENTS`` candidate alignments; beyond that
    the alignment comes from greedy tiling and its chunk count may exceed the
    minimum.
    """
    words = sorted(set(candidate) & set(reference))
    per_word = []
    combinations = 1
    for w in words:
        cand_pos = [i for i, t in enumerate(candidate) if t == w]
        ref_pos = [j for j, t in enumerate(reference) if t == w]
        m = min(len(cand_pos), len(ref_pos))
        combinations *= math.comb(len(cand_pos), m) * math.perm(len(ref_pos), m)
        per_word.append((cand_pos, ref_pos))
    if not per_word:
        return 0, 0
    if combinations > METEOR_MAX_ALIGNMENTS:
        # too many to enumerate; the chunk count is then an upper bound on the optimum
        pairs = _tile_alignment(candidate, reference)
        return len(pairs), _chunks(pairs)
    best = None
    for combo in itertools.product(*(_word_alignments(c, r) for c, r in per_word)):
        pairs = [p for part in combo for p in part]
        chunks = _chunks(pairs)
        if best is None or chunks < best[1]:
            best = (len(pairs), chunks)
    return best


def meteor_exact(candidate: Tokens, references: Sequence[Tokens]) -> float:
    best = 0.0
    for ref in references:
        if not candidate or not ref:
            continue
        matches, chunks = meteor_alignment(candidate, ref)
        if matches == 0:
            continue
        precision = matches / len(candidate)
        recall = matches / len(ref)
        fmean = precision * recall / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
        if chunks == 1 and matches == len(candidate) == len(ref):
            penalty = 0.0
        else:
            penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
        best = max(best, fmean * (1.0 - penalty))
    return best


@dataclass(frozen=True)
class EvalRecord:
    gt_id: str
    candidate_index: Optional[int]
    iou: Optional[float]
    generated: List[str] = field(default_factory=list)
    references: List[List[str]] = field(default_factory=list)

    def __post_init__(self):
        if (self.candidate_index is None) != (self.iou is None):
            raise DbtValidationError(f"{self.gt_id}: matched IoU must be present iff a candidate is matched")


def gate_and_aggregate(
    records: Sequence[EvalRecord], metric: SentenceMetric, threshold: float = IOU_THRESHOLD
) -> float:
    """Mean over GT objects of the metric, zero unless the matched IoU exceeds ``threshold``; x100."""
    if not records:
        return 0.0
    total = 0.0
    for record in records:
        if record.iou is not None and record.iou > threshold:
            total += metric(record.generated, record.references)
    return REPORT_SCALE * total / len(records)


def match_predictions(
    gt_boxes: Sequence[Box3D], candidate_boxes: Sequence[Box3D], pad: Optional[np.ndarray] = None
) -> List[Tuple[Optional[int], Optional[float]]]:
    """Each GT takes its highest-IoU non-pad candidate (lowest index on ties); a candidate may serve several GTs."""
    live = np.ones(len(candidate_boxes), dtype=bool) if pad is None else ~np.asarray(pad, dtype=bool)
    matches = []
    for gt in gt_boxes:
        best, best_iou = None, 0.0
        for i, box in enumerate(candidate_boxes):
            if not live[i]:
                continue
            iou = iou3d(gt, box)
            if iou > best_iou:
                best, best_iou = i, iou
        matches.append((best, best_iou if best is not None else None))
    return matches


@dataclass(frozen=True)
class ScoredBox:
    """A detection (with confidence) or a ground truth box (confidence unused)."""

    scene_id: str
    category: str
    box: Box3D
    confidence: float = 1.0


def average_precision(
    detections: Sequence[ScoredBox], ground_truths: Sequence[ScoredBox], threshold: float = IOU_THRESHOLD
) -> float:
    """All-point interpolated AP for one category.

    Detections are visited by descending confidence (stable). Each takes the
    highest-IoU ground truth of its scene; it is a true positive when that IoU
    exceeds ``threshold`` and the ground truth is still unclaimed.
    """
    if not ground_truths:
        return 0.0
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    claimed = set()
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        best, best_iou = None, 0.0
        for j, gt in enumerate(ground_truths):
            if gt.scene_id != det.scene_id:
                continue
            iou = iou3d(det.box, gt.box)
            if iou > best_iou:
                best, best_iou = j, iou
        if best is not None and best_iou > threshold and best not in claimed:
            claimed.add(best)
            tp[rank] = 1.0
    if not len(order):
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / len(ground_truths)
    precision = cum_tp / np.arange(1, len(order) + 1)
    recall = np.concatenate([[0.0], recall, [1.0]])
    precision = np.concatenate([[0.0], precision, [0.0]])
    for k in range(len(precision) - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    steps = np.nonzero(recall[1:] != recall[:-1])[0]
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def map_at_0_5iou(
    detections: Sequence[ScoredBox], ground_truths: Sequence[ScoredBox], threshold: float = IOU_THRESHOLD
) -> float:
    """Mean AP over the categories present in the ground truth."""
    categories = sorted({gt.category for gt in ground_truths})
    if not categories:
        return 0.0
    aps = [
        average_precision(
            [d for d in detections if d.category == c],
            [g for g in ground_truths if g.category == c],
            threshold,
        )
        for c in categories
    ]
    return float(np.mean(aps))


@dataclass
class EvalReport:
    cider: float
    bleu4: float
    meteor: float
    rouge_l: float
    map: float
    n_gt_objects: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "C@0.5IoU": self.cider,
            "B-4@0.5IoU": self.bleu4,
            "M@0.5IoU": self.meteor,
            "R@0.5IoU": self.rouge_l,
            "mAP@0.5IoU": self.map,
            "n_gt_objects": self.n_gt_objects,
        }


def report(
    records: Sequence[EvalRecord],
    detections: Sequence[ScoredBox],
    ground_truths: Sequence[ScoredBox],
    threshold: float = IOU_THRESHOLD,
) -> EvalReport:
    """Captioning columns gated at ``threshold``; CIDEr-D idf comes from the evaluated references."""
    corpus = [r.references for r in records if r.references]
    cider = CiderD(corpus).score if corpus else (lambda c, r: 0.0)
    return EvalReport(
        cider=gate_and_aggregate(records, cider, threshold),
        bleu4=gate_and_aggregate(records, bleu4, threshold),
        meteor=gate_and_aggregate(records, meteor_exact, threshold),
        rouge_l=gate_and_aggregate(records, rouge_l, threshold),
        map=REPORT_SCALE * map_at_0_5iou(detections, ground_truths, threshold),
        n_gt_objects=len(records),
    )
