# ============================================
#   Suppress — Evaluation
#   Greedy IoU matching, P / R / F1, tag strata
# ============================================

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import pandas as pd

from suppress.config import IOU_THRESHOLD, TOTAL_STRATUM, UNTAGGED_STRATUM
from suppress.core import iou
from suppress.errors import ConfigError, MixedImages, UnknownImage, UnknownTagKey
from suppress.ingest import group_by_image
from suppress.logger import log_info
from suppress.workers import parallel_map


# =====================================================
#   TYPES
# =====================================================

@dataclass(frozen=True)
class MatchResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0  # always 0 for detection
    matches: tuple = ()  # (detection index, annotation index, iou)

    def __add__(self, other: MatchResult) -> MatchResult:
        # per-image indices are meaningless once summed
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, 0, ())

    @classmethod
    def total(cls, results) -> MatchResult:
        out = cls()
        for r in results:
            out = out + r
        return out


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    counts: MatchResult = field(default_factory=MatchResult)
    stratum: Optional[str] = None

    @property
    def n_truth(self) -> int:
        return self.counts.tp + self.counts.fn

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


# =====================================================
#   MATCHING
# =====================================================

def _check_threshold(iou_threshold: float):
    if not (0.0 < iou_threshold < 1.0):
        raise ConfigError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")


def match(detections, annotations, iou_threshold: float = IOU_THRESHOLD) -> MatchResult:
    """
    Greedy protocol: detections by descending score, each takes the
    unmatched annotation of highest IoU >= threshold (ties → lower index).
    """
    _check_threshold(iou_threshold)
    detections = list(detections)
    annotations = list(annotations)

    image_ids = {d.image_id for d in detections} | {a.image_id for a in annotations}
    if len(image_ids) > 1:
        raise MixedImages(f"match() got items from several images: {sorted(image_ids)}")

    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = [False] * len(annotations)
    matches = []

    for i in order:
        best_j, best_iou = None, -1.0
        for j, ann in enumerate(annotations):
            if taken[j]:
                continue
            v = iou(detections[i].box, ann.box)
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None:
            taken[best_j] = True
            matches.append((i, best_j, best_iou))

    tp = len(matches)
    return MatchResult(tp, len(detections) - tp, len(annotations) - tp, 0, tuple(matches))


# =====================================================
#   METRICS
# =====================================================

def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(result: MatchResult, stratum: Optional[str] = None) -> MetricsReport:
    p = result.tp / (result.tp + result.fp) if (result.tp + result.fp) else 0.0
    r = result.tp / (result.tp + result.fn) if (result.tp + result.fn) else 0.0
    return MetricsReport(p, r, f1_score(p, r), result, stratum)


# =====================================================
#   DATASET-LEVEL EVALUATION
# =====================================================

def match_per_image(dataset, detections, iou_threshold: float = IOU_THRESHOLD, threads: int = 1) -> dict:
    """image_id → MatchResult over every image of the dataset."""
    _check_threshold(iou_threshold)
    truth = dataset.annotations_by_image()
    found = group_by_image(detections, dataset.image_ids())
    unknown = sorted(set(found) - set(truth))
    if unknown:
        raise UnknownImage(f"Detections reference unknown images: {', '.join(unknown[:5])}")

    ids = dataset.image_ids()
    results = parallel_map(lambda i: match(found[i], truth[i], iou_threshold), ids, threads)
    return dict(zip(ids, results))


def evaluate(dataset, detections, iou_threshold: float = IOU_THRESHOLD, threads: int = 1) -> MetricsReport:
    per_image = match_per_image(dataset, detections, iou_threshold, threads)
    return metrics(MatchResult.total(per_image.values()), TOTAL_STRATUM)


def image_strata(dataset, group_by: str) -> dict:
    """
    image_id → stratum value: the most common `group_by` tag among the
    image's annotations (ties → smallest value); untagged images map
    to UNTAGGED_STRATUM.
    """
    strata = {}
    for image_id, anns in dataset.annotations_by_image().items():
        values = Counter(v for v in (a.tag_value(group_by) for a in anns) if v is not None)
        if values:
            top = max(values.values())
            strata[image_id] = min(v for v, c in values.items() if c == top)
        else:
            strata[image_id] = UNTAGGED_STRATUM
    return strata


def evaluate_stratified(dataset, detections, iou_threshold: float = IOU_THRESHOLD, group_by: str = "lighting", threads: int = 1) -> list:
    """
    One report per tag value (counts summed over its images before
    computing P/R/F1), then a "total" report.
    """
    if not any(a.tag_value(group_by) is not None for a in dataset.annotations):
        raise UnknownTagKey(f"No annotation carries tag key '{group_by}'")

    per_image = match_per_image(dataset, detections, iou_threshold, threads)
    strata = image_strata(dataset, group_by)

    grouped = {}
    for image_id, result in per_image.items():
        grouped.setdefault(strata[image_id], []).append(result)

    reports = []
    for value in sorted(grouped):
        counts = MatchResult.total(grouped[value])
        if value == UNTAGGED_STRATUM and counts.tp + counts.fp + counts.fn == 0:
            continue
        reports.append(metrics(counts, f"{group_by}={value}"))

    reports.append(metrics(MatchResult.total(per_image.values()), TOTAL_STRATUM))
    log_info("evaluation", f"Stratified by '{group_by}': {len(reports) - 1} strata.")
    return reports


# =====================================================
#   REPORT OUTPUT
# =====================================================

def reports_to_json(reports) -> list:
    return [r.to_dict() for r in reports]


def render_table(reports) -> str:
    frame = pd.DataFrame(
        [
            {
                "stratum": r.stratum or TOTAL_STRATUM,
                "number": r.n_truth,
                "tp": r.counts.tp,
                "fp": r.counts.fp,
                "fn": r.counts.fn,
                "precision": f"{r.precision:.3f}",
                "recall": f"{r.recall:.3f}",
                "f1": f"{r.f1:.3f}",
            }
            for r in reports
        ]
    )
    return frame.to_string(index=False)
