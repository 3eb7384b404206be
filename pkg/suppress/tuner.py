# ============================================
#   Suppress — Threshold tuner
#   (th1, th2) grid sweep → recall-precision Pareto front → C1 / C2
# ============================================

from __future__ import annotations

from dataclasses import dataclass

from suppress.config import BASELINE_TH1, DEFAULT_GRID, IOU_THRESHOLD
from suppress.errors import ConfigError, EmptyGrid
from suppress.evaluation import MatchResult, match, metrics
from suppress.logger import log_info
from suppress.workers import parallel_map


# =====================================================
#   TYPES
# =====================================================

@dataclass(frozen=True)
class ThresholdConfig:
    th1: float  # upstream detector score
    th2: float  # suppressor output

    def __post_init__(self):
        for name in ("th1", "th2"):
            value = float(getattr(self, name))
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class SweepResult:
    points: tuple   # (ThresholdConfig, MetricsReport)
    front: tuple    # indices into points, ascending recall
    c1: int         # max F1 on the front
    c2: int         # max recall on the front

    def to_rows(self) -> list:
        front = set(self.front)
        rows = []
        for i, (cfg, report) in enumerate(self.points):
            rows.append({
                "th1": cfg.th1,
                "th2": cfg.th2,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
                "on_front": i in front,
                "is_c1": i == self.c1,
                "is_c2": i == self.c2,
            })
        return rows


# =====================================================
#   FILTERING
# =====================================================

def apply_thresholds(scored, cfg: ThresholdConfig) -> list:
    """Keep detections with score >= th1 AND ŷ >= th2."""
    return [det for det, y_hat in scored if det.score >= cfg.th1 and y_hat >= cfg.th2]


# =====================================================
#   PARETO FRONT
# =====================================================

def dominates(a, b) -> bool:
    """(P, R) pair a dominates b: no worse on both, strictly better on one."""
    return a[0] >= b[0] and a[1] >= b[1] and (a[0] > b[0] or a[1] > b[1])


def front_of(points) -> list:
    """
    Indices of the non-dominated (P, R) points, ascending recall.
    Sweep by descending recall, tracking the best precision seen at
    strictly higher recall.
    """
    points = [(float(p), float(r)) for p, r in points]
    order = sorted(range(len(points)), key=lambda i: (-points[i][1], -points[i][0], i))

    front = []
    best_higher = float("-inf")
    k = 0
    while k < len(order):
        recall = points[order[k]][1]
        group = []
        while k < len(order) and points[order[k]][1] == recall:
            group.append(order[k])
            k += 1
        group_best = max(points[i][0] for i in group)
        for i in group:
            p = points[i][0]
            if p == group_best and p > best_higher:
                front.append(i)
        best_higher = max(best_higher, group_best)

    return sorted(front, key=lambda i: (points[i][1], i))


# =====================================================
#   SWEEP
# =====================================================

def _validate_grid(values, axis: str) -> list:
    values = [float(v) for v in values]
    if not values:
        raise EmptyGrid(f"{axis} grid is empty")
    for v in values:
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"{axis} grid value {v} outside [0, 1]")
    return values


def _by_image(scored) -> dict:
    by_image = {}
    for det, y_hat in scored:
        by_image.setdefault(det.image_id, []).append((det, y_hat))
    return by_image


def _evaluate_point(by_image: dict, truth: dict, cfg: ThresholdConfig, iou_threshold: float):
    counts = MatchResult()
    for image_id, anns in truth.items():
        kept = apply_thresholds(by_image.get(image_id, []), cfg)
        counts = counts + match(kept, anns, iou_threshold)
    return metrics(counts)


def select_operating_points(points, front) -> tuple:
    """
    (c1, c2) among `front` indices of `points` ((ThresholdConfig, MetricsReport)
    pairs): c1 maximizes F1, c2 maximizes recall. Ties: higher recall,
    then lower th1, then lower th2.
    """
    if not front:
        raise EmptyGrid("Cannot select operating points from an empty front")

    def _key(i, primary):
        cfg, report = points[i]
        return (primary(report), report.recall, -cfg.th1, -cfg.th2)

    c1 = max(front, key=lambda i: _key(i, lambda r: r.f1))
    c2 = max(front, key=lambda i: _key(i, lambda r: r.recall))
    return c1, c2


def sweep(scored, dataset, th1_grid=DEFAULT_GRID, th2_grid=None, iou_threshold: float = IOU_THRESHOLD, threads: int = 1) -> SweepResult:
    """
    Evaluate every (th1, th2) pair on the whole dataset, then pick the
    front and its C1 / C2 operating points.
    """
    th1_values = _validate_grid(th1_grid, "th1")
    th2_values = _validate_grid(th1_grid if th2_grid is None else th2_grid, "th2")

    truth = dataset.annotations_by_image()
    by_image = _by_image(scored)

    configs = [ThresholdConfig(a, b) for a in th1_values for b in th2_values]
    reports = parallel_map(lambda cfg: _evaluate_point(by_image, truth, cfg, iou_threshold), configs, threads)
    points = tuple(zip(configs, reports))

    front = front_of([(r.precision, r.recall) for r in reports])
    c1, c2 = select_operating_points(points, front)

    log_info(
        "tuner",
        f"Swept {len(points)} configurations, front size {len(front)}; "
        f"C1 th1={configs[c1].th1} th2={configs[c1].th2} F1={reports[c1].f1:.3f}, "
        f"C2 th1={configs[c2].th1} th2={configs[c2].th2} R={reports[c2].recall:.3f}.",
    )
    return SweepResult(points, tuple(front), c1, c2)


# =====================================================
#   BASELINE COMPARISON
# =====================================================

def baseline(scored, dataset, th1: float = BASELINE_TH1, iou_threshold: float = IOU_THRESHOLD):
    """Unsuppressed operating point: upstream threshold only (th2 = 0)."""
    return _evaluate_point(
        _by_image(scored),
        dataset.annotations_by_image(),
        ThresholdConfig(th1, 0.0),
        iou_threshold,
    )


def compare(base, tuned) -> dict:
    """
    Absolute and relative gains of `tuned` over `base` for P, R and F1.
    Relative gain is None when the baseline value is 0.
    """
    out = {}
    for name in ("precision", "recall", "f1"):
        b, t = getattr(base, name), getattr(tuned, name)
        out[name] = {
            "baseline": b,
            "tuned": t,
            "delta": t - b,
            "relative": (t / b - 1.0) if b > 0 else None,
        }
    return out
