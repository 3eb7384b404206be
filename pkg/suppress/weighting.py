# ============================================
#   Suppress — Weighting component
#   2x2 grid + colour k-means → apple-pixel mask
# ============================================

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from suppress.config import (
    KMEANS_CLUSTERS,
    KMEANS_EPS,
    KMEANS_MAX_ITERS,
    KMEANS_RESTARTS,
    PATCH_SIZE,
)
from suppress.core import Image
from suppress.errors import ConfigError, ShapeMismatch, TooFewPixels


# =====================================================
#   CONFIG / RESULT TYPES
# =====================================================

@dataclass(frozen=True)
class WeightingConfig:
    n_clusters: int = KMEANS_CLUSTERS
    max_iters: int = KMEANS_MAX_ITERS
    seed: int = 0
    convergence_eps: float = KMEANS_EPS
    n_init: int = KMEANS_RESTARTS

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ConfigError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.n_init < 1:
            raise ConfigError(f"n_init must be >= 1, got {self.n_init}")
        if self.convergence_eps < 0:
            raise ConfigError(f"convergence_eps must be >= 0, got {self.convergence_eps}")


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray        # (N,) cluster index per pixel
    centers: np.ndarray       # (k, 3) float64
    inertia: float
    history: tuple            # inertia after every assignment step (winning run)
    iterations: int
    run: int = 0              # which restart won


@dataclass(frozen=True, eq=False)
class WeightedPatch:
    """
    Patch with non-apple pixels zeroed.
    cell_counts = (N^a, N^b, N^c, N^d): top-left, top-right,
    bottom-left, bottom-right.
    """

    masked: Image
    mask: np.ndarray
    cell_counts: tuple

    def as_input(self, dtype=np.float32) -> np.ndarray:
        """H×W×3 network input scaled to [0, 1]."""
        return (self.masked.pixels / 255.0).astype(dtype)


# =====================================================
#   K-MEANS (k-means++ seeding, Lloyd iterations)
# =====================================================

def _rng(seed: int, stream: int, run: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stream, run])


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def _assign(points: np.ndarray, centers: np.ndarray):
    d2 = _squared_distances(points, centers)
    labels = np.argmin(d2, axis=1)  # ties → lowest cluster index
    return labels, d2[np.arange(len(points)), labels]


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)

    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[c] = points[idx]
        closest = np.minimum(closest, np.sum((points - centers[c]) ** 2, axis=1))

    return centers


def _update_centers(points, labels, d2, centers) -> np.ndarray:
    k = len(centers)
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, points)

    new_centers = centers.copy()
    filled = counts > 0
    new_centers[filled] = sums[filled] / counts[filled, None]

    # Empty cluster → farthest point from its assigned center
    far = d2.copy()
    for c in np.flatnonzero(~filled):
        idx = int(np.argmax(far))
        new_centers[c] = points[idx]
        far[idx] = -1.0
    return new_centers


def _lloyd(points: np.ndarray, cfg: WeightingConfig, rng: np.random.Generator, run: int) -> KMeansResult:
    centers = _plus_plus_init(points, cfg.n_clusters, rng)
    labels, d2 = _assign(points, centers)
    inertia = float(d2.sum())
    history = [inertia]

    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        centers = _update_centers(points, labels, d2, centers)
        new_labels, d2 = _assign(points, centers)
        new_inertia = float(d2.sum())
        history.append(new_inertia)

        converged = np.array_equal(new_labels, labels) or (inertia - new_inertia) < cfg.convergence_eps
        labels, inertia = new_labels, new_inertia
        if converged:
            break

    return KMeansResult(labels, centers, inertia, tuple(history), iterations, run)


def kmeans_colors(pixels, cfg: WeightingConfig, stream: int = 0) -> KMeansResult:
    """
    Best of `cfg.n_init` seeded runs. Run r draws from
    default_rng([seed, stream, r]); ties on inertia keep the earlier run.
    """
    points = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    k = cfg.n_clusters
    if len(points) < k:
        raise TooFewPixels(f"k-means needs at least {k} pixels, got {len(points)}")

    best = None
    for run in range(cfg.n_init):
        result = _lloyd(points, cfg, _rng(cfg.seed, stream, run), run)
        if best is None or result.inertia < best.inertia:
            best = result
        if best.inertia == 0.0:
            break
    return best


# =====================================================
#   PATCH WEIGHTING
# =====================================================

def cell_counts(mask: np.ndarray) -> tuple:
    """Apple-pixel counts of the 2x2 grid cells, row-major (a, b, c, d)."""
    h2, w2 = mask.shape[0] // 2, mask.shape[1] // 2
    return (
        int(mask[:h2, :w2].sum()),
        int(mask[:h2, w2:].sum()),
        int(mask[h2:, :w2].sum()),
        int(mask[h2:, w2:].sum()),
    )


def weight_patch(patch: Image, cfg: WeightingConfig, stream: int = 0) -> WeightedPatch:
    if patch.width != PATCH_SIZE or patch.height != PATCH_SIZE:
        raise ShapeMismatch(
            f"weight_patch expects {PATCH_SIZE}x{PATCH_SIZE}, got {patch.width}x{patch.height}"
        )

    result = kmeans_colors(patch.pixels.reshape(-1, 3), cfg, stream)

    # The class holding most pixels is the apple region (ties → lowest index)
    sizes = np.bincount(result.labels, minlength=cfg.n_clusters)
    apple = int(np.argmax(sizes))

    mask = (result.labels == apple).reshape(PATCH_SIZE, PATCH_SIZE)
    masked = np.where(mask[:, :, None], patch.pixels, 0).astype(np.uint8)
    mask.flags.writeable = False

    counts = cell_counts(mask)
    return WeightedPatch(Image(masked), mask, counts)
