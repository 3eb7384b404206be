# ============================================
#   Suppress — Synthetic orchard generator
#   Disk apples over foliage texture + noisy upstream proposals
# ============================================

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from suppress.config import (
    ANNOTATIONS_FILE,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_LIGHTINGS,
    DETECTIONS_FILE,
    IMAGES_DIR,
    LIGHTINGS,
    MANIFEST_FILE,
    PROVENANCE_FILE,
    SPLITS,
    VARIETIES,
)
from suppress.core import Annotation, BBox, Detection, Image, iou
from suppress.errors import ConfigError, DataError
from suppress.ingest import encode_ppm, serialize_detections, serialize_via
from suppress.logger import log_info
from suppress.storage import write_bytes, write_json
from suppress.workers import parallel_map

FROM_TRUTH = "truth"
SPURIOUS = "spurious"

SPURIOUS_MAX_IOU = 0.1   # spurious proposals stay clear of every apple
TRUTH_MIN_IOU = 0.3      # jittered truth proposals stay on their apple

# Per-variety colour ranges (low, high) per channel
PALETTES = {
    # red blush over a yellow background
    "gala": {"base": ((200, 170, 40), (235, 205, 80)), "blush": ((150, 20, 20), (200, 50, 45))},
    # smooth yellow skin
    "blondee": {"base": ((215, 195, 60), (245, 230, 110)), "blush": None},
}

# contrast, brightness, colour cast (r, g, b)
LIGHTING_TRANSFORMS = {
    "overcast": (0.85, -5.0, (0.97, 1.00, 1.05)),
    "direct": (1.15, 20.0, (1.06, 1.02, 0.94)),
    "back": (0.75, -35.0, (1.00, 1.00, 1.00)),
    "side": (1.05, 0.0, (1.03, 1.00, 0.97)),
}

FOLIAGE = {
    "base": (60, 110, 45),
    "dark": (35, 75, 30),
    "light": (105, 155, 60),
    "bark": (95, 70, 45),
}


# =====================================================
#   CONFIG / SCENE TYPES
# =====================================================

def _check_range(name: str, value, lo_bound=None, hi_bound=None) -> tuple:
    try:
        lo, hi = value
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be a (low, high) pair, got {value!r}") from e
    if lo > hi:
        raise ConfigError(f"{name} range is not ordered: {lo} > {hi}")
    if lo_bound is not None and lo < lo_bound:
        raise ConfigError(f"{name} lower bound {lo} below {lo_bound}")
    if hi_bound is not None and hi > hi_bound:
        raise ConfigError(f"{name} upper bound {hi} above {hi_bound}")
    return lo, hi


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    image_size: tuple = DEFAULT_IMAGE_SIZE          # (w, h)
    n_apples: tuple = (3, 6)                        # inclusive
    apple_radius: tuple = (9, 16)                   # inclusive, pixels
    apple_palette: tuple = VARIETIES                # variety drawn per scene
    occlusion_fraction: tuple = (0.0, 0.4)
    lightings: tuple = DEFAULT_LIGHTINGS            # drawn per scene
    fp_rate: float = 2.0                            # mean spurious proposals / image
    localization_noise: float = 2.0                 # proposal jitter stddev, pixels
    split: str = "train"

    def __post_init__(self):
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ConfigError(f"image_size must be at least 8x8, got {w}x{h}")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        object.__setattr__(self, "n_apples", tuple(int(v) for v in _check_range("n_apples", self.n_apples, 0)))
        rlo, rhi = _check_range("apple_radius", self.apple_radius, 2)
        if 2 * rhi >= min(w, h):
            raise ConfigError(f"apple_radius {rhi} too large for {w}x{h} images")
        object.__setattr__(self, "apple_radius", (int(rlo), int(rhi)))
        object.__setattr__(self, "occlusion_fraction", _check_range("occlusion_fraction", self.occlusion_fraction, 0.0, 1.0))

        palette = tuple(self.apple_palette)
        if not palette or any(p not in PALETTES for p in palette):
            raise ConfigError(f"apple_palette must name varieties from {sorted(PALETTES)}, got {palette}")
        object.__setattr__(self, "apple_palette", palette)

        lightings = tuple(self.lightings)
        if not lightings or any(l not in LIGHTINGS for l in lightings):
            raise ConfigError(f"lightings must be drawn from {LIGHTINGS}, got {lightings}")
        object.__setattr__(self, "lightings", lightings)

        if self.fp_rate < 0:
            raise ConfigError(f"fp_rate must be >= 0, got {self.fp_rate}")
        if self.localization_noise < 0:
            raise ConfigError(f"localization_noise must be >= 0, got {self.localization_noise}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split}")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image_id: str
    image: Image
    annotations: tuple
    detections: tuple
    provenance: tuple   # FROM_TRUTH | SPURIOUS per detection (oracle use only)
    variety: str
    lighting: str


# =====================================================
#   RENDERING HELPERS
# =====================================================

def _color(rng, bounds) -> np.ndarray:
    lo, hi = bounds
    return np.array([rng.uniform(a, b) for a, b in zip(lo, hi)])


def _disk(xx, yy, cx, cy, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _ellipse(xx, yy, cx, cy, a, b, phi):
    c, s = np.cos(phi), np.sin(phi)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _background(rng, w, h, xx, yy) -> np.ndarray:
    canvas = np.empty((h, w, 3))
    canvas[:] = FOLIAGE["base"]

    # a trunk/branch band
    bx = rng.uniform(0, w)
    bw = rng.uniform(3, max(4.0, w / 12))
    canvas[np.abs(xx - bx) <= bw / 2] = FOLIAGE["bark"]

    # leaf texture
    for _ in range(int(rng.integers(8, 16))):
        tone = FOLIAGE["dark"] if rng.random() < 0.5 else FOLIAGE["light"]
        mask = _ellipse(xx, yy, rng.uniform(0, w), rng.uniform(0, h),
                        rng.uniform(4, 14), rng.uniform(2, 7), rng.uniform(0, np.pi))
        canvas[mask] = tone

    canvas += rng.normal(0.0, 8.0, size=canvas.shape)
    return canvas


def _place_apples(rng, cfg: SceneConfig) -> list:
    """Non-overlapping (cx, cy, r) circles fully inside the image."""
    w, h = cfg.image_size
    count = int(rng.integers(cfg.n_apples[0], cfg.n_apples[1] + 1))
    placed = []
    for _ in range(count):
        r = int(rng.integers(cfg.apple_radius[0], cfg.apple_radius[1] + 1))
        for _attempt in range(200):
            cx = int(rng.integers(r, w - r + 1))
            cy = int(rng.integers(r, h - r + 1))
            if all((cx - px) ** 2 + (cy - py) ** 2 >= (r + pr) ** 2 for px, py, pr in placed):
                break
        placed.append((cx, cy, r))  # last candidate kept if the scene is crowded
    return placed


def _paint_apple(canvas, rng, xx, yy, apple, variety):
    cx, cy, r = apple
    disk = _disk(xx, yy, cx, cy, r)
    palette = PALETTES[variety]

    color = np.broadcast_to(_color(rng, palette["base"]), canvas.shape).copy()
    if palette["blush"] is not None:
        ang = rng.uniform(0, 2 * np.pi)
        bx, by = cx + 0.35 * r * np.cos(ang), cy + 0.35 * r * np.sin(ang)
        blush = _disk(xx, yy, bx, by, rng.uniform(0.75, 0.95) * r)
        color[blush] = _color(rng, palette["blush"])

    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) / r
    shade = (1.0 - 0.25 * np.clip(dist, 0, 1))[..., None]
    canvas[disk] = (color * shade)[disk]
    return disk


def _occlude(canvas, rng, xx, yy, apple, disk, max_fraction):
    """Foliage ellipse on the apple's rim covering at most max_fraction of it."""
    if max_fraction <= 0:
        return 0.0
    cx, cy, r = apple
    ang = rng.uniform(0, 2 * np.pi)
    ex, ey = cx + r * np.cos(ang), cy + r * np.sin(ang)
    a, b = r * rng.uniform(0.5, 1.0), r * rng.uniform(0.3, 0.7)
    phi = rng.uniform(0, np.pi)
    tone = FOLIAGE["dark"] if rng.random() < 0.5 else FOLIAGE["light"]

    area = disk.sum()
    for _ in range(12):
        leaf = _ellipse(xx, yy, ex, ey, a, b, phi)
        covered = (leaf & disk).sum() / area
        if covered <= max_fraction:
            canvas[leaf] = tone
            return float(covered)
        a, b = a * 0.8, b * 0.8
    return 0.0


def _apply_lighting(canvas, rng, lighting) -> np.ndarray:
    contrast, brightness, cast = LIGHTING_TRANSFORMS[lighting]
    cast = np.array(cast) * rng.uniform(0.97, 1.03, size=3)
    out = ((canvas - 128.0) * contrast + 128.0 + brightness) * cast
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# =====================================================
#   PROPOSALS
# =====================================================

def _jittered(rng, truth: BBox, sigma: float) -> BBox:
    """Truth box with clipped gaussian jitter (±1.5σ per component)."""
    if sigma <= 0:
        return truth
    dx, dy, dw, dh = np.clip(rng.normal(0.0, sigma, size=4), -1.5 * sigma, 1.5 * sigma)
    return BBox(
        round(truth.x + dx, 2),
        round(truth.y + dy, 2),
        round(max(1.0, truth.w + dw), 2),
        round(max(1.0, truth.h + dh), 2),
    )


def _spurious_box(rng, cfg: SceneConfig, truth_boxes):
    """A leaf-sized box clear of every apple (IoU < 0.1), or None if none was found."""
    w, h = cfg.image_size
    for _ in range(30):
        r = int(rng.integers(cfg.apple_radius[0], cfg.apple_radius[1] + 1))
        x = int(rng.integers(0, w - 2 * r + 1))
        y = int(rng.integers(0, h - 2 * r + 1))
        box = BBox(x, y, 2 * r, 2 * r)
        if all(iou(box, t) < SPURIOUS_MAX_IOU for t in truth_boxes):
            return box
    return None


# =====================================================
#   GENERATE
# =====================================================

def _render_scene(cfg: SceneConfig, index: int) -> SyntheticScene:
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 2, index])
    w, h = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    image_id = f"{cfg.split}_{index:05d}"

    variety = str(cfg.apple_palette[int(rng.integers(len(cfg.apple_palette)))])
    lighting = str(cfg.lightings[int(rng.integers(len(cfg.lightings)))])

    apples = _place_apples(rng, cfg)
    truth_boxes = [BBox(cx - r, cy - r, 2 * r, 2 * r) for cx, cy, r in apples]
    n_spurious = int(rng.poisson(cfg.fp_rate))
    spurious_boxes = [_spurious_box(rng, cfg, truth_boxes) for _ in range(n_spurious)]
    spurious_boxes = [box for box in spurious_boxes if box is not None]

    canvas = _background(rng, w, h, xx, yy)

    # leaf clusters the upstream detector mistakes for apples
    for box in spurious_boxes:
        tone = FOLIAGE["light"] if rng.random() < 0.5 else FOLIAGE["dark"]
        leaf = _ellipse(xx, yy, box.x + box.w / 2, box.y + box.h / 2,
                        box.w * rng.uniform(0.35, 0.5), box.h * rng.uniform(0.3, 0.45), rng.uniform(0, np.pi))
        canvas[leaf] = np.array(tone) * rng.uniform(0.9, 1.1)

    occ_lo, occ_hi = cfg.occlusion_fraction
    for apple in apples:
        disk = _paint_apple(canvas, rng, xx, yy, apple, variety)
        _occlude(canvas, rng, xx, yy, apple, disk, rng.uniform(occ_lo, occ_hi))

    pixels = _apply_lighting(canvas, rng, lighting)

    tags = frozenset({f"variety={variety}", f"lighting={lighting}"})
    annotations = tuple(Annotation(image_id, box, tags) for box in truth_boxes)

    sigma = cfg.localization_noise
    proposals = []
    for (cx, cy, r), box in zip(apples, truth_boxes):
        jittered = _jittered(rng, box, sigma)
        if sigma <= r / 4 and iou(jittered, box) < TRUTH_MIN_IOU:
            raise DataError(f"{image_id}: jittered proposal drifted off its apple (IoU < {TRUTH_MIN_IOU})")
        proposals.append((Detection(image_id, jittered, round(float(rng.beta(8.0, 2.0)), 6)), FROM_TRUTH))
    for box in spurious_boxes:
        proposals.append((Detection(image_id, box, round(float(rng.beta(5.0, 3.0)), 6)), SPURIOUS))

    order = rng.permutation(len(proposals)) if proposals else []
    detections = tuple(proposals[i][0] for i in order)
    provenance = tuple(proposals[i][1] for i in order)

    return SyntheticScene(image_id, Image(pixels), annotations, detections, provenance, variety, lighting)


def generate(cfg: SceneConfig, n_scenes: int, threads: int = 1) -> list:
    """Deterministic scenes; scene i depends only on (seed, i)."""
    if n_scenes < 1:
        raise ConfigError(f"n_scenes must be >= 1, got {n_scenes}")
    scenes = parallel_map(lambda i: _render_scene(cfg, i), range(n_scenes), threads)
    log_info(
        "synthgen",
        f"Generated {len(scenes)} scenes: {sum(len(s.annotations) for s in scenes)} apples, "
        f"{sum(p == SPURIOUS for s in scenes for p in s.provenance)} spurious proposals.",
    )
    return scenes


# =====================================================
#   EXPORT (PPM + VIA + detections + manifest)
# =====================================================

def export(scenes, dir_path: str, split: str = None, threads: int = 1) -> str:
    """Write a dataset directory ingest can load as-is. Returns the manifest path."""
    scenes = list(scenes)
    split = split or (scenes[0].image_id.split("_", 1)[0] if scenes else "train")

    def _write_image(scene):
        rel = f"{IMAGES_DIR}/{scene.image_id}.ppm"
        write_bytes(os.path.join(dir_path, rel), encode_ppm(scene.image))
        return scene.image_id, rel

    images = dict(parallel_map(_write_image, scenes, threads))

    annotations = [a for s in scenes for a in s.annotations]
    detections = [d for s in scenes for d in s.detections]
    write_bytes(os.path.join(dir_path, ANNOTATIONS_FILE), serialize_via(annotations, [s.image_id for s in scenes]))
    write_bytes(os.path.join(dir_path, DETECTIONS_FILE), serialize_detections(detections))
    write_json(os.path.join(dir_path, PROVENANCE_FILE), {s.image_id: list(s.provenance) for s in scenes})

    manifest_path = os.path.join(dir_path, MANIFEST_FILE)
    write_json(manifest_path, {
        "split": split,
        "images": images,
        "annotations_file": ANNOTATIONS_FILE,
        "detections_file": DETECTIONS_FILE,
    })
    log_info("synthgen", f"Exported {len(scenes)} scenes to {dir_path}.")
    return manifest_path
