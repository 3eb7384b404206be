# ============================================
#   Suppress — Suppressor net (shallow ConvNet)
#   3 conv (3x3, valid) + 2x2 max-pool, 2 dense, sigmoid output
#   numpy forward / analytic backward / SGD + momentum
# ============================================

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from suppress.config import (
    BATCH_SIZE,
    BCE_EPSILON,
    CONV_FILTERS,
    DENSE_HIDDEN,
    EPOCHS,
    EXPECTED_PARAMETERS,
    LABEL_IOU_THRESHOLD,
    LEARNING_RATE,
    MODEL_FORMAT_VERSION,
    MOMENTUM,
    PATCH_CHANNELS,
    PATCH_SIZE,
    WEIGHT_DECAY,
)
from suppress.core import crop, iou, resize_bilinear
from suppress.errors import (
    ConfigError,
    DataError,
    EmptyDataset,
    NoOverlap,
    ShapeMismatch,
    UnknownImage,
    VersionMismatch,
)
from suppress.logger import log_info, log_warning
from suppress.storage import read_json, write_json
from suppress.weighting import WeightedPatch, WeightingConfig, weight_patch
from suppress.workers import parallel_map

PARAM_NAMES = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "dense1_w", "dense1_b",
    "dense2_w", "dense2_b",
)

KERNEL = 3
POOL = 2

# Largest double below 1: a sigmoid output never reaches 1.0
_Y_MAX = float(np.nextafter(1.0, 0.0))
_Y_MIN = float(np.nextafter(0.0, 1.0))


# =====================================================
#   ARCHITECTURE MANIFEST
# =====================================================

@dataclass(frozen=True)
class Architecture:
    input_size: int = PATCH_SIZE
    in_channels: int = PATCH_CHANNELS
    filters: tuple = CONV_FILTERS
    hidden: int = DENSE_HIDDEN

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if len(self.filters) != 3 or min(self.filters) < 1:
            raise ConfigError(f"Architecture needs three positive filter counts, got {self.filters}")
        if self.hidden < 1 or self.in_channels < 1:
            raise ConfigError("Architecture needs hidden >= 1 and in_channels >= 1")
        side = self.input_size
        for _ in self.filters:
            side = (side - KERNEL + 1) // POOL
            if side < 1:
                raise ConfigError(f"Input size {self.input_size} too small for three conv+pool stages")

    def feature_shapes(self) -> list:
        """(stage, (h, w, c)) after every conv and pool."""
        trace = []
        side = self.input_size
        for i, out_c in enumerate(self.filters, start=1):
            side = side - KERNEL + 1
            trace.append((f"conv{i}", (side, side, out_c)))
            side = side // POOL
            trace.append((f"pool{i}", (side, side, out_c)))
        trace.append(("flatten", (side * side * self.filters[-1],)))
        trace.append(("dense1", (self.hidden,)))
        trace.append(("dense2", (1,)))
        return trace

    @property
    def flat_size(self) -> int:
        return self.feature_shapes()[-3][1][0]

    def param_shapes(self) -> dict:
        c0 = self.in_channels
        c1, c2, c3 = self.filters
        return {
            "conv1_w": (KERNEL, KERNEL, c0, c1), "conv1_b": (c1,),
            "conv2_w": (KERNEL, KERNEL, c1, c2), "conv2_b": (c2,),
            "conv3_w": (KERNEL, KERNEL, c2, c3), "conv3_b": (c3,),
            "dense1_w": (self.flat_size, self.hidden), "dense1_b": (self.hidden,),
            "dense2_w": (self.hidden, 1), "dense2_b": (1,),
        }

    def layer_counts(self) -> dict:
        shapes = self.param_shapes()
        counts = {}
        for layer in ("conv1", "conv2", "conv3", "dense1", "dense2"):
            counts[layer] = int(np.prod(shapes[f"{layer}_w"])) + int(np.prod(shapes[f"{layer}_b"]))
        return counts

    def parameter_count(self) -> int:
        return sum(self.layer_counts().values())

    def is_default(self) -> bool:
        return self == Architecture()

    def manifest(self) -> dict:
        return {
            "input": [self.input_size, self.input_size, self.in_channels],
            "filters": list(self.filters),
            "hidden": self.hidden,
            "kernel": KERNEL,
            "pool": POOL,
            "parameter_count": self.parameter_count(),
            "layers": [{"name": n, "shape": list(s)} for n, s in self.feature_shapes()],
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> Architecture:
        try:
            size, _, channels = manifest["input"]
            return cls(int(size), int(channels), tuple(manifest["filters"]), int(manifest["hidden"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ShapeMismatch(f"Invalid architecture manifest: {e}") from e


# =====================================================
#   MODEL
# =====================================================

@dataclass(eq=False)
class SuppressorModel:
    """
    Full parameter set. Conv weights are (3, 3, C_in, C_out), dense
    weights (fan_in, fan_out). The default architecture holds exactly
    45,153 scalars: 896 + 9,248 + 18,496 + 16,448 + 65.
    """

    params: dict
    architecture: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        expected = self.architecture.param_shapes()
        missing = [n for n in PARAM_NAMES if n not in self.params]
        if missing:
            raise ShapeMismatch(f"Model is missing parameters: {', '.join(missing)}")
        for name in PARAM_NAMES:
            shape = tuple(np.shape(self.params[name]))
            if shape != expected[name]:
                raise ShapeMismatch(f"{name}: shape {shape} but architecture expects {expected[name]}")

        total = self.parameter_count()
        if self.architecture.is_default() and total != EXPECTED_PARAMETERS:
            raise ShapeMismatch(f"Parameter census {total} != {EXPECTED_PARAMETERS}")

    @property
    def dtype(self):
        return self.params["conv1_w"].dtype

    def parameter_count(self) -> int:
        return int(sum(np.size(self.params[n]) for n in PARAM_NAMES))

    def copy(self) -> SuppressorModel:
        return SuppressorModel({n: self.params[n].copy() for n in PARAM_NAMES}, self.architecture)

    @classmethod
    def zeros(cls, architecture: Architecture = None, dtype=np.float32) -> SuppressorModel:
        architecture = architecture or Architecture()
        params = {n: np.zeros(s, dtype=dtype) for n, s in architecture.param_shapes().items()}
        return cls(params, architecture)

    @classmethod
    def he_init(cls, rng: np.random.Generator, architecture: Architecture = None, dtype=np.float32) -> SuppressorModel:
        """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
        architecture = architecture or Architecture()
        params = {}
        for name, shape in architecture.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[:-1]))
                params[name] = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
        return cls(params, architecture)


# =====================================================
#   LAYERS
# =====================================================

def _conv_forward(x, w, b):
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(0, 1))  # (H', W', C, 3, 3)
    return np.tensordot(win, w, axes=([2, 3, 4], [2, 0, 1])) + b


def _conv_backward(x, w, dz, need_input_grad: bool = True):
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(0, 1))
    dw = np.tensordot(win, dz, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
    db = dz.sum(axis=(0, 1))
    if not need_input_grad:
        return None, dw, db
    pad = KERNEL - 1
    dzp = np.pad(dz, ((pad, pad), (pad, pad), (0, 0)))
    dwin = sliding_window_view(dzp, (KERNEL, KERNEL), axis=(0, 1))  # (H, W, C_out, 3, 3)
    dx = np.tensordot(dwin, w[::-1, ::-1], axes=([2, 3, 4], [3, 0, 1]))
    return dx, dw, db


def _pool_forward(x):
    """2x2 max-pool, stride 2, floor. Ties → first element, row-major."""
    h, w, c = x.shape
    hp, wp = h // POOL, w // POOL
    blocks = (
        x[: hp * POOL, : wp * POOL]
        .reshape(hp, POOL, wp, POOL, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(hp, wp, POOL * POOL, c)
    )
    idx = np.argmax(blocks, axis=2)
    out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return out, idx


def _pool_backward(dout, idx, in_shape):
    hp, wp, c = dout.shape
    blocks = np.zeros((hp, wp, POOL * POOL, c), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[: hp * POOL, : wp * POOL] = (
        blocks.reshape(hp, wp, POOL, POOL, c).transpose(0, 2, 1, 3, 4).reshape(hp * POOL, wp * POOL, c)
    )
    return dx


def sigmoid(z: float) -> float:
    z = float(z)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# =====================================================
#   FORWARD
# =====================================================

@dataclass(eq=False)
class ForwardTrace:
    """Every intermediate of one forward pass (kept for backward)."""

    x: np.ndarray
    conv: list          # pre-ReLU conv outputs z1..z3
    relu: list          # post-ReLU conv outputs
    pool: list          # pooled maps
    pool_idx: list      # argmax routing per pool
    flat: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    logit: float
    y_raw: float        # unclamped sigmoid

    @property
    def y_hat(self) -> float:
        return min(max(self.y_raw, _Y_MIN), _Y_MAX)

    def routing(self) -> tuple:
        """ReLU on/off pattern + pool argmax, for kink detection."""
        return tuple(
            [(r > 0).tobytes() for r in self.relu]
            + [i.tobytes() for i in self.pool_idx]
            + [(self.hidden_pre > 0).tobytes()]
        )


def _as_input(model: SuppressorModel, patch) -> np.ndarray:
    arch = model.architecture
    if isinstance(patch, WeightedPatch):
        x = patch.as_input(model.dtype)
    else:
        x = np.asarray(patch, dtype=model.dtype)
    expected = (arch.input_size, arch.input_size, arch.in_channels)
    if x.shape != expected:
        raise ShapeMismatch(f"Input shape {x.shape} but model expects {expected}")
    return x


def forward_trace(model: SuppressorModel, patch) -> ForwardTrace:
    p = model.params
    a = _as_input(model, patch)
    x = a
    convs, relus, pools, idxs = [], [], [], []
    for i in (1, 2, 3):
        z = _conv_forward(a, p[f"conv{i}_w"], p[f"conv{i}_b"])
        r = np.maximum(z, 0)
        a, idx = _pool_forward(r)
        convs.append(z)
        relus.append(r)
        pools.append(a)
        idxs.append(idx)

    flat = a.reshape(-1)
    hidden_pre = flat @ p["dense1_w"] + p["dense1_b"]
    hidden = np.maximum(hidden_pre, 0)
    logit = float((hidden @ p["dense2_w"] + p["dense2_b"])[0])
    return ForwardTrace(x, convs, relus, pools, idxs, flat, hidden_pre, hidden, logit, sigmoid(logit))


def forward(model: SuppressorModel, patch) -> float:
    """Suppressor output ŷ in (0, 1)."""
    return forward_trace(model, patch).y_hat


# =====================================================
#   LOSS (average binary cross-entropy)
# =====================================================

def loss(y_hat: float, y: int) -> float:
    p = min(max(float(y_hat), BCE_EPSILON), 1.0 - BCE_EPSILON)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def batch_loss(y_hats, ys) -> float:
    values = [loss(p, y) for p, y in zip(y_hats, ys)]
    if not values:
        raise EmptyDataset("batch_loss of an empty batch")
    return sum(values) / len(values)


# =====================================================
#   BACKWARD
# =====================================================

def _backward_from_trace(model: SuppressorModel, trace: ForwardTrace, y: int) -> dict:
    p = model.params
    dtype = model.dtype
    grads = {}

    dlogit = dtype.type(trace.y_raw - y)
    grads["dense2_w"] = (trace.hidden * dlogit)[:, None]
    grads["dense2_b"] = np.array([dlogit], dtype=dtype)

    dh = p["dense2_w"][:, 0] * dlogit
    dh_pre = dh * (trace.hidden_pre > 0)
    grads["dense1_w"] = np.outer(trace.flat, dh_pre)
    grads["dense1_b"] = dh_pre

    da = (p["dense1_w"] @ dh_pre).reshape(trace.pool[2].shape)
    inputs = [trace.x, trace.pool[0], trace.pool[1]]
    for i in (3, 2, 1):
        dr = _pool_backward(da, trace.pool_idx[i - 1], trace.relu[i - 1].shape)
        dz = dr * (trace.conv[i - 1] > 0)
        da, dw, db = _conv_backward(inputs[i - 1], p[f"conv{i}_w"], dz, need_input_grad=i > 1)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db

    return {n: np.asarray(grads[n], dtype=dtype) for n in PARAM_NAMES}


def backward(model: SuppressorModel, patch, y: int) -> dict:
    """Exact gradients of the BCE loss w.r.t. every parameter."""
    return _backward_from_trace(model, forward_trace(model, patch), y)


# =====================================================
#   TRAINING
# =====================================================

@dataclass(frozen=True, eq=False)
class TrainingExample:
    patch: WeightedPatch
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"Training label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = MOMENTUM
    learning_rate: float = LEARNING_RATE
    weight_decay: float = WEIGHT_DECAY
    epochs: int = EPOCHS
    seed: int = 0
    batch_size: int = BATCH_SIZE

    def __post_init__(self):
        for name in ("momentum", "learning_rate", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def _sgd_step(model: SuppressorModel, grads: dict, velocity: dict, cfg: TrainConfig, scale: float):
    """Classical momentum; L2 decay on weights only."""
    for name in PARAM_NAMES:
        g = grads[name] * scale
        if name.endswith("_w") and cfg.weight_decay:
            g = g + cfg.weight_decay * model.params[name]
        velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * g
        model.params[name] += velocity[name]


def train(
    examples,
    cfg: TrainConfig,
    architecture: Architecture = None,
    dtype=np.float32,
):
    """
    Train a fresh He-initialized model. Returns (model, per-epoch mean loss).
    Single-threaded; bit-reproducible for a fixed seed.
    """
    examples = list(examples)
    if not examples:
        raise EmptyDataset("No training examples")

    labels = [ex.label for ex in examples]
    if len(set(labels)) < 2:
        log_warning("suppressor", f"Training set holds only label {labels[0]}; the net cannot learn a boundary.")

    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 1])
    model = SuppressorModel.he_init(rng, architecture, dtype)
    inputs = [_as_input(model, ex.patch) for ex in examples]
    velocity = {n: np.zeros_like(model.params[n]) for n in PARAM_NAMES}

    n = len(examples)
    history = []
    log_info(
        "suppressor",
        f"Training on {n} patches ({sum(labels)} positive), {cfg.epochs} epochs, "
        f"lr={cfg.learning_rate} momentum={cfg.momentum} decay={cfg.weight_decay}.",
    )

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            summed = None
            for i in batch:
                trace = forward_trace(model, inputs[i])
                total += loss(trace.y_hat, labels[i])
                g = _backward_from_trace(model, trace, labels[i])
                summed = g if summed is None else {k: summed[k] + g[k] for k in PARAM_NAMES}
            _sgd_step(model, summed, velocity, cfg, 1.0 / len(batch))

        history.append(total / n)
        log_info("suppressor", f"epoch {epoch}/{cfg.epochs} loss={history[-1]:.6f}")

    return model, history


# =====================================================
#   PATCH EXTRACTION / SCORING
# =====================================================

def extract_patch(image, box, weighting: WeightingConfig) -> WeightedPatch:
    """crop → 36x36 bilinear → weighting."""
    resized = resize_bilinear(crop(image, box), PATCH_SIZE, PATCH_SIZE)
    return weight_patch(resized, weighting)


def score(model: SuppressorModel, detections, images: dict, weighting: WeightingConfig = None, threads: int = 1) -> list:
    """(Detection, ŷ) per detection, input order kept."""
    weighting = weighting or WeightingConfig()
    detections = list(detections)
    for det in detections:
        if det.image_id not in images:
            raise UnknownImage(f"No image loaded for detection on '{det.image_id}'")

    def _score(det):
        return forward(model, extract_patch(images[det.image_id], det.box, weighting))

    y_hats = parallel_map(_score, detections, threads)
    return list(zip(detections, y_hats))


def build_examples(dataset, images: dict, weighting: WeightingConfig = None, iou_threshold: float = LABEL_IOU_THRESHOLD, threads: int = 1) -> list:
    """
    One TrainingExample per detection: positive iff its best IoU with
    a ground-truth box of the same image is >= iou_threshold.
    """
    weighting = weighting or WeightingConfig()
    truth = dataset.annotations_by_image()

    def _example(det):
        best = max((iou(det.box, ann.box) for ann in truth.get(det.image_id, [])), default=0.0)
        try:
            patch = extract_patch(images[det.image_id], det.box, weighting)
        except NoOverlap:
            return None
        return TrainingExample(patch, 1 if best >= iou_threshold else 0)

    examples = parallel_map(_example, dataset.detections, threads)
    skipped = sum(ex is None for ex in examples)
    if skipped:
        log_warning("suppressor", f"Skipped {skipped} detections lying outside their image.")
    examples = [ex for ex in examples if ex is not None]
    log_info("suppressor", f"Built {len(examples)} training patches ({sum(ex.label for ex in examples)} positive).")
    return examples


# =====================================================
#   MODEL FILE (JSON)
# =====================================================

def save_model(model: SuppressorModel, path: str) -> str:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture": model.architecture.manifest(),
        "dtype": str(model.dtype),
        "parameters": {n: model.params[n].astype(np.float64).tolist() for n in PARAM_NAMES},
    }
    write_json(path, payload)
    log_info("suppressor", f"Model saved to {path} ({model.parameter_count()} parameters).")
    return path


def load_model(path: str) -> SuppressorModel:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise ShapeMismatch(f"{path}: model file must be a JSON object")

    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: model format_version {version} but this build reads version {MODEL_FORMAT_VERSION}"
        )

    architecture = Architecture.from_manifest(payload.get("architecture") or {})
    dtype = np.dtype(payload.get("dtype", "float32"))
    raw = payload.get("parameters") or {}
    params = {}
    for name in PARAM_NAMES:
        if name not in raw:
            raise ShapeMismatch(f"{path}: parameter '{name}' missing")
        try:
            params[name] = np.asarray(raw[name], dtype=dtype)
        except (ValueError, TypeError) as e:
            raise ShapeMismatch(f"{path}: parameter '{name}' is ragged or non-numeric") from e

    model = SuppressorModel(params, architecture)
    log_info("suppressor", f"Model loaded from {path}.")
    return model
