# ============================================
#   Suppress — Ingest
#   VIA rectangles / detection JSON / PPM (P6) / manifests
# ============================================

from __future__ import annotations

import os
from dataclasses import dataclass, field
from numbers import Real

import numpy as np

from suppress.config import SPLITS
from suppress.core import Annotation, BBox, Detection, Image
from suppress.errors import (
    FormatError,
    InvalidBox,
    ParseError,
    UnknownImage,
    UnsupportedShape,
    UsageError,
)
from suppress.logger import log_info, log_warning
from suppress.storage import dumps, loads, read_bytes, read_json
from suppress.workers import parallel_map


# =====================================================
#   DATASET
# =====================================================

@dataclass(frozen=True)
class Dataset:
    """
    One split of images + ground truth + upstream detections.
    Every annotation/detection must reference a known image id.
    """

    images: dict
    annotations: tuple = ()
    detections: tuple = ()
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise UsageError(f"Unknown split '{self.split}' (expected one of {', '.join(SPLITS)})")
        object.__setattr__(self, "images", dict(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "detections", tuple(self.detections))

        for kind, items in (("annotation", self.annotations), ("detection", self.detections)):
            for item in items:
                if item.image_id not in self.images:
                    raise UnknownImage(f"{kind} references unknown image_id '{item.image_id}'")

    def image_ids(self) -> list:
        return sorted(self.images)

    def annotations_by_image(self) -> dict:
        return group_by_image(self.annotations, self.image_ids())

    def detections_by_image(self) -> dict:
        return group_by_image(self.detections, self.image_ids())


def group_by_image(items, image_ids=()) -> dict:
    """image_id → list of items, input order kept; listed ids always present."""
    grouped = {image_id: [] for image_id in image_ids}
    for item in items:
        grouped.setdefault(item.image_id, []).append(item)
    return grouped


# =====================================================
#   VIA (VGG Image Annotator) — rectangle subset
# =====================================================

def _image_id_from_filename(filename: str) -> str:
    return os.path.splitext(os.path.basename(filename))[0]


def _string_tags(attrs) -> set:
    """
    String-valued attributes become "key=value" tags.
    An empty value yields the bare key.
    """
    tags = set()
    if not isinstance(attrs, dict):
        return tags
    for key, value in attrs.items():
        if isinstance(value, str):
            tags.add(f"{key}={value}" if value else str(key))
    return tags


def _number(shape: dict, name: str, where: str) -> float:
    value = shape.get(name)
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ParseError(f"{where}: missing or non-numeric '{name}'")
    return float(value)


def parse_via(json_text) -> list:
    """
    Parse a VIA export (plain per-file dict, or a project file carrying
    `_via_img_metadata`). Only `rect` regions are accepted.
    """
    data = loads(json_text, what="VIA annotations")
    if isinstance(data, dict) and "_via_img_metadata" in data:
        data = data["_via_img_metadata"]
    if not isinstance(data, dict):
        raise ParseError("VIA annotations: top level must be an object keyed by file")

    annotations = []
    for file_key, entry in data.items():
        if not isinstance(entry, dict):
            raise ParseError(f"VIA file '{file_key}': entry must be an object")
        filename = entry.get("filename")
        if not isinstance(filename, str) or not filename:
            raise ParseError(f"VIA file '{file_key}': missing 'filename'")

        regions = entry.get("regions")
        if isinstance(regions, dict):
            # VIA 1.x keyed regions by stringified index
            regions = [regions[k] for k in sorted(regions, key=lambda k: int(k) if str(k).isdigit() else k)]
        if not isinstance(regions, list):
            raise ParseError(f"VIA file '{filename}': missing 'regions' list")

        image_id = _image_id_from_filename(filename)
        file_tags = _string_tags(entry.get("file_attributes"))

        for idx, region in enumerate(regions):
            where = f"VIA file '{filename}' region {idx}"
            if not isinstance(region, dict) or not isinstance(region.get("shape_attributes"), dict):
                raise ParseError(f"{where}: missing 'shape_attributes'")
            shape = region["shape_attributes"]
            if shape.get("name") != "rect":
                raise UnsupportedShape(f"{where}: unsupported shape '{shape.get('name')}'")

            try:
                box = BBox(
                    _number(shape, "x", where),
                    _number(shape, "y", where),
                    _number(shape, "width", where),
                    _number(shape, "height", where),
                )
            except InvalidBox as e:
                raise ParseError(f"{where}: {e}") from e

            tags = file_tags | _string_tags(region.get("region_attributes"))
            annotations.append(Annotation(image_id, box, frozenset(tags)))

    log_info("ingest", f"Parsed {len(annotations)} VIA rectangles from {len(data)} files.")
    return annotations


def _via_number(value: float):
    return int(value) if float(value).is_integer() else value


def serialize_via(annotations, image_ids=(), extension: str = ".ppm") -> bytes:
    """
    Inverse of parse_via. Tags go to region_attributes; ids listed in
    `image_ids` get an entry even without regions.
    """
    grouped = group_by_image(annotations, image_ids)
    payload = {}
    for image_id, items in grouped.items():
        filename = f"{image_id}{extension}"
        regions = []
        for ann in items:
            attrs = {}
            for tag in sorted(ann.tags):
                key, sep, value = tag.partition("=")
                attrs[key] = value if sep else ""
            regions.append({
                "shape_attributes": {
                    "name": "rect",
                    "x": _via_number(ann.box.x),
                    "y": _via_number(ann.box.y),
                    "width": _via_number(ann.box.w),
                    "height": _via_number(ann.box.h),
                },
                "region_attributes": attrs,
            })
        payload[f"{filename}-1"] = {
            "filename": filename,
            "size": -1,
            "regions": regions,
            "file_attributes": {},
        }
    return dumps(payload)


# =====================================================
#   DETECTIONS (flat JSON array)
# =====================================================

def parse_detections(json_text) -> list:
    data = loads(json_text, what="detections")
    if not isinstance(data, list):
        raise ParseError("detections: top level must be an array")

    detections = []
    for idx, item in enumerate(data):
        where = f"detection {idx}"
        if not isinstance(item, dict):
            raise ParseError(f"{where}: must be an object")

        image_id = item.get("image_id")
        if not isinstance(image_id, str):
            raise ParseError(f"{where}: missing string 'image_id'")

        bbox = item.get("bbox")
        if (
            not isinstance(bbox, list)
            or len(bbox) != 4
            or any(isinstance(v, bool) or not isinstance(v, Real) for v in bbox)
        ):
            raise ParseError(f"{where}: 'bbox' must be [x, y, w, h]")

        score = item.get("score")
        if isinstance(score, bool) or not isinstance(score, Real):
            raise ParseError(f"{where}: missing numeric 'score'")

        try:
            box = BBox(*bbox)
        except InvalidBox as e:
            raise ParseError(f"{where}: {e}") from e

        # ScoreOutOfRange raised by Detection itself
        detections.append(Detection(image_id, box, score))

    return detections


def serialize_detections(detections, extra=None) -> bytes:
    """
    Inverse of parse_detections. `extra[i]` (a dict) is merged into item i.
    """
    payload = []
    for i, det in enumerate(detections):
        item = {"image_id": det.image_id, "bbox": det.box.as_list(), "score": det.score}
        if extra is not None:
            item.update(extra[i])
        payload.append(item)
    return dumps(payload)


# =====================================================
#   PPM (P6, maxval 255)
# =====================================================

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _header_tokens(data: bytes, count: int) -> tuple[list, int]:
    """
    Read `count` whitespace-separated header tokens, skipping `#` comments.
    Returns the tokens and the offset just past the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise FormatError("PPM: truncated header")
        tokens.append(data[start:pos])
    return tokens, pos


def load_image_ppm(data: bytes) -> Image:
    tokens, pos = _header_tokens(data, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"PPM: bad magic {tokens[0]!r} (expected b'P6')")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError(f"PPM: non-numeric header field ({e})") from e
    if maxval != 255:
        raise FormatError(f"PPM: maxval {maxval} not supported (expected 255)")
    if width < 1 or height < 1:
        raise FormatError(f"PPM: invalid dimensions {width}x{height}")

    # exactly one whitespace byte separates header from payload
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("PPM: missing whitespace after header")
    pos += 1

    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise FormatError(f"PPM: truncated payload ({len(payload)} of {expected} bytes)")

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels)


def encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels).tobytes()


# =====================================================
#   MANIFEST → DATASET
# =====================================================

def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def load_dataset(manifest_path: str, require_detections: bool = False) -> Dataset:
    """
    Build a Dataset from a manifest:
    {"split", "images": {id: path}, "annotations_file", "detections_file"?}
    Relative paths resolve against the manifest's directory.
    """
    manifest = read_json(manifest_path)
    if not isinstance(manifest, dict):
        raise UsageError(f"{manifest_path}: manifest must be a JSON object")

    base_dir = os.path.dirname(os.path.abspath(manifest_path))

    for key in ("split", "images", "annotations_file"):
        if key not in manifest:
            raise UsageError(f"{manifest_path}: manifest is missing '{key}'")
    if require_detections and not manifest.get("detections_file"):
        raise UsageError(f"{manifest_path}: manifest is missing 'detections_file'")

    images = manifest["images"]
    if not isinstance(images, dict):
        raise UsageError(f"{manifest_path}: 'images' must map image_id to path")
    images = {str(k): _resolve(base_dir, v) for k, v in images.items()}

    annotations = parse_via(read_bytes(_resolve(base_dir, manifest["annotations_file"])))

    detections = []
    if manifest.get("detections_file"):
        detections = parse_detections(read_bytes(_resolve(base_dir, manifest["detections_file"])))

    dataset = Dataset(images, annotations, detections, manifest["split"])
    if not annotations:
        log_warning("ingest", f"{manifest_path}: no annotations (background-only split).")
    log_info(
        "ingest",
        f"Dataset '{dataset.split}': {len(images)} images, "
        f"{len(dataset.annotations)} annotations, {len(dataset.detections)} detections.",
    )
    return dataset


def load_images(dataset: Dataset, threads: int = 1, image_ids=None) -> dict:
    """image_id → Image, loaded from PPM files (optionally in parallel)."""
    ids = sorted(image_ids) if image_ids is not None else dataset.image_ids()
    for image_id in ids:
        if image_id not in dataset.images:
            raise UnknownImage(f"Unknown image_id '{image_id}'")

    def _load(image_id):
        return load_image_ppm(read_bytes(dataset.images[image_id]))

    loaded = parallel_map(_load, ids, threads)
    return dict(zip(ids, loaded))
