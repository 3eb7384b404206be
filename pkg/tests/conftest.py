import os

import numpy as np
import pytest

from suppress.core import Annotation, BBox, Detection, Image
from suppress.ingest import Dataset, encode_ppm, serialize_detections, serialize_via
from suppress.logger import get_logger
from suppress.storage import write_bytes, write_json

# bind the stderr handler to the real stream before capsys swaps it
get_logger("tests")


def solid(width, height, color) -> Image:
    return Image.filled(width, height, color)


def write_dataset(root, images, annotations=(), detections=None, split="train") -> str:
    """
    Lay out a dataset directory the way export does and return the
    manifest path. `detections=None` leaves detections_file out.
    """
    root = str(root)
    paths = {}
    for image_id, img in images.items():
        rel = f"images/{image_id}.ppm"
        write_bytes(os.path.join(root, rel), encode_ppm(img))
        paths[image_id] = rel

    write_bytes(os.path.join(root, "annotations.json"), serialize_via(annotations, list(images)))
    manifest = {"split": split, "images": paths, "annotations_file": "annotations.json"}
    if detections is not None:
        write_bytes(os.path.join(root, "detections.json"), serialize_detections(detections))
        manifest["detections_file"] = "detections.json"

    manifest_path = os.path.join(root, "manifest.json")
    write_json(manifest_path, manifest)
    return manifest_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_strata_dataset():
    """
    Image "a" (lighting=direct): 2 apples, one hit + one far miss → tp1 fp1 fn1.
    Image "b" (lighting=back): 1 apple, hit → tp1.
    """
    a1 = Annotation("a", BBox(10, 10, 20, 20), {"lighting=direct"})
    a2 = Annotation("a", BBox(60, 60, 20, 20), {"lighting=direct"})
    b1 = Annotation("b", BBox(5, 5, 30, 30), {"lighting=back"})
    detections = [
        Detection("a", BBox(10, 10, 20, 20), 0.9),
        Detection("a", BBox(100, 0, 10, 10), 0.7),
        Detection("b", BBox(5, 5, 30, 30), 0.8),
    ]
    dataset = Dataset({"a": "a.ppm", "b": "b.ppm"}, [a1, a2, b1], detections)
    return dataset, detections
