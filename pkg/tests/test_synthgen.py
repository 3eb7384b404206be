import os

import numpy as np
import orjson
import pytest
from numpy.testing import assert_array_equal

from suppress import synthgen
from suppress.core import BBox, iou
from suppress.errors import ConfigError, DataError
from suppress.ingest import load_dataset, load_images, parse_detections, parse_via
from suppress.synthgen import FROM_TRUTH, SPURIOUS, SPURIOUS_MAX_IOU, SceneConfig, export, generate

SMALL = dict(image_size=(64, 48), apple_radius=(4, 8))


def test_vacuous_scenes():
    scenes = generate(SceneConfig(seed=1, n_apples=(0, 0), fp_rate=0.0, **SMALL), 4)
    assert all(s.annotations == () and s.detections == () for s in scenes)


def test_same_seed_same_scenes():
    cfg = SceneConfig(seed=7, **SMALL)
    a, b = generate(cfg, 5), generate(cfg, 5, threads=3)
    for s, t in zip(a, b):
        assert s.image_id == t.image_id
        assert_array_equal(s.image.pixels, t.image.pixels)
        assert s.detections == t.detections
        assert s.annotations == t.annotations


def test_other_seed_other_scenes():
    a = generate(SceneConfig(seed=1, **SMALL), 1)[0]
    b = generate(SceneConfig(seed=2, **SMALL), 1)[0]
    assert not np.array_equal(a.image.pixels, b.image.pixels)


def test_apple_count_and_spurious_rate():
    cfg = SceneConfig(seed=3, n_apples=(5, 5), occlusion_fraction=(0.0, 0.0), fp_rate=2.0, **SMALL)
    scenes = generate(cfg, 200)

    assert all(len(s.annotations) == 5 for s in scenes)
    spurious = [sum(p == SPURIOUS for p in s.provenance) for s in scenes]
    assert np.mean(spurious) == pytest.approx(2.0, rel=0.2)
    assert all(sum(p == FROM_TRUTH for p in s.provenance) == 5 for s in scenes)


def test_truth_proposals_stay_on_their_apple():
    cfg = SceneConfig(seed=4, localization_noise=1.0, **SMALL)
    for scene in generate(cfg, 20):
        for det, origin in zip(scene.detections, scene.provenance):
            if origin == FROM_TRUTH:
                assert max(iou(det.box, a.box) for a in scene.annotations) >= 0.3


def test_spurious_proposals_stay_off_the_apples():
    cfg = SceneConfig(seed=12, n_apples=(6, 6), fp_rate=4.0, **SMALL)
    for scene in generate(cfg, 30):
        for det, origin in zip(scene.detections, scene.provenance):
            if origin == SPURIOUS:
                assert all(iou(det.box, a.box) < SPURIOUS_MAX_IOU for a in scene.annotations)


def test_spurious_proposals_that_cannot_fit_are_dropped():
    # one 8x8 apple fills a 9x9 image; no leaf box can clear it
    cfg = SceneConfig(seed=3, image_size=(9, 9), n_apples=(1, 1), apple_radius=(4, 4), fp_rate=5.0)
    for scene in generate(cfg, 10):
        assert scene.provenance == (FROM_TRUTH,)
        assert len(scene.detections) == 1


def test_drifting_truth_proposal_is_an_error(monkeypatch):
    monkeypatch.setattr(synthgen, "_jittered", lambda rng, box, sigma: BBox(0, 0, 1, 1))
    cfg = SceneConfig(seed=1, n_apples=(1, 1), localization_noise=1.0, **SMALL)
    with pytest.raises(DataError):
        generate(cfg, 1)


def test_annotations_carry_variety_and_lighting():
    cfg = SceneConfig(seed=5, apple_palette=("blondee",), lightings=("side",), **SMALL)
    for scene in generate(cfg, 3):
        assert (scene.variety, scene.lighting) == ("blondee", "side")
        for ann in scene.annotations:
            assert ann.tag_value("variety") == "blondee"
            assert ann.tag_value("lighting") == "side"


def test_annotation_boxes_lie_inside_the_image():
    cfg = SceneConfig(seed=6, **SMALL)
    for scene in generate(cfg, 10):
        for ann in scene.annotations:
            assert ann.box.x >= 0 and ann.box.y >= 0
            assert ann.box.x2 <= scene.image.width and ann.box.y2 <= scene.image.height


@pytest.mark.parametrize("overrides", [
    dict(image_size=(32, 32), apple_radius=(4, 16)),
    dict(apple_radius=(9, 4)),
    dict(occlusion_fraction=(0.2, 1.5)),
    dict(lightings=("moonlight",)),
    dict(apple_palette=()),
    dict(fp_rate=-1.0),
    dict(split="holdout"),
])
def test_degenerate_configs(overrides):
    with pytest.raises(ConfigError):
        SceneConfig(**overrides)


def test_zero_scenes():
    with pytest.raises(ConfigError):
        generate(SceneConfig(), 0)


# =========================================
#   EXPORT
# =========================================

def test_export_is_ingested_unchanged(tmp_path):
    cfg = SceneConfig(seed=8, split="val", **SMALL)
    scenes = generate(cfg, 3)
    manifest = export(scenes, str(tmp_path), cfg.split)

    files = sorted(os.listdir(tmp_path / "images"))
    assert files == [f"{s.image_id}.ppm" for s in scenes]

    dataset = load_dataset(manifest, require_detections=True)
    assert dataset.split == "val"
    expected = [a for s in scenes for a in s.annotations]
    assert len(dataset.annotations) == len(expected)
    assert set(dataset.annotations) == set(expected)

    images = load_images(dataset)
    for scene in scenes:
        assert_array_equal(images[scene.image_id].pixels, scene.image.pixels)


def test_exported_scores_match_to_six_places(tmp_path):
    scenes = generate(SceneConfig(seed=9, **SMALL), 3)
    export(scenes, str(tmp_path))

    exported = parse_detections((tmp_path / "detections.json").read_bytes())
    in_memory = [d for s in scenes for d in s.detections]
    assert len(exported) == len(in_memory)
    for a, b in zip(exported, in_memory):
        assert round(a.score, 6) == round(b.score, 6)
        assert a.box == b.box


def test_provenance_file_parallels_detections(tmp_path):
    scenes = generate(SceneConfig(seed=10, **SMALL), 2)
    export(scenes, str(tmp_path))

    provenance = orjson.loads((tmp_path / "provenance.json").read_bytes())
    for scene in scenes:
        assert provenance[scene.image_id] == list(scene.provenance)

    via = parse_via((tmp_path / "annotations.json").read_bytes())
    assert len(via) == sum(len(s.annotations) for s in scenes)


def test_export_is_byte_deterministic(tmp_path):
    cfg = SceneConfig(seed=11, **SMALL)
    export(generate(cfg, 2), str(tmp_path / "one"))
    export(generate(cfg, 2), str(tmp_path / "two"), threads=2)

    for root, _, names in os.walk(tmp_path / "one"):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), tmp_path / "one")
            assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes()
