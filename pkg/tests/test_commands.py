import os

import orjson
import pandas as pd
import pytest

import app
from suppress import logger
from suppress.core import Detection
from suppress.ingest import load_dataset, serialize_detections
from suppress.storage import read_json, write_bytes, write_json

from conftest import solid, write_dataset

SMALL_SCENES = ["--width", "64", "--height", "48", "--radius", "4,8"]


def run(*argv) -> int:
    return app.main([str(a) for a in argv])


def _tree(root):
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Small train/test split plus a model trained on the train half."""
    root = tmp_path_factory.mktemp("pipeline")
    train_dir, test_dir = root / "train", root / "test"
    assert run("--seed", 0, "gen-synthetic", "--out", train_dir, "--scenes", 12, "--fp-rate", 3, *SMALL_SCENES) == 0
    assert run("--seed", 1, "gen-synthetic", "--out", test_dir, "--scenes", 6, "--split", "test", *SMALL_SCENES) == 0

    model = root / "model.json"
    assert run("--seed", 0, "train", "--manifest", train_dir / "manifest.json", "--model", model, "--epochs", 5) == 0
    return {
        "root": root,
        "train": str(train_dir / "manifest.json"),
        "test": str(test_dir / "manifest.json"),
        "model": str(model),
    }


# =========================================
#   FLAG VALIDATION / EXIT CODES
# =========================================

def test_gen_synthetic_requires_out():
    assert run("gen-synthetic", "--scenes", 3) == 2


def test_zero_scenes_is_a_runtime_error(tmp_path, capsys):
    assert run("gen-synthetic", "--out", tmp_path, "--scenes", 0) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error:")


def test_malformed_grid_is_a_usage_error(trained):
    assert run("tune", "--manifest", trained["test"], "--model", trained["model"], "--grid", "0.5,,") == 2


def test_thread_count_must_be_positive(tmp_path):
    assert run("--threads", 0, "gen-synthetic", "--out", tmp_path, "--scenes", 1) == 2


def test_missing_model_file(trained, tmp_path):
    assert run("--output-dir", tmp_path, "filter", "--manifest", trained["test"],
               "--model", tmp_path / "absent.json", "--th1", 0.5, "--th2", 0.5) == 1


def test_train_names_the_missing_detections_field(tmp_path, capsys):
    manifest = write_dataset(tmp_path, {"x": solid(40, 40, (30, 90, 30))})
    assert run("train", "--manifest", manifest) == 2
    assert "detections_file" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [
    ["--epochs", 0],
    ["--lr", -0.1],
    ["--momentum", "nan"],
    ["--decay", -1],
    ["--batch-size", 0],
    ["--label-iou", 1.0],
    ["--epochs", "two"],
])
def test_train_flags_are_rejected_before_any_work(tmp_path, capsys, flags):
    manifest = write_dataset(tmp_path, {"x": solid(40, 40, (30, 90, 30))}, detections=[])
    model = tmp_path / "model.json"
    assert run("train", "--manifest", manifest, "--model", model, *flags) == 2
    captured = capsys.readouterr()
    assert "training patches" not in captured.err
    assert not model.exists()


@pytest.mark.parametrize("argv", [
    ["--clusters", 1, "evaluate", "--manifest", "m.json"],
    ["evaluate", "--manifest", "m.json", "--iou", 0],
    ["tune", "--manifest", "m.json", "--model", "x.json", "--iou", 1.5],
])
def test_numeric_flags_outside_their_range(argv):
    assert run(*argv) == 2


def test_env_log_level_wins_over_the_flag(monkeypatch):
    monkeypatch.setattr(logger, "LOG_LEVEL", "debug")
    assert logger.set_level("ERROR") == "DEBUG"
    monkeypatch.setattr(logger, "LOG_LEVEL", "")
    assert logger.set_level("WARNING") == "WARNING"
    logger.set_level("INFO")


# =========================================
#   gen-synthetic
# =========================================

def test_gen_synthetic_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert run("--seed", 7, "gen-synthetic", "--scenes", 4, "--out", tmp_path / name, *SMALL_SCENES) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed[-1].endswith("manifest.json")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


# =========================================
#   train
# =========================================

def test_train_writes_model_and_loss_curve(trained):
    assert os.path.exists(trained["model"])
    curve = pd.read_csv(os.path.join(trained["root"], "model.loss.csv"))
    assert list(curve.columns) == ["epoch", "loss"]
    assert curve["epoch"].tolist() == [1, 2, 3, 4, 5]
    assert curve["loss"].iloc[-1] < curve["loss"].iloc[0]


def test_train_is_byte_reproducible(trained, tmp_path):
    again = tmp_path / "again.json"
    assert run("--seed", 0, "--threads", 3, "train", "--manifest", trained["train"], "--model", again, "--epochs", 5) == 0
    assert again.read_bytes() == open(trained["model"], "rb").read()


# =========================================
#   filter
# =========================================

def _filter(trained, out_dir, th1, th2):
    out = out_dir / f"filtered_{th1}_{th2}.json"
    assert run("filter", "--manifest", trained["test"], "--model", trained["model"],
               "--th1", th1, "--th2", th2, "--out", out) == 0
    return orjson.loads(out.read_bytes())


def test_filter_vacuous_thresholds_keep_everything(trained, tmp_path):
    kept = _filter(trained, tmp_path, 0, 0)
    source = read_json(os.path.join(os.path.dirname(trained["test"]), "detections.json"))
    assert len(kept) == len(source)
    assert all(0.0 < item["suppressor_score"] < 1.0 for item in kept)
    assert [item["score"] for item in kept] == [item["score"] for item in source]


def test_filter_saturated_th2_keeps_nothing(trained, tmp_path):
    assert _filter(trained, tmp_path, 0, 1) == []


# =========================================
#   evaluate
# =========================================

def test_evaluate_perfect_detections(trained, tmp_path):
    dataset = load_dataset(trained["test"])
    perfect = [Detection(a.image_id, a.box, 1.0) for a in dataset.annotations]
    dets = write_bytes(str(tmp_path / "perfect.json"), serialize_detections(perfect))

    assert run("--output-dir", tmp_path, "evaluate", "--manifest", trained["test"], "--detections", dets) == 0
    (total,) = read_json(str(tmp_path / "report.json"))
    assert (total["precision"], total["recall"], total["f1"]) == (1.0, 1.0, 1.0)
    assert total["stratum"] == "total"


def test_evaluate_empty_detections(trained, tmp_path):
    dets = write_bytes(str(tmp_path / "none.json"), b"[]")
    assert run("--output-dir", tmp_path, "evaluate", "--manifest", trained["test"], "--detections", dets) == 0
    (total,) = read_json(str(tmp_path / "report.json"))
    assert (total["precision"], total["recall"]) == (0.0, 0.0)


def test_evaluate_manifest_with_an_empty_detections_file(tmp_path, two_strata_dataset):
    dataset, _ = two_strata_dataset
    images = {"a": solid(100, 100, (0, 0, 0)), "b": solid(100, 100, (0, 0, 0))}
    manifest = write_dataset(tmp_path / "ds", images, dataset.annotations, detections=[])

    assert run("--output-dir", tmp_path, "evaluate", "--manifest", manifest) == 0
    (total,) = read_json(str(tmp_path / "report.json"))
    assert (total["precision"], total["recall"], total["fn"]) == (0.0, 0.0, 3)


def test_evaluate_manifest_without_detections_names_the_field(tmp_path, capsys):
    manifest = write_dataset(tmp_path, {"x": solid(40, 40, (30, 90, 30))})
    assert run("--output-dir", tmp_path, "evaluate", "--manifest", manifest) == 2
    assert "detections_file" in capsys.readouterr().err


def test_evaluate_by_lighting(tmp_path, two_strata_dataset, capsys):
    dataset, detections = two_strata_dataset
    images = {"a": solid(100, 100, (0, 0, 0)), "b": solid(100, 100, (0, 0, 0))}
    manifest = write_dataset(tmp_path / "ds", images, dataset.annotations, detections)

    out = tmp_path / "strata.json"
    assert run("evaluate", "--manifest", manifest, "--group-by", "lighting", "--out", out) == 0
    rows = read_json(str(out))
    assert [(r["stratum"], r["tp"], r["fp"], r["fn"]) for r in rows] == [
        ("lighting=back", 1, 0, 0),
        ("lighting=direct", 1, 1, 1),
        ("total", 2, 1, 1),
    ]
    assert "lighting=direct" in capsys.readouterr().out


def test_evaluate_unknown_tag_key(tmp_path, two_strata_dataset):
    dataset, detections = two_strata_dataset
    images = {"a": solid(100, 100, (0, 0, 0)), "b": solid(100, 100, (0, 0, 0))}
    manifest = write_dataset(tmp_path / "ds", images, dataset.annotations, detections)
    assert run("--output-dir", tmp_path, "evaluate", "--manifest", manifest, "--group-by", "season") == 1


# =========================================
#   tune
# =========================================

def test_tune_singleton_grid(trained, tmp_path):
    assert run("--output-dir", tmp_path, "tune", "--manifest", trained["test"],
               "--model", trained["model"], "--grid", "0.6") == 0
    (row,) = read_json(str(tmp_path / "sweep.json"))
    assert row["is_c1"] and row["is_c2"] and row["on_front"]
    assert (row["th1"], row["th2"]) == (0.6, 0.6)


def test_tune_c1_beats_every_row(trained, tmp_path, capsys):
    assert run("--output-dir", tmp_path, "tune", "--manifest", trained["test"], "--model", trained["model"]) == 0
    table = pd.read_csv(tmp_path / "sweep.csv")
    assert len(table) == 100
    c1 = table[table["is_c1"]]
    assert len(c1) == 1
    assert (c1["f1"].iloc[0] >= table["f1"]).all()

    comparison = read_json(str(tmp_path / "comparison.json"))
    assert set(comparison) == {"baseline", "c1", "c2"}
    out = capsys.readouterr().out
    assert "C1:" in out and "C2:" in out and "baseline" in out


def test_tune_is_independent_of_threads(trained, tmp_path):
    for threads, name in ((1, "one"), (3, "three")):
        assert run("--threads", threads, "--output-dir", tmp_path / name, "tune",
                   "--manifest", trained["test"], "--model", trained["model"]) == 0
    assert _tree(tmp_path / "one") == _tree(tmp_path / "three")


# =========================================
#   END TO END
# =========================================

EFFICACY_PIN = os.path.join(os.path.dirname(__file__), "data", "efficacy_seed0.json")


def _operating_points(comparison) -> dict:
    base = comparison["baseline"]
    points = {"baseline": {m: base[m] for m in ("precision", "recall", "f1")}}
    for name in ("c1", "c2"):
        points[name] = {m: comparison[name][m]["tuned"] for m in ("precision", "recall", "f1")}
    return points


def test_suppression_improves_precision(tmp_path):
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    assert run("--seed", 0, "gen-synthetic", "--out", train_dir, "--scenes", 100, "--fp-rate", 3) == 0
    assert run("--seed", 1, "gen-synthetic", "--out", test_dir, "--scenes", 50, "--fp-rate", 3, "--split", "test") == 0

    model = tmp_path / "model.json"
    assert run("--seed", 0, "train", "--manifest", train_dir / "manifest.json", "--model", model, "--epochs", 20) == 0

    out = tmp_path / "tuned"
    assert run("--output-dir", out, "tune", "--manifest", test_dir / "manifest.json", "--model", model) == 0
    comparison = read_json(str(out / "comparison.json"))
    assert comparison["c1"]["precision"]["tuned"] > comparison["c1"]["precision"]["baseline"]
    assert comparison["c1"]["f1"]["tuned"] >= comparison["c1"]["f1"]["baseline"]

    # seed 0 is pinned to the operating points recorded on the first run
    observed = _operating_points(comparison)
    if not os.path.exists(EFFICACY_PIN):
        write_json(EFFICACY_PIN, observed)
    pinned = read_json(EFFICACY_PIN)
    for point, metrics in pinned.items():
        for name, value in metrics.items():
            assert observed[point][name] == pytest.approx(value, abs=0.01), (point, name)

    # provenance oracle: the suppressor alone lowers the spurious share
    kept_path = tmp_path / "kept.json"
    assert run("filter", "--manifest", test_dir / "manifest.json", "--model", model,
               "--th1", 0, "--th2", 0.5, "--out", kept_path) == 0
    provenance = read_json(str(test_dir / "provenance.json"))
    source = read_json(str(test_dir / "detections.json"))
    origin = {}
    for image_id, labels in provenance.items():
        items = [d for d in source if d["image_id"] == image_id]
        for item, label in zip(items, labels):
            origin[(image_id, tuple(item["bbox"]), item["score"])] = label

    kept = read_json(str(kept_path))
    before = sum(v == "spurious" for v in origin.values()) / len(origin)
    after = sum(origin[(k["image_id"], tuple(k["bbox"]), k["score"])] == "spurious" for k in kept) / max(len(kept), 1)
    assert after < before
