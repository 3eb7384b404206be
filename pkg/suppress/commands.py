# ============================================
#   Suppress — Command handlers
#   gen-synthetic / train / filter / evaluate / tune
#   Exit codes: 0 ok, 1 runtime/data error, 2 usage error
# ============================================

import os
import sys

from suppress.errors import EmptyDataset, SuppressError
from suppress.evaluation import evaluate, evaluate_stratified, render_table, reports_to_json
from suppress.ingest import load_dataset, load_images, parse_detections, serialize_detections
from suppress.logger import get_logger, log_info, set_level
from suppress.storage import read_bytes, write_bytes, write_json, write_table_csv
from suppress.suppressor import TrainConfig, build_examples, load_model, save_model, score, train
from suppress.synthgen import SceneConfig, export, generate
from suppress.tuner import ThresholdConfig, apply_thresholds, baseline, compare, sweep
from suppress.weighting import WeightingConfig


def _out_path(args, explicit, default_name):
    return explicit or os.path.join(args.output_dir, default_name)


def _weighting(args) -> WeightingConfig:
    return WeightingConfig(n_clusters=args.clusters, seed=args.seed)


def _scored(args, dataset, model, weighting: WeightingConfig):
    images = load_images(dataset, args.threads, {d.image_id for d in dataset.detections})
    return score(model, dataset.detections, images, weighting, args.threads)


# =====================================================
#   gen-synthetic
# =====================================================

def cmd_gen_synthetic(args) -> int:
    cfg = SceneConfig(
        seed=args.seed,
        image_size=(args.width, args.height),
        n_apples=args.apples,
        apple_radius=args.radius,
        apple_palette=tuple(args.varieties),
        occlusion_fraction=args.occlusion,
        lightings=tuple(args.lightings),
        fp_rate=args.fp_rate,
        localization_noise=args.noise,
        split=args.split,
    )
    scenes = generate(cfg, args.scenes, args.threads)
    manifest = export(scenes, args.out, cfg.split, args.threads)
    print(manifest)
    return 0


# =====================================================
#   train
# =====================================================

def cmd_train(args) -> int:
    cfg = TrainConfig(
        momentum=args.momentum,
        learning_rate=args.lr,
        weight_decay=args.decay,
        epochs=args.epochs,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    weighting = _weighting(args)

    dataset = load_dataset(args.manifest, require_detections=True)
    if not dataset.detections:
        raise EmptyDataset(f"{args.manifest}: no detections to build training patches from")

    images = load_images(dataset, args.threads, {d.image_id for d in dataset.detections})
    examples = build_examples(dataset, images, weighting, args.label_iou, args.threads)
    if not examples:
        raise EmptyDataset(f"{args.manifest}: no usable training patches")

    model, history = train(examples, cfg)

    model_path = _out_path(args, args.model, "model.json")
    save_model(model, model_path)
    loss_path = os.path.splitext(model_path)[0] + ".loss.csv"
    write_table_csv(loss_path, [{"epoch": i, "loss": v} for i, v in enumerate(history, start=1)])

    log_info("commands", f"Loss {history[0]:.6f} → {history[-1]:.6f} over {len(history)} epochs.")
    print(model_path)
    return 0


# =====================================================
#   filter
# =====================================================

def cmd_filter(args) -> int:
    thresholds = ThresholdConfig(args.th1, args.th2)
    weighting = _weighting(args)
    model = load_model(args.model)
    dataset = load_dataset(args.manifest, require_detections=True)

    scored = _scored(args, dataset, model, weighting)
    y_of = {id(det): y for det, y in scored}
    kept = apply_thresholds(scored, thresholds)

    out = _out_path(args, args.out, "filtered.json")
    write_bytes(out, serialize_detections(kept, extra=[{"suppressor_score": y_of[id(d)]} for d in kept]))
    log_info("commands", f"Kept {len(kept)} of {len(scored)} detections (th1={thresholds.th1}, th2={thresholds.th2}).")
    print(out)
    return 0


# =====================================================
#   evaluate
# =====================================================

def cmd_evaluate(args) -> int:
    # without --detections the manifest must name a detections_file; an empty one is fine
    dataset = load_dataset(args.manifest, require_detections=not args.detections)
    if args.detections:
        detections = parse_detections(read_bytes(args.detections))
    else:
        detections = list(dataset.detections)

    if args.group_by:
        reports = evaluate_stratified(dataset, detections, args.iou, args.group_by, args.threads)
    else:
        reports = [evaluate(dataset, detections, args.iou, args.threads)]

    print(render_table(reports))
    write_json(_out_path(args, args.out, "report.json"), reports_to_json(reports))
    return 0


# =====================================================
#   tune
# =====================================================

def _row_text(label, row):
    return (
        f"{label}: th1={row['th1']:.2f} th2={row['th2']:.2f} "
        f"P={row['precision']:.3f} R={row['recall']:.3f} F1={row['f1']:.3f}"
    )


def cmd_tune(args) -> int:
    weighting = _weighting(args)
    model = load_model(args.model)
    dataset = load_dataset(args.manifest, require_detections=True)
    scored = _scored(args, dataset, model, weighting)

    result = sweep(scored, dataset, args.grid_th1 or args.grid, args.grid_th2 or args.grid, args.iou, args.threads)
    rows = result.to_rows()

    base = baseline(scored, dataset, args.baseline_th1, args.iou)
    comparison = {
        "baseline": {"th1": args.baseline_th1, "th2": 0.0, **base.to_dict()},
        "c1": compare(base, result.points[result.c1][1]),
        "c2": compare(base, result.points[result.c2][1]),
    }

    write_json(os.path.join(args.output_dir, "sweep.json"), rows)
    write_table_csv(os.path.join(args.output_dir, "sweep.csv"), rows)
    write_json(os.path.join(args.output_dir, "comparison.json"), comparison)

    print(_row_text("C1", rows[result.c1]))
    print(_row_text("C2", rows[result.c2]))
    print(
        f"baseline (th1={args.baseline_th1:.2f}): P={base.precision:.3f} "
        f"R={base.recall:.3f} F1={base.f1:.3f}"
    )
    return 0


# =====================================================
#   DISPATCH
# =====================================================

COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "filter": cmd_filter,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
}


def handle_command(args) -> int:
    """Run one subcommand; map pipeline errors to exit codes."""
    set_level(args.log_level)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2

    try:
        return COMMANDS[args.command](args)
    except SuppressError as e:
        get_logger("commands").debug(f"{args.command} failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

