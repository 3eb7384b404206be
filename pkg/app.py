# ============================================
#     Suppress — Command-line entry point
#     gen-synthetic / train / filter / evaluate / tune
# ============================================

import argparse
import sys

# -----------------------------------------
#   ENV VARIABLES (.env)
# -----------------------------------------
from dotenv import load_dotenv
load_dotenv()

from suppress.config import (
    BASELINE_TH1,
    BATCH_SIZE,
    DEFAULT_GRID,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_LIGHTINGS,
    DEFAULT_LOG_LEVEL,
    DEFAULT_THREADS,
    EPOCHS,
    IOU_THRESHOLD,
    KMEANS_CLUSTERS,
    LABEL_IOU_THRESHOLD,
    LEARNING_RATE,
    MOMENTUM,
    SPLITS,
    VARIETIES,
    WEIGHT_DECAY,
)
from suppress.commands import handle_command


# =========================================
#   FLAG VALUE PARSERS
# =========================================

def _floats(text: str) -> list:
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(p == "" for p in parts):
        raise argparse.ArgumentTypeError(f"malformed list '{text}': empty entry")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed list '{text}': not a number")


def grid(text: str) -> tuple:
    """Comma-separated thresholds in [0, 1], e.g. 0.5,0.6,0.7"""
    values = _floats(text)
    for v in values:
        if not (0.0 <= v <= 1.0):
            raise argparse.ArgumentTypeError(f"grid value {v} outside [0, 1]")
    return tuple(values)


def _pair(cast):
    def parse(text: str) -> tuple:
        values = _floats(text)
        if len(values) != 2:
            raise argparse.ArgumentTypeError(f"expected 'low,high', got '{text}'")
        return tuple(cast(v) for v in values)
    parse.__name__ = f"{cast.__name__}_pair"
    return parse


def _names(text: str) -> list:
    names = [p.strip() for p in text.split(",")]
    if any(n == "" for n in names):
        raise argparse.ArgumentTypeError(f"malformed list '{text}': empty entry")
    return names


def _number(text: str, cast=float):
    try:
        return cast(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a{'n integer' if cast is int else ' number'}: '{text}'")


def _unit(text: str) -> float:
    value = _number(text)
    if not (0.0 <= value <= 1.0):
        raise argparse.ArgumentTypeError(f"{value} outside [0, 1]")
    return value


def _open_unit(text: str) -> float:
    value = _number(text)
    if not (0.0 < value < 1.0):
        raise argparse.ArgumentTypeError(f"{value} outside (0, 1)")
    return value


def _non_negative(text: str) -> float:
    value = _number(text)
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return value


def _at_least(low: int):
    def parse(text: str) -> int:
        value = _number(text, int)
        if value < low:
            raise argparse.ArgumentTypeError(f"{value} must be >= {low}")
        return value
    parse.__name__ = f"int_at_least_{low}"
    return parse


# =========================================
#   PARSER
# =========================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suppress",
        description="False-positive suppression for fruit detections.",
    )
    parser.add_argument("--seed", type=int, default=0, help="single source of all randomness")
    parser.add_argument("--threads", type=_at_least(1), default=DEFAULT_THREADS)
    parser.add_argument("--output-dir", dest="output_dir", default="out")
    parser.add_argument("--log-level", dest="log_level", default=DEFAULT_LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    parser.add_argument("--clusters", type=_at_least(2), default=KMEANS_CLUSTERS, help="k-means colour classes")

    sub = parser.add_subparsers(dest="command", required=True)

    # ---- gen-synthetic ----
    gen = sub.add_parser("gen-synthetic", help="render a synthetic orchard dataset")
    gen.add_argument("--out", required=True, help="dataset directory")
    gen.add_argument("--scenes", type=int, required=True)
    gen.add_argument("--width", type=int, default=DEFAULT_IMAGE_SIZE[0])
    gen.add_argument("--height", type=int, default=DEFAULT_IMAGE_SIZE[1])
    gen.add_argument("--apples", type=_pair(int), default=(3, 6), help="low,high apples per scene")
    gen.add_argument("--radius", type=_pair(int), default=(9, 16), help="low,high apple radius")
    gen.add_argument("--occlusion", type=_pair(float), default=(0.0, 0.4))
    gen.add_argument("--varieties", type=_names, default=list(VARIETIES))
    gen.add_argument("--lightings", type=_names, default=list(DEFAULT_LIGHTINGS))
    gen.add_argument("--fp-rate", dest="fp_rate", type=float, default=2.0)
    gen.add_argument("--noise", type=float, default=2.0, help="proposal jitter stddev in pixels")
    gen.add_argument("--split", choices=SPLITS, default="train")

    # ---- train ----
    tr = sub.add_parser("train", help="train the suppressor on a dataset with detections")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--model", default=None, help="output path (default <output-dir>/model.json)")
    tr.add_argument("--epochs", type=_at_least(1), default=EPOCHS)
    tr.add_argument("--lr", type=_non_negative, default=LEARNING_RATE)
    tr.add_argument("--momentum", type=_non_negative, default=MOMENTUM)
    tr.add_argument("--decay", type=_non_negative, default=WEIGHT_DECAY)
    tr.add_argument("--batch-size", dest="batch_size", type=_at_least(1), default=BATCH_SIZE)
    tr.add_argument("--label-iou", dest="label_iou", type=_open_unit, default=LABEL_IOU_THRESHOLD)

    # ---- filter ----
    fl = sub.add_parser("filter", help="drop detections below th1 or th2")
    fl.add_argument("--manifest", required=True)
    fl.add_argument("--model", required=True)
    fl.add_argument("--th1", type=_unit, required=True)
    fl.add_argument("--th2", type=_unit, required=True)
    fl.add_argument("--out", default=None, help="default <output-dir>/filtered.json")

    # ---- evaluate ----
    ev = sub.add_parser("evaluate", help="precision / recall / F1, optionally per tag")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--detections", default=None, help="defaults to the manifest's detections_file")
    ev.add_argument("--iou", type=_open_unit, default=IOU_THRESHOLD)
    ev.add_argument("--group-by", dest="group_by", default=None, help="tag key, e.g. lighting")
    ev.add_argument("--out", default=None, help="default <output-dir>/report.json")

    # ---- tune ----
    tu = sub.add_parser("tune", help="sweep (th1, th2) and report C1 / C2")
    tu.add_argument("--manifest", required=True)
    tu.add_argument("--model", required=True)
    tu.add_argument("--grid", type=grid, default=DEFAULT_GRID, help="shared grid for both thresholds")
    tu.add_argument("--grid-th1", dest="grid_th1", type=grid, default=None)
    tu.add_argument("--grid-th2", dest="grid_th2", type=grid, default=None)
    tu.add_argument("--iou", type=_open_unit, default=IOU_THRESHOLD)
    tu.add_argument("--baseline-th1", dest="baseline_th1", type=_unit, default=BASELINE_TH1)

    return parser


# =========================================
#   MAIN
# =========================================

def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse already printed the reason
        return e.code if isinstance(e.code, int) else 2
    return handle_command(args)


if __name__ == "__main__":
    sys.exit(main())
