# ============================================
#   Suppress — Error hierarchy
#   UsageError → exit 2, every other SuppressError → exit 1
# ============================================


class SuppressError(Exception):
    """Base class for every error raised by the pipeline."""

    exit_code = 1


class UsageError(SuppressError):
    exit_code = 2


class DataError(SuppressError):
    exit_code = 1


# -----------------------------------------
#   Value types / geometry
# -----------------------------------------
class InvalidBox(DataError):
    pass


class NoOverlap(DataError):
    pass


# -----------------------------------------
#   Ingest
# -----------------------------------------
class ParseError(DataError):
    pass


class UnsupportedShape(ParseError):
    pass


class ScoreOutOfRange(DataError):
    pass


class FormatError(DataError):
    pass


class UnknownImage(DataError):
    pass


class IoError(DataError):
    pass


# -----------------------------------------
#   Weighting / suppressor net
# -----------------------------------------
class TooFewPixels(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class VersionMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


# -----------------------------------------
#   Evaluation / tuning / synthetic data
# -----------------------------------------
class MixedImages(DataError):
    pass


class UnknownTagKey(DataError):
    pass


class EmptyGrid(DataError):
    pass


class ConfigError(DataError):
    pass
