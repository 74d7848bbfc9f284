"""Exception types raised across the pipeline.

Each stage raises a subclass of :class:`PipelineError`; the CLI maps the
three families below onto its exit codes.
"""


class PipelineError(Exception):
    """Base class for every error raised by histopipe."""


class ConfigInvalid(PipelineError):
    """Configuration is malformed or references missing inputs."""


class MissingInput(PipelineError):
    """An input file or corpus required by a stage is absent or empty."""


class StageError(PipelineError):
    """A processing stage could not complete on valid configuration."""


# pyramid
class MissingLevelFile(MissingInput):
    pass


class DimensionMismatch(StageError):
    pass


class NonMonotonicDownsample(StageError):
    pass


class LevelOutOfRange(StageError, IndexError):
    pass


# segment
class EmptyImage(StageError):
    pass


class DegenerateHistogram(StageError):
    pass


# tile
class RectOutOfBounds(StageError):
    pass


class DimMismatch(StageError, ValueError):
    pass


# stain
class InsufficientTissue(StageError):
    pass


class EmptyInput(StageError, ValueError):
    pass


# features / learn
class TooFewSamples(StageError):
    pass


class KTooLarge(StageError, ValueError):
    pass


class DegenerateData(StageError):
    pass


class NonFiniteLoss(StageError):
    pass


class SingleClassInput(StageError, ValueError):
    pass


class StageDimMismatch(StageError):
    pass


# eval
class EmptyClass(StageError, ValueError):
    pass


class KOutOfRange(StageError, ValueError):
    pass


class LengthMismatch(StageError, ValueError):
    pass


class UndefinedMetric(StageError, ZeroDivisionError):
    pass


class CorpusEmpty(MissingInput):
    pass
