"""Exception types shared across the package."""


class FewsedError(Exception):
    """Base class for all errors raised by this package."""


# audio front end
class UnsupportedEncoding(FewsedError):
    """WAV file uses a compression or sample format we do not decode."""


class CorruptHeader(FewsedError):
    """File container is malformed or truncated."""


class EmptyAudio(FewsedError):
    """WAV file contains zero samples."""


class TooShort(FewsedError):
    """Signal shorter than one analysis frame."""


# annotations and episodes
class MalformedRow(FewsedError):
    """Annotation row could not be parsed or violates onset < offset."""


class UnknownLabel(FewsedError):
    """Annotation label outside the accepted set."""


class NoPositives(FewsedError):
    """Recording has no positive events to build an episode from."""


# embeddings
class DimensionMismatch(FewsedError):
    """Embedding dimension does not match what the caller expects."""


class RowCountMismatch(FewsedError):
    """Embedding file row count differs from the segment count."""


class NonFiniteValue(FewsedError):
    """NaN or infinity found where finite values are required."""


class SingleClassCorpus(FewsedError):
    """Training corpus contains only one class."""


# prototypes and selection
class EmptyClass(FewsedError):
    """A prototype would be built from zero samples."""


class QueryTooSmall(FewsedError):
    """Query has fewer segments than the selection lower bound."""


# matrix ops
class ShapeMismatch(FewsedError):
    """Two matrices that must align do not."""


class EmptyMatrix(FewsedError):
    """Operation requires at least one row."""


class AlignmentMismatch(FewsedError):
    """Probability rows do not align with grid segments."""


# synthesis
class PlacementFailure(FewsedError):
    """Could not place the requested events without overlap."""


# pipeline
class EmptyCorpus(FewsedError):
    """Benchmark manifest contains no test recordings."""


class ConfigError(FewsedError):
    """Pipeline configuration is invalid or inconsistent."""


class PipelineStageError(FewsedError):
    """Failure inside one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
