"""Exception hierarchy shared across the pipeline.

CLI maps PipelineError subclasses to exit code 2 (data errors); everything
argparse-related exits 1.
"""


class PipelineError(Exception):
    """Base class for all stressmon errors."""


# signal ingestion / synthesis
class MalformedFile(PipelineError):
    pass


class NonFiniteSample(PipelineError):
    pass


class IrregularSampling(PipelineError):
    pass


class UpsampleRequested(PipelineError):
    pass


class DegenerateSignal(PipelineError):
    pass


class InvalidConfig(PipelineError):
    pass


# vitals extraction
class SignalTooShort(PipelineError):
    pass


class NoBeatsFound(PipelineError):
    pass


class InsufficientBeats(PipelineError):
    pass


class SeriesTooShort(PipelineError):
    pass


# model
class ShapeMismatch(PipelineError):
    pass


class DegenerateShape(PipelineError):
    pass


# training / checkpoints
class TooFewWindows(PipelineError):
    pass


class EmptyMask(PipelineError):
    pass


class NonFiniteLoss(PipelineError):
    """Training diverged. Carries the last finite parameter snapshot."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class IoFailure(PipelineError):
    pass


class VersionMismatch(PipelineError):
    pass


class CorruptCheckpoint(PipelineError):
    pass


# detection / evaluation
class EmptyInput(PipelineError):
    pass


class EmptyCalibration(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class TooFewMethods(PipelineError):
    pass


class UnknownControl(PipelineError):
    pass
