"""Exception hierarchy shared by every pdmkit module."""


class PdmError(Exception):
    """Base class for all pdmkit errors."""


class RejectedInputError(PdmError, ValueError):
    """Input violates an operation's precondition (shape, length, NaN, ...)."""


class DegenerateError(PdmError, ValueError):
    """Data is valid in form but numerically degenerate."""


class DegenerateVarianceError(DegenerateError):
    pass


class DegenerateFitError(DegenerateError):
    pass


class DegenerateFeatureError(DegenerateError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"feature {index} has zero variance in the training set")


class TrainingError(PdmError, RuntimeError):
    """Training diverged or produced non-finite parameters."""


class ArtifactFormatError(PdmError, ValueError):
    pass
