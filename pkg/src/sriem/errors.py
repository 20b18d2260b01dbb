"""Exception hierarchy shared by every sriem module."""


class SRIEMError(Exception):
    """Base class for all package errors."""


class DimensionError(SRIEMError, ValueError):
    pass


class DegenerateRowError(SRIEMError, ValueError):
    """A softmax row has no valid (unmasked) entry."""


class NonFiniteError(SRIEMError, FloatingPointError):
    pass


class ContractError(SRIEMError, ValueError):
    """A caller violated a documented precondition."""


class DataFormatError(SRIEMError, ValueError):
    pass


class PreprocessingError(SRIEMError, ValueError):
    pass


class IncompatibleCheckpointError(SRIEMError, ValueError):
    pass


class TrainingError(SRIEMError, RuntimeError):
    """Training aborted; ``best_params`` holds the last good model, if any."""

    def __init__(self, message, best_params=None, report=None):
        super().__init__(message)
        self.best_params = best_params
        self.report = report
