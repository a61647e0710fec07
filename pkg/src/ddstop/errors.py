"""Exception hierarchy shared by every ddstop module."""


class DDStopError(Exception):
    """Base class for all errors raised by this package."""

    #: short machine-readable code used in structured (JSON) error output
    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidParameter(DDStopError, ValueError):
    code = "InvalidParameter"


class MalformedRow(DDStopError, ValueError):
    code = "MalformedRow"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonPositivePrice(MalformedRow):
    code = "NonPositivePrice"


class DuplicateTimestamp(MalformedRow):
    code = "DuplicateTimestamp"


class EmptyFile(DDStopError, ValueError):
    code = "EmptyFile"


class InsufficientHistory(DDStopError, ValueError):
    code = "InsufficientHistory"


class EmptyWindow(DDStopError, ValueError):
    code = "EmptyWindow"


class EmptyCorpus(DDStopError, ValueError):
    code = "EmptyCorpus"


class AllZeroDrawdowns(DDStopError, ValueError):
    """Every trade in the corpus has zero drawdown; no threshold can be chosen."""

    code = "AllZeroDrawdowns"


class CalibrationUnavailable(DDStopError):
    code = "CalibrationUnavailable"


class NonPositiveBaseline(DDStopError, ValueError):
    code = "NonPositiveBaseline"


class EmptyInput(DDStopError, ValueError):
    code = "EmptyInput"


class LengthMismatch(DDStopError, ValueError):
    code = "LengthMismatch"


class ZeroVariance(DDStopError, ValueError):
    code = "ZeroVariance"


class TooFewSamples(DDStopError, ValueError):
    code = "TooFewSamples"
