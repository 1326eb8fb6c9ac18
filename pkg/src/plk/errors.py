"""Exception types raised by the library and mapped to CLI exit codes."""


__all__ = [
    "PLKError",
    "InvalidShape",
    "InvalidIndex",
    "InvalidPose",
    "BehindCamera",
    "InvalidDepth",
    "InvalidDisparity",
    "InvalidProbability",
    "EmptyGroundTruth",
    "OracleFailure",
    "DivergedFit",
    "FormatError",
]


class PLKError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class InvalidShape(PLKError, ValueError):
    pass


class InvalidIndex(PLKError, IndexError):
    pass


class InvalidPose(PLKError, ValueError):
    pass


class BehindCamera(PLKError, ValueError):
    pass


class InvalidDepth(PLKError, ValueError):
    pass


class InvalidDisparity(PLKError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InvalidProbability(PLKError, ValueError):
    pass


class EmptyGroundTruth(PLKError, ValueError):
    pass


class OracleFailure(PLKError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergedFit(PLKError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FormatError(PLKError, ValueError):
    """Malformed input file; ``offset`` is the byte position of the problem."""

    exit_code = 2

    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.path is not None:
            where.append(str(self.path))
        if self.offset is not None:
            where.append(f"byte {self.offset}")
        return f"{': '.join(where)}: {msg}" if where else msg
