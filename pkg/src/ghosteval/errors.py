"""Exception hierarchy shared by every module."""


class GhostEvalError(Exception):
    """Base class for all library errors."""


class EmptyInput(GhostEvalError):
    pass


class InvalidScanOrFireId(GhostEvalError):
    pass


class FrameMismatch(GhostEvalError):
    pass


class DegenerateRay(GhostEvalError):
    pass


class EmptySubmap(GhostEvalError):
    """No neighbouring pose lies within the submap radius."""


class InputMismatch(GhostEvalError):
    pass


class SpecError(GhostEvalError):
    pass


class PlanOutOfRange(GhostEvalError):
    pass


class FormatError(GhostEvalError):
    """Base class for on-disk format problems."""


class ParseError(FormatError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class NonContiguousIndex(ParseError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass
