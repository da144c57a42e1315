"""Exception hierarchy shared by every module."""


class BiosignalError(Exception):
    """Base class for all package errors."""

    def __init__(self, message="", details=None):
        super().__init__(message)
        self.details = list(details) if details else []

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        if self.details:
            out["details"] = self.details
        return out


# signal / file formats
class ParseError(BiosignalError, ValueError):
    pass


class MalformedHeader(ParseError):
    pass


class InvalidRate(ParseError):
    pass


class DuplicateChannel(ParseError):
    pass


class UnknownChannel(ParseError):
    pass


class TooShort(BiosignalError, ValueError):
    pass


class EmptyChannel(BiosignalError, ValueError):
    pass


# tokenizer
class InvalidOverlap(BiosignalError, ValueError):
    pass


class RateMismatch(BiosignalError, ValueError):
    pass


class EmptySentence(BiosignalError, ValueError):
    pass


# spectral
class BadFftSize(BiosignalError, ValueError):
    pass


# autodiff / encoder
class ShapeError(BiosignalError, ValueError):
    pass


class SentenceTooLong(BiosignalError, ValueError):
    pass


# trainer
class NaNGradient(BiosignalError, FloatingPointError):
    pass


class CorruptCheckpoint(BiosignalError, ValueError):
    pass


class IncompatibleCheckpoint(BiosignalError, ValueError):
    pass


class EmptySplit(BiosignalError, ValueError):
    pass


# metrics
class DegenerateLabels(BiosignalError, ValueError):
    pass


# config / cli
class ConfigError(BiosignalError, ValueError):
    pass
