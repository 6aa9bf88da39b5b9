"""Exception hierarchy. Everything subclasses ``ValueError`` so callers that
only care about bad input can catch that."""


class CrossmaskError(ValueError):
    pass


class ParseError(CrossmaskError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte/line offset {offset})"
        super().__init__(message)


class DimensionError(CrossmaskError):
    pass


class OrderingError(CrossmaskError):
    pass


class ParameterError(CrossmaskError):
    pass


class GroupingError(CrossmaskError):
    pass


class ConfigError(CrossmaskError):
    pass


class FingerprintError(CrossmaskError):
    pass


class ValidationError(CrossmaskError):
    pass
