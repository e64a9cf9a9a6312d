"""Exception hierarchy shared by all modules."""


class HypcogError(Exception):
    """Base class for library errors."""


class InvalidInputError(HypcogError, ValueError):
    pass


class OutOfManifoldError(HypcogError, ValueError):
    pass


class DegenerateGradientError(HypcogError, ArithmeticError):
    pass


class InvalidMetricError(HypcogError, ValueError):
    pass


class SchemaError(HypcogError, ValueError):
    """Malformed input record; carries the offending line and field when known."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class TooLargeError(HypcogError, ValueError):
    pass


class DepthTooLargeError(HypcogError, ValueError):
    def __init__(self, message, level=None):
        self.level = level
        super().__init__(message)


class DivergenceError(HypcogError, FloatingPointError):
    def __init__(self, message, term=None):
        self.term = term
        super().__init__(message)
