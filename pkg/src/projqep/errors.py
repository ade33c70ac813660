"""Exception hierarchy."""


class QEPError(Exception):
    """Base class for every error raised by this package."""


class InfeasibleSet(QEPError, ValueError):
    pass


class UnboundedSupport(QEPError, ValueError):
    pass


class NonConvergence(QEPError, RuntimeError):
    pass


class DimensionMismatch(QEPError, ValueError):
    pass


class DimensionTooHigh(QEPError, ValueError):
    pass


class OutsideDomain(QEPError, ValueError):
    pass


class UndefinedAtPoint(QEPError, ValueError):
    pass


class InvalidBifunction(QEPError, ValueError):
    pass


class DegenerateSamples(QEPError, ValueError):
    pass


class EmptyConstraint(QEPError, ValueError):
    pass


class NoMethodApplicable(QEPError, ValueError):
    pass


class InnerBudgetExceeded(QEPError, RuntimeError):
    pass


class NonpositiveModulus(QEPError, ValueError):
    pass


class InvalidModulus(QEPError, ValueError):
    pass


class ConfigParseError(QEPError, ValueError):
    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class ConfigValidationError(QEPError, ValueError):
    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")
