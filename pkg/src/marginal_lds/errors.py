"""Exception hierarchy shared by every module in the package."""


class MarginalLdsError(Exception):
    """Base class for all package errors."""


class NotSpd(MarginalLdsError, ValueError):
    """A Cholesky pivot fell below the positive-definiteness floor."""


class NotSymmetric(MarginalLdsError, ValueError):
    pass


class Overflow(MarginalLdsError, ArithmeticError):
    """A matrix power norm exceeded 1e300."""


class DimensionMismatch(MarginalLdsError, ValueError):
    pass


class NoiseFileMissing(MarginalLdsError, FileNotFoundError):
    pass


class RequiresObservationMatrix(MarginalLdsError, ValueError):
    pass


class NonPositiveRegularizer(MarginalLdsError, ValueError):
    pass


class ModelMismatch(MarginalLdsError, ValueError):
    """Data does not follow y_s = A x_s + xi_s for the claimed A and noises."""


class InsufficientHistory(MarginalLdsError, ValueError):
    pass


class NotObservable(MarginalLdsError, ValueError):
    pass


class NotControllable(MarginalLdsError, ValueError):
    pass


class NoConvergence(MarginalLdsError, RuntimeError):
    pass


class UnstableFilter(MarginalLdsError, ValueError):
    pass


class DimensionTooLarge(MarginalLdsError, ValueError):
    pass


class NonMonicDivisor(MarginalLdsError, ValueError):
    pass


class NotFound(MarginalLdsError, LookupError):
    """Polynomial multiple search exhausted its candidate budget."""

    def __init__(self, message, best_residue=None, best_candidate=None):
        super().__init__(message)
        self.best_residue = best_residue
        self.best_candidate = best_candidate


class MissingConstants(MarginalLdsError, ValueError):
    pass


class NonPositiveRegret(MarginalLdsError, ValueError):
    pass


class ConfigError(MarginalLdsError, ValueError):
    """Configuration parse/validation failure, naming the offending field."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if field is not None:
            loc.append(f"field '{field}'")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.field = field
        self.line = line
