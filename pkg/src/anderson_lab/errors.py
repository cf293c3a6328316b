"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3 and lemma violations (findings) exit 4.
"""


class AndersonLabError(Exception):
    """Base class for all package errors."""


class DomainError(AndersonLabError, ValueError):
    """An argument lies outside an operation's domain."""


class ConfigError(AndersonLabError, ValueError):
    """An experiment configuration failed validation."""


class NumericalError(AndersonLabError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


class ConvergenceError(NumericalError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SpectralCollision(NumericalError):
    """The energy sits (numerically) on the spectrum."""

    def __init__(self, message, distance):
        super().__init__(message)
        self.distance = distance


class DenseCapExceeded(NumericalError):
    pass


class GapFailure(AndersonLabError):
    """A Bernoulli decomposition has no positive gap for the requested p."""

    def __init__(self, message, p, iota):
        super().__init__(message)
        self.p = p
        self.iota = iota


class CertificationFailure(AndersonLabError):
    """No candidate p produced a decomposition with a positive gap."""

    def __init__(self, message, tried):
        super().__init__(message)
        self.tried = tried


class RTooSmall(AndersonLabError):
    """The net radius is too small for the test-function inequalities."""


class SchedulingError(AndersonLabError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class HypothesisFailure(AndersonLabError):
    """A numbered lemma hypothesis does not hold for the given input."""

    def __init__(self, message, hypothesis):
        super().__init__(message)
        self.hypothesis = hypothesis


class LemmaViolation(AndersonLabError):
    """A lemma's conclusion failed on an input satisfying its hypotheses."""


class CrossingError(NumericalError):
    """An eigenvalue path lost simplicity (gap below tolerance)."""

    def __init__(self, message, s):
        super().__init__(message)
        self.s = s
