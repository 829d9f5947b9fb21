"""Exception hierarchy shared by all modules."""


class ManistatError(Exception):
    pass


class DomainError(ManistatError, ValueError):
    """Input is not a valid point/tangent or lies outside an operation's domain."""


class CutLocusError(DomainError):
    """Second point lies (numerically) on the cut locus of the first."""


class UnsupportedError(ManistatError, NotImplementedError):
    """Operation not available on this manifold."""


class ConfigError(ManistatError, ValueError):
    pass


class NumericalError(ManistatError, ArithmeticError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class NoSolutionError(NumericalError):
    pass


class ExtrapolationError(DomainError):
    pass


class DegenerateDispersionError(DomainError):
    pass


class EnvelopeFailureError(NumericalError):
    pass


class SpectralError(DomainError):
    """A matrix has eigenvalues outside the region an operation requires."""
