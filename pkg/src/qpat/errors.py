"""Exception hierarchy shared by all qpat modules."""


class QpatError(Exception):
    """Base class for errors raised by qpat."""


class DiscretizationError(QpatError, ValueError):
    """Invalid mesh or angular discretization parameters."""


class DomainError(QpatError, ValueError):
    """A point lies outside the computational domain."""


class ParameterError(QpatError, ValueError):
    """A physical parameter is outside its admissible range."""


class AssemblyError(QpatError, ValueError):
    """Incompatible inputs passed to a system assembly routine."""


class ConfigurationError(QpatError, ValueError):
    """Invalid measurement geometry, scenario or run configuration."""


class SolverError(QpatError, RuntimeError):
    """A linear solve did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TruncationError(QpatError, RuntimeError):
    """A series expansion hit its term cap before converging."""

    def __init__(self, message, partial=None, n_terms=None):
        super().__init__(message)
        self.partial = partial
        self.n_terms = n_terms


class DivergenceError(QpatError, RuntimeError):
    """An iteration produced non-finite values."""

    def __init__(self, message, last_iterate=None, iteration=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iteration = iteration
