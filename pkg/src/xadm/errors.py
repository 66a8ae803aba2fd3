"""Exception hierarchy shared by all modules."""


class XadmError(Exception):
    """Base class."""


class DomainError(XadmError):
    """A point lies outside the chart domain or the metric is not positive definite there."""


class ParameterError(XadmError, ValueError):
    """A parameter violates a stated constraint."""


class SolverError(XadmError):
    """A linear, nonlinear or ODE solve failed; carries a residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class LimitNotResolved(XadmError):
    """A radius sweep or t-sweep did not settle; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(XadmError):
    """Invalid run configuration; message names the offending field path."""
