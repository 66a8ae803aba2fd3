"""Numerical checks for X-ADM masses and drift-Laplace Green potentials."""
import jax

jax.config.update("jax_enable_x64", True)

from .errors import ConfigError, DomainError, LimitNotResolved, ParameterError, SolverError, XadmError  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "LimitNotResolved",
    "ParameterError",
    "SolverError",
    "XadmError",
]
