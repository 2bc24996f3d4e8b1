"""Numerical laboratory for random matching costs on flat model domains.

Heat kernels and the time-averaged kernel ``q_t`` on the flat torus, the
Neumann unit square and the unit interval; the smoothed potential of an
empirical measure; exact and flow-based couplings; and a reproducible Monte
Carlo harness for the ``log(n)/n`` matching-cost laws.
"""
from .errors import ConfigError, DomainError, PreconditionError, TruncationError
from .geometry import Domain

__all__ = ["ConfigError", "Domain", "DomainError", "PreconditionError", "TruncationError"]
__version__ = "0.1.0"
