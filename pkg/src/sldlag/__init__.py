"""Exact sparse linear algebra modulo large primes.

Kernel-vector computation for huge singular sparse matrices over Z/ellZ:
(block) Wiedemann with a 2D-grid distributed SpMV, structured Gaussian
elimination preprocessing, weight-balancing permutations, RNS inner-loop
arithmetic, and an analytic wall-clock estimator.
"""

from .modring import PrimeModulus, RnsContext, RnsValue, NotInvertible, ContractViolation

__all__ = [
    "PrimeModulus",
    "RnsContext",
    "RnsValue",
    "NotInvertible",
    "ContractViolation",
]

__version__ = "0.1.0"
