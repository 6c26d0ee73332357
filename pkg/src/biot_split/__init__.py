"""Explicit fixed-stress splitting for the two-field quasi-static Biot model.

Modules: ``mesh`` (structured triangulations), ``fespace`` (P1, P1 vector,
MINI spaces and quadrature), ``assembly`` (sparse bilinear forms and loads),
``linsolve`` (Jacobi-preconditioned CG), ``schemes`` (time steppers),
``analytic`` (exact solutions and error norms) and ``cli`` (experiment drivers).
"""

from .assembly import BiotParams
from .schemes import BiotProblem, BiotSystem, Discretization, SchemeConfig, SchemeKind, run_simulation

__version__ = "0.1.0"

__all__ = [
    "BiotParams",
    "BiotProblem",
    "BiotSystem",
    "Discretization",
    "SchemeConfig",
    "SchemeKind",
    "run_simulation",
]
