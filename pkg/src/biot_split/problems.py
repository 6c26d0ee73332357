"""Ready-made problem setups: the manufactured solution and Barry & Mercer."""

from __future__ import annotations

from functools import partial

from .analytic import BarryMercerConfig, manufactured_exact, manufactured_sources
from .assembly import BiotParams
from .mesh import build_rect_mesh
from .schemes import BiotProblem, Discretization

MANUFACTURED_PARAMS = BiotParams(mu=2.0, lam=1.0, alpha=1.0, c0=0.01, k=1.0)


def _body_force(x, y, t, params):
    return manufactured_sources(x, y, t, params)[0]


def _fluid_source(x, y, t, params):
    return manufactured_sources(x, y, t, params)[1]


def _initial_pressure(x, y):
    return manufactured_exact(x, y, 0.0)[2]


def _initial_displacement(x, y):
    u, v, _ = manufactured_exact(x, y, 0.0)
    return u, v


def manufactured_problem(nx: int, params: BiotParams = MANUFACTURED_PARAMS, discretization=Discretization.MINI) -> BiotProblem:
    """Unit-square problem whose exact solution is the manufactured one."""
    return BiotProblem(
        mesh=build_rect_mesh(nx, nx, 1.0, 1.0),
        params=params,
        discretization=discretization,
        body_force=partial(_body_force, params=params),
        fluid_source=partial(_fluid_source, params=params),
        initial_displacement=_initial_displacement,
        initial_pressure=_initial_pressure,
    )


def barry_mercer_problem(cfg: BarryMercerConfig, nx: int, alpha: float = 1.0, c0: float = 0.0, discretization=Discretization.MINI) -> BiotProblem:
    """Point-source problem, drained boundary, zero tangential displacement."""
    params = BiotParams(mu=cfg.mu, lam=cfg.lam, alpha=alpha, c0=c0, k=cfg.k, a=cfg.a, b=cfg.b)
    ny = max(1, round(nx * cfg.b / cfg.a))
    return BiotProblem(
        mesh=build_rect_mesh(nx, ny, cfg.a, cfg.b),
        params=params,
        discretization=discretization,
        point_source=(cfg.source, cfg.source_amplitude),
        displacement_bc="tangential",
    )
