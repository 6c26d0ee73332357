"""Time stepping for the two-field Biot system.

All pressure equations are multiplied through by the time step, e.g. the
explicit fixed-stress pressure solve reads

    [(c0 + L) M + tau B] p1 = (c0 + L) M p0 - G (u0 - u_1) + L M (p0 - p_1) + tau g1

followed by the elasticity solve ``A u1 = G^T p1 + f1``. Here ``M`` is the
P1 mass matrix, ``B`` the K-weighted Laplacian, ``G`` the coupling
``alpha (q, div v)`` and ``A`` the elasticity matrix. The monolithic
backward-Euler step is reached by iterating the same two solves to
convergence (inner fixed-stress iteration).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    BiotParams,
    apply_dirichlet,
    assemble_coupling,
    assemble_elasticity,
    assemble_lumped_mass,
    assemble_mass,
    assemble_point_load,
    assemble_pressure_stiffness,
    assemble_volume_load,
)
from .fespace import FeSpace, SpaceKind, make_space
from .linsolve import SolverConfig, SolverError, cg_solve
from .mesh import Mesh

log = logging.getLogger(__name__)

_LOOSE_SUB_TOL = 1e-4


class Discretization(str, enum.Enum):
    MINI = "mini"
    P1P1_STABILIZED = "p1p1_stabilized"


class SchemeKind(str, enum.Enum):
    MONOLITHIC = "monolithic"
    EXPLICIT_NAIVE = "explicit_naive"
    EXPLICIT_FIXED_STRESS = "explicit_fixed_stress"
    EXPLICIT_STABILIZED_P1P1 = "explicit_stabilized_p1p1"


class SchemeError(RuntimeError):
    """A time step failed; ``step`` is the index of the level being computed."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class InstabilityError(SchemeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    kind: SchemeKind
    tau: float
    n_steps: int
    omega: float = 1.0
    inner_tol: float = 1e-10
    inner_max: int = 500

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")
        if self.kind in (SchemeKind.EXPLICIT_FIXED_STRESS, SchemeKind.EXPLICIT_STABILIZED_P1P1) and self.omega < 1:
            raise ValueError(f"omega must be at least 1 for {self.kind.value}, got {self.omega}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.inner_tol > 0 or self.inner_max < 1:
            raise ValueError("inner_tol must be positive and inner_max at least 1")


@dataclass
class State:
    u: np.ndarray
    p: np.ndarray
    step_index: int
    time: float


def compute_stabilization_L(params: BiotParams, d: int = 2, omega: float = 1.0) -> float:
    """``L = omega * alpha^2 / (lambda + 2 mu / d)``."""
    if d != 2:
        raise ValueError("only d = 2 is supported")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    return omega * params.alpha**2 / (params.lam + 2 * params.mu / d)


VectorField = Callable[[np.ndarray, np.ndarray, float], tuple]
ScalarField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class BiotProblem:
    """Geometry, coefficients and data of one Biot run.

    ``point_source`` is ``(x0, amplitude)`` with ``amplitude(t)`` the
    strength of a Dirac source in the flow equation. Initial data are
    functions of ``(x, y)`` and are interpolated at the vertices.
    """

    mesh: Mesh
    params: BiotParams
    discretization: Discretization = Discretization.MINI
    body_force: VectorField | None = None
    fluid_source: ScalarField | None = None
    point_source: tuple | None = None
    initial_displacement: Callable | None = None
    initial_pressure: Callable | None = None
    displacement_bc: str = "all"

    def __post_init__(self):
        self.discretization = Discretization(self.discretization)


class BiotSystem:
    """Assembled matrices and loads of a problem, plus per-run operator caches."""

    def __init__(self, problem: BiotProblem, solver: SolverConfig = SolverConfig()):
        self.problem = problem
        self.params = problem.params
        self.solver = solver
        ukind = SpaceKind.MINI_VECTOR if problem.discretization is Discretization.MINI else SpaceKind.P1_VECTOR
        self.uspace: FeSpace = make_space(problem.mesh, ukind, dirichlet=problem.displacement_bc)
        self.pspace: FeSpace = make_space(problem.mesh, SpaceKind.P1_SCALAR)
        prm = self.params
        self.A = assemble_elasticity(self.uspace, prm.mu, prm.lam)
        self.B = assemble_pressure_stiffness(self.pspace, prm.k)
        self.M = assemble_mass(self.pspace)
        self.M0 = assemble_lumped_mass(self.pspace)
        self.G = assemble_coupling(self.pspace, self.uspace, prm.alpha)
        self.GT = self.G.T.tocsr()
        self.A_bc, _ = apply_dirichlet(self.A, None, self.uspace.dirichlet_dofs)
        self._u_free = self.uspace.free_mask.astype(float)
        self._p_free = self.pspace.free_mask.astype(float)
        self._pressure_ops: dict = {}
        self.cg_iterations = 0

    def pressure_operator(self, c_mass: float, c_lumped: float, tau: float) -> sp.csr_matrix:
        """Dirichlet-eliminated ``c_mass M + c_lumped M0 + tau B`` (cached)."""
        key = (c_mass, c_lumped, tau)
        op = self._pressure_ops.get(key)
        if op is None:
            mat = c_mass * self.M + tau * self.B
            if c_lumped != 0.0:
                mat = mat + c_lumped * self.M0
            op, _ = apply_dirichlet(mat, None, self.pspace.dirichlet_dofs)
            self._pressure_ops[key] = op
        return op

    def displacement_load(self, t: float) -> np.ndarray:
        return assemble_volume_load(self.uspace, self.problem.body_force, t) * self._u_free

    def pressure_load(self, t: float) -> np.ndarray:
        g = assemble_volume_load(self.pspace, self.problem.fluid_source, t)
        if self.problem.point_source is not None:
            x0, amplitude = self.problem.point_source
            g = g + assemble_point_load(self.pspace, x0, amplitude(t))
        return g * self._p_free

    def _cfg(self, rel_tol):
        if rel_tol is None or rel_tol <= self.solver.rel_tol:
            return self.solver
        return replace(self.solver, rel_tol=rel_tol)

    def solve_pressure(self, op, rhs, guess, rel_tol: float | None = None):
        res = cg_solve(op, rhs * self._p_free, guess, self._cfg(rel_tol))
        self.cg_iterations += res.iterations
        return res.x

    def solve_displacement(self, p, f_load, guess, rel_tol: float | None = None):
        rhs = (self.GT @ p + f_load) * self._u_free
        res = cg_solve(self.A_bc, rhs, guess, self._cfg(rel_tol))
        self.cg_iterations += res.iterations
        return res.x


def _check_finite(state: State) -> State:
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.p))):
        raise InstabilityError("non-finite values in the solution", state.step_index)
    return state


def _loads(system: BiotSystem, t: float, loads):
    if loads is None:
        return system.displacement_load(t), system.pressure_load(t)
    return loads


def step_fixed_stress(system: BiotSystem, state_j: State, state_jm1: State, tau: float, L: float, loads=None) -> State:
    """One explicit fixed-stress step; ``L = 0`` is the plain explicit coupling."""
    t1 = (state_j.step_index + 1) * tau
    f1, g1 = _loads(system, t1, loads)
    M, c0 = system.M, system.params.c0
    op = system.pressure_operator(c0 + L, 0.0, tau)
    rhs = (c0 + L) * (M @ state_j.p) - system.G @ (state_j.u - state_jm1.u) + L * (M @ (state_j.p - state_jm1.p)) + tau * g1
    p = system.solve_pressure(op, rhs, state_j.p)
    u = system.solve_displacement(p, f1, state_j.u)
    return State(u, p, state_j.step_index + 1, t1)


def step_explicit_naive(system: BiotSystem, state_j: State, state_jm1: State, tau: float, loads=None) -> State:
    """Explicit coupling without stabilization; conditionally stable."""
    try:
        # blow-up is an expected outcome here and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            out = step_fixed_stress(system, state_j, state_jm1, tau, 0.0, loads)
    except SolverError as exc:
        raise InstabilityError(f"explicit coupling broke down: {exc}", state_j.step_index + 1) from exc
    return _check_finite(out)


def step_p1p1_stabilized(system: BiotSystem, state_j: State, state_jm1: State, tau: float, L: float, loads=None) -> State:
    """Explicit step of the stabilized P1-P1 scheme.

    The new-time stabilization uses the lumped mass ``M0``; the lagged term
    on the right uses the consistent mass ``M``.
    """
    t1 = (state_j.step_index + 1) * tau
    f1, g1 = _loads(system, t1, loads)
    M, M0, c0 = system.M, system.M0, system.params.c0
    op = system.pressure_operator(c0, L, tau)
    rhs = c0 * (M @ state_j.p) + L * (M0 @ state_j.p) - system.G @ (state_j.u - state_jm1.u) + L * (M @ (state_j.p - state_jm1.p)) + tau * g1
    p = system.solve_pressure(op, rhs, state_j.p)
    u = system.solve_displacement(p, f1, state_j.u)
    return State(u, p, state_j.step_index + 1, t1)


@dataclass
class InnerReport:
    iterations: int
    increment: float


def solve_monolithic_step(
    system: BiotSystem,
    state_j: State,
    tau: float,
    inner_tol: float = 1e-10,
    inner_max: int = 500,
    split_L: float | None = None,
    lumping_L: float = 0.0,
    guess: State | None = None,
    loads=None,
    report: list | None = None,
) -> State:
    """Backward-Euler step of the fully coupled system by inner fixed-stress iteration.

    Solves ``A u - G^T p = f`` and
    ``c0 M dp + lumping_L (M0 - M) dp + G du + tau B p = tau g`` with
    ``dp = p - p_j``, ``du = u - u_j``. ``lumping_L`` is nonzero only for the
    stabilized P1-P1 discretization. Iterates stop once the L2 norm of the
    pressure increment drops below ``inner_tol`` times the larger of the L2
    norms of the current iterate and of ``p_j`` (the latter keeps the test
    meaningful when the step drives the pressure to zero).
    """
    prm = system.params
    if split_L is None:
        split_L = compute_stabilization_L(prm)
    step = state_j.step_index + 1
    t1 = step * tau
    f1, g1 = _loads(system, t1, loads)
    M, c0 = system.M, prm.c0
    op = system.pressure_operator(c0 - lumping_L + split_L, lumping_L, tau)

    fixed = c0 * (M @ state_j.p) + tau * g1 + system.G @ state_j.u
    if lumping_L != 0.0:
        fixed = fixed + lumping_L * (system.M0 @ state_j.p - M @ state_j.p)
    start = guess if guess is not None else state_j
    u, p = start.u, start.p
    ref = math.sqrt(max(state_j.p @ (M @ state_j.p), 0.0))
    incr = math.inf
    # sub-solves only need to be accurate relative to the current inner
    # increment; the last iterations always run at the configured tolerance
    sub_tol = _LOOSE_SUB_TOL
    for k in range(1, inner_max + 1):
        rhs = fixed + split_L * (M @ p) - system.G @ u
        try:
            p_new = system.solve_pressure(op, rhs, p, sub_tol)
            u = system.solve_displacement(p_new, f1, u, sub_tol)
        except SolverError as exc:
            raise SchemeError(f"sub-solve failed in inner iteration {k}: {exc}", step) from exc
        dp = p_new - p
        p = p_new
        incr = math.sqrt(max(dp @ (M @ dp), 0.0))
        scale = max(math.sqrt(max(p @ (M @ p), 0.0)), ref)
        if not math.isfinite(incr):
            raise InstabilityError("non-finite inner iterate", step)
        exact = sub_tol <= max(system.solver.rel_tol, 1e-2 * inner_tol)
        sub_tol = min(_LOOSE_SUB_TOL, 1e-2 * incr / scale) if scale > 0 else 0.0
        if incr <= inner_tol * scale and exact:
            if report is not None:
                report.append(InnerReport(k, incr / scale if scale > 0 else 0.0))
            return State(u, p, step, t1)
    raise SchemeError(f"inner iteration did not converge in {inner_max} iterations (increment {incr:.3e})", step)


def first_step_implicit(system: BiotSystem, state0: State, tau: float, split_L: float | None = None, lumping_L: float = 0.0, **kw) -> State:
    """Fully implicit first level shared by all explicit schemes."""
    return solve_monolithic_step(system, state0, tau, split_L=split_L, lumping_L=lumping_L, **kw)


def interpolate_vector(space: FeSpace, fn) -> np.ndarray:
    """Nodal interpolant with zero bubble coefficients."""
    out = np.zeros(space.dof_count)
    if fn is not None:
        x, y = space.mesh.vertices[:, 0], space.mesh.vertices[:, 1]
        ux, uy = fn(x, y)
        nv = space.mesh.n_vertices
        out[0 : 2 * nv : 2] = ux
        out[1 : 2 * nv : 2] = uy
    out[space.dirichlet_dofs] = 0.0
    return out


def interpolate_scalar(space: FeSpace, fn) -> np.ndarray:
    out = np.zeros(space.dof_count)
    if fn is not None:
        out[:] = fn(space.mesh.vertices[:, 0], space.mesh.vertices[:, 1])
    out[space.dirichlet_dofs] = 0.0
    return out


def initial_state(system: BiotSystem, mode: str = "interpolate", inner_tol: float = 1e-10, inner_max: int = 500) -> State:
    """State at t = 0.

    ``interpolate`` takes nodal interpolants of the prescribed initial data.
    ``saddle_solve`` computes the discrete equilibrium
    ``a(u0, v) - alpha (p0, div v) = (f0, v)``, ``alpha (div u0, q) = (g0, q)``
    by conjugate gradients on the pressure Schur complement, each iteration
    running one elasticity sub-solve.
    """
    if mode == "interpolate":
        u0 = interpolate_vector(system.uspace, system.problem.initial_displacement)
        p0 = interpolate_scalar(system.pspace, system.problem.initial_pressure)
        return State(u0, p0, 0, 0.0)
    if mode != "saddle_solve":
        raise ValueError(f"unknown initial-state mode {mode!r}")

    f0, g0 = system.displacement_load(0.0), system.pressure_load(0.0)
    free = system.pspace.free_mask
    zero_p = np.zeros(system.pspace.dof_count)
    u_f = system.solve_displacement(zero_p, f0, None)  # A^{-1} f0
    rhs = (g0 - system.G @ u_f)[free]
    n = int(free.sum())
    if not np.any(rhs):
        return State(u_f, zero_p, 0, 0.0)

    def full(q):
        out = np.zeros(system.pspace.dof_count)
        out[free] = q
        return out

    def schur(q):
        w = system.solve_displacement(full(q), np.zeros(system.uspace.dof_count), None)
        return (system.G @ w)[free]

    S = spla.LinearOperator((n, n), matvec=schur, dtype=float)
    lumped = system.M0.diagonal()[free]
    L = compute_stabilization_L(system.params)
    prec = spla.LinearOperator((n, n), matvec=lambda r: r / (L * lumped), dtype=float)
    q, info = spla.cg(S, rhs, rtol=inner_tol, atol=0.0, maxiter=inner_max, M=prec)
    if info != 0:
        raise SchemeError("saddle-point initial solve did not converge", 0)
    p0 = full(q)
    u0 = system.solve_displacement(p0, f0, u_f)
    return State(u0, p0, 0, 0.0)


@dataclass
class Trajectory:
    states: list[State]
    cg_iterations: int = 0
    inner_iterations: list[int] = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.states[-1]


def run_simulation(
    problem: BiotProblem | BiotSystem,
    scheme: SchemeConfig,
    keep: str = "final",
    init_mode: str = "interpolate",
    solver: SolverConfig = SolverConfig(),
) -> Trajectory:
    """Advance ``scheme.n_steps`` steps from the initial state.

    The first level always comes from the implicit step; later levels use
    the selected stepper. ``keep`` is ``"final"`` (initial and last states)
    or ``"all"``.
    """
    system = problem if isinstance(problem, BiotSystem) else BiotSystem(problem, solver)
    prm = system.params
    disc = system.problem.discretization
    kind = scheme.kind
    if kind is SchemeKind.EXPLICIT_STABILIZED_P1P1 and disc is not Discretization.P1P1_STABILIZED:
        raise ValueError("the stabilized P1-P1 scheme needs the p1p1_stabilized discretization")
    if kind in (SchemeKind.EXPLICIT_FIXED_STRESS, SchemeKind.EXPLICIT_NAIVE) and disc is not Discretization.MINI:
        raise ValueError(f"{kind.value} needs the MINI discretization")
    tau = scheme.tau
    L = compute_stabilization_L(prm, omega=scheme.omega)
    lumping_L = L if disc is Discretization.P1P1_STABILIZED else 0.0
    split_L = compute_stabilization_L(prm)
    inner_kw = dict(inner_tol=scheme.inner_tol, inner_max=scheme.inner_max)

    start_iters = system.cg_iterations
    s0 = initial_state(system, init_mode, **inner_kw)
    states = [s0]
    report: list[InnerReport] = []
    prev, cur = s0, first_step_implicit(system, s0, tau, split_L=split_L, lumping_L=lumping_L, report=report, **inner_kw)
    _check_finite(cur)
    if keep == "all":
        states.append(cur)
    for _ in range(1, scheme.n_steps):
        if kind is SchemeKind.MONOLITHIC:
            guess = State(2.0 * cur.u - prev.u, 2.0 * cur.p - prev.p, cur.step_index, cur.time)
            nxt = solve_monolithic_step(system, cur, tau, split_L=split_L, lumping_L=lumping_L, guess=guess, report=report, **inner_kw)
        elif kind is SchemeKind.EXPLICIT_FIXED_STRESS:
            try:
                nxt = step_fixed_stress(system, cur, prev, tau, L)
            except SolverError as exc:
                raise SchemeError(str(exc), cur.step_index + 1) from exc
        elif kind is SchemeKind.EXPLICIT_NAIVE:
            nxt = step_explicit_naive(system, cur, prev, tau)
        else:
            try:
                nxt = step_p1p1_stabilized(system, cur, prev, tau, L)
            except SolverError as exc:
                raise SchemeError(str(exc), cur.step_index + 1) from exc
        _check_finite(nxt)
        prev, cur = cur, nxt
        if keep == "all":
            states.append(cur)
        log.debug("%s step %d done", kind.value, cur.step_index)
    if keep != "all":
        states.append(cur)
    return Trajectory(states, system.cg_iterations - start_iters, [r.iterations for r in report])
