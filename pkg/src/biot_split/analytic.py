"""Exact solutions, manufactured sources, error norms and convergence rates.

The manufactured fields on the unit square are

    u = sin(pi x t) cos(pi y t) B(x, y)
    v = cos(pi x t) sin(pi y t) B(x, y)
    p = cos(t + x - y) B(x, y),        B = x y (1 - x)(1 - y)

and all derivatives below are written out by hand (product rule on the
factors); ``tests/test_analytic.py`` locks them against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import BiotParams, element_data
from .fespace import FeSpace, QuadratureRule, eval_basis, make_quadrature
from .mesh import locate_point

PI = math.pi


def _bump(x, y):
    X, Y = x * (1 - x), y * (1 - y)
    dX, dY = 1 - 2 * x, 1 - 2 * y
    return X, Y, dX, dY


def manufactured_exact(x, y, t):
    """Return ``(u, v, p)`` of the manufactured solution."""
    X, Y, _, _ = _bump(x, y)
    B = X * Y
    u = np.sin(PI * x * t) * np.cos(PI * y * t) * B
    v = np.cos(PI * x * t) * np.sin(PI * y * t) * B
    p = np.cos(t + x - y) * B
    return u, v, p


def _factors(x, y, t):
    """1D factors and their x/y derivatives up to second order.

    With ``u = A(x) C(y)`` and ``v = D(x) S(y)``:
    A = sin(pi x t) X, C = cos(pi y t) Y, D = cos(pi x t) X, S = sin(pi y t) Y.
    """
    X, Y, dX, dY = _bump(x, y)
    w = PI * t
    sx, cx = np.sin(w * x), np.cos(w * x)
    sy, cy = np.sin(w * y), np.cos(w * y)
    A = (sx * X, w * cx * X + sx * dX, -w * w * sx * X + 2 * w * cx * dX - 2 * sx)
    C = (cy * Y, -w * sy * Y + cy * dY, -w * w * cy * Y - 2 * w * sy * dY - 2 * cy)
    D = (cx * X, -w * sx * X + cx * dX, -w * w * cx * X - 2 * w * sx * dX - 2 * cx)
    S = (sy * Y, w * cy * Y + sy * dY, -w * w * sy * Y + 2 * w * cy * dY - 2 * sy)
    return A, C, D, S


def manufactured_displacement_grad(x, y, t):
    """``(du/dx, du/dy, dv/dx, dv/dy)``."""
    A, C, D, S = _factors(x, y, t)
    return A[1] * C[0], A[0] * C[1], D[1] * S[0], D[0] * S[1]


def manufactured_pressure_grad(x, y, t):
    X, Y, dX, dY = _bump(x, y)
    ph = t + x - y
    s, c = np.sin(ph), np.cos(ph)
    B = X * Y
    return -s * B + c * dX * Y, s * B + c * X * dY


def _pressure_derivs(x, y, t):
    X, Y, dX, dY = _bump(x, y)
    ph = t + x - y
    s, c = np.sin(ph), np.cos(ph)
    B = X * Y
    p_t = -s * B
    p_x = -s * B + c * dX * Y
    p_y = s * B + c * X * dY
    p_xx = -c * B - 2 * s * dX * Y - 2 * c * Y
    p_yy = -c * B + 2 * s * X * dY - 2 * c * X
    return p_t, p_x, p_y, p_xx, p_yy


def _div_dt_displacement(x, y, t):
    """``d/dt (du/dx + dv/dy)``."""
    X, Y, dX, dY = _bump(x, y)
    B = X * Y
    w = PI * t
    sx, cx = np.sin(w * x), np.cos(w * x)
    sy, cy = np.sin(w * y), np.cos(w * y)
    # u = W B with W = sin(pi x t) cos(pi y t), v = Z B with Z = cos(pi x t) sin(pi y t)
    W_t = PI * x * cx * cy - PI * y * sx * sy
    Z_t = -PI * x * sx * sy + PI * y * cx * cy
    W_tx = PI * cx * cy - PI * w * x * sx * cy - PI * w * y * cx * sy
    Z_ty = PI * cx * cy - PI * w * x * sx * cy - PI * w * y * cx * sy
    return W_tx * B + W_t * dX * Y + Z_ty * B + Z_t * X * dY


def manufactured_sources(x, y, t, params: BiotParams):
    """Body force ``(fx, fy)`` and fluid source ``g`` matching the exact fields.

    f = -div(2 mu eps(u) + lambda div(u) I) + alpha grad p
    g = c0 p_t + alpha div(u_t) - K lap p
    """
    mu, lam, alpha = params.mu, params.lam, params.alpha
    A, C, D, S = _factors(x, y, t)
    u_xx, u_yy, u_xy = A[2] * C[0], A[0] * C[2], A[1] * C[1]
    v_xx, v_yy, v_xy = D[2] * S[0], D[0] * S[2], D[1] * S[1]
    p_t, p_x, p_y, p_xx, p_yy = _pressure_derivs(x, y, t)

    fx = -((lam + 2 * mu) * u_xx + mu * u_yy + (lam + mu) * v_xy) + alpha * p_x
    fy = -(mu * v_xx + (lam + 2 * mu) * v_yy + (lam + mu) * u_xy) + alpha * p_y
    g = params.c0 * p_t + alpha * _div_dt_displacement(x, y, t) - params.k * (p_xx + p_yy)
    return (fx, fy), g


# ----------------------------------------------------------------------------
# error norms


def fe_values(space: FeSpace, coeffs: np.ndarray, quad: QuadratureRule):
    """FE function values and gradients at the quadrature points of every triangle.

    Scalar spaces give ``(nt, nq)`` and ``(nt, nq, 2)``; vector spaces give
    ``(nt, nq, 2)`` and ``(nt, nq, 2, 2)`` with ``grad[..., c, d] = d u_c / d x_d``.
    """
    ed = element_data(space, quad)
    local = np.asarray(coeffs)[space.cell_dofs]  # (nt, nloc)
    if space.kind.is_vector:
        local = local.reshape(local.shape[0], -1, 2)  # (nt, nb, comp)
        vals = np.einsum("qb,tbc->tqc", ed.values, local)
        grads = np.einsum("tqbd,tbc->tqcd", ed.grads, local)
    else:
        vals = np.einsum("qb,tb->tq", ed.values, local)
        grads = np.einsum("tqbd,tb->tqd", ed.grads, local)
    return ed, vals, grads


def point_values(space: FeSpace, coeffs: np.ndarray, points) -> np.ndarray:
    """Evaluate an FE function at arbitrary points of the domain.

    Returns shape ``(npts,)`` for scalar spaces and ``(npts, 2)`` for vector ones.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    coeffs = np.asarray(coeffs)
    out = np.zeros((pts.shape[0], space.n_components))
    for i, pt in enumerate(pts):
        tri, lam = locate_point(space.mesh, pt)
        vals, _ = eval_basis(space.kind, lam[None, :])
        local = coeffs[space.cell_dofs[tri]]
        if space.kind.is_vector:
            out[i] = vals[0] @ local.reshape(-1, 2)
        else:
            out[i, 0] = vals[0] @ local
    return out if space.kind.is_vector else out[:, 0]


def l2_error(space: FeSpace, p_h: np.ndarray, exact, t: float, quad: QuadratureRule | None = None) -> float:
    """``|| exact(., t) - p_h ||`` in L2; ``exact(x, y, t)`` returns a scalar field."""
    quad = quad or make_quadrature(5)
    ed, vals, _ = fe_values(space, p_h, quad)
    x, y = ed.points[..., 0], ed.points[..., 1]
    e = np.broadcast_to(exact(x, y, t), vals.shape) - vals
    return float(math.sqrt(np.sum(ed.jw * e * e)))


def energy_error(space: FeSpace, u_h: np.ndarray, exact_grad, t: float, params: BiotParams, quad: QuadratureRule | None = None) -> float:
    """``|| u - u_h ||_A`` with integrand ``2 mu |eps(e)|^2 + lambda (div e)^2``.

    ``exact_grad(x, y, t)`` returns ``(du/dx, du/dy, dv/dx, dv/dy)``.
    """
    quad = quad or make_quadrature(5)
    ed, _, grads = fe_values(space, u_h, quad)
    x, y = ed.points[..., 0], ed.points[..., 1]
    ux, uy, vx, vy = exact_grad(x, y, t)
    exx = ux - grads[..., 0, 0]
    eyy = vy - grads[..., 1, 1]
    exy = 0.5 * ((uy - grads[..., 0, 1]) + (vx - grads[..., 1, 0]))
    dens = 2 * params.mu * (exx**2 + eyy**2 + 2 * exy**2) + params.lam * (exx + eyy) ** 2
    return float(math.sqrt(np.sum(ed.jw * dens)))


def b_norm_error(space: FeSpace, p_h: np.ndarray, exact_grad, t: float, params: BiotParams, quad: QuadratureRule | None = None) -> float:
    """``|| p - p_h ||_B`` with integrand ``K |grad e|^2``."""
    quad = quad or make_quadrature(5)
    ed, _, grads = fe_values(space, p_h, quad)
    x, y = ed.points[..., 0], ed.points[..., 1]
    px, py = exact_grad(x, y, t)
    dens = (px - grads[..., 0]) ** 2 + (py - grads[..., 1]) ** 2
    return float(math.sqrt(params.k * np.sum(ed.jw * dens)))


def convergence_rate(coarse_error: float, fine_error: float) -> float | None:
    """``log2(coarse / fine)``; ``None`` when either error is not positive."""
    if not (coarse_error > 0 and fine_error > 0):
        return None
    return math.log2(coarse_error / fine_error)


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    tau: float
    p_err_fully: float | None
    p_err_dec: float | None
    p_rate: float | None
    u_err_fully: float | None
    u_err_dec: float | None
    u_rate: float | None


def convergence_rows(levels, p_fully, p_dec, u_fully, u_dec) -> list[ConvergenceRow]:
    """Pair per-level errors with the rates of the decoupled columns."""
    rows = []
    for i, (h, tau) in enumerate(levels):
        p_rate = u_rate = None
        if i > 0:
            if p_dec[i - 1] is not None and p_dec[i] is not None:
                p_rate = convergence_rate(p_dec[i - 1], p_dec[i])
            if u_dec[i - 1] is not None and u_dec[i] is not None:
                u_rate = convergence_rate(u_dec[i - 1], u_dec[i])
        rows.append(ConvergenceRow(h, tau, p_fully[i], p_dec[i], p_rate, u_fully[i], u_dec[i], u_rate))
    return rows


# ----------------------------------------------------------------------------
# Barry & Mercer


def lame_from_young_poisson(E: float, nu: float) -> tuple[float, float]:
    """Plane-strain Lamé parameters ``(lambda, mu)``."""
    if not E > 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


@dataclass(frozen=True)
class BarryMercerConfig:
    """Pulsating point source ``2 nu_s delta(x0) sin(nu_s t)`` in a drained rectangle.

    The source frequency is ``nu_s = (lambda + 2 mu) K / (a b)``.
    """

    lam: float
    mu: float
    k: float
    source: tuple[float, float] = (0.25, 0.25)
    a: float = 1.0
    b: float = 1.0
    n_modes: int = 128

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")
        if not self.frequency > 0:
            raise ValueError("source frequency must be positive")

    @property
    def frequency(self) -> float:
        return (self.lam + 2 * self.mu) * self.k / (self.a * self.b)

    @property
    def quarter_period(self) -> float:
        return PI / (2 * self.frequency)

    def source_amplitude(self, t: float) -> float:
        return 2 * self.frequency * math.sin(self.frequency * t)


def _dirichlet_green(cfg: BarryMercerConfig, x, y) -> np.ndarray:
    """Green's function of ``-Laplace`` on the rectangle with pole at the source.

    Single-series form: the sum over the y-modes is done in closed form,
    leaving ``(2/a) sum_n sin(a_n x) sin(a_n x0) g_n(y)`` with
    ``g_n = sinh(a_n y<) sinh(a_n (b - y>)) / (a_n sinh(a_n b))``, which decays
    like ``exp(-a_n |y - y0|)``. The hyperbolic ratio is evaluated through
    decaying exponentials to avoid overflow.
    """
    x0, y0 = cfg.source
    an = np.arange(1, cfg.n_modes + 1) * PI / cfg.a
    lo, hi = np.minimum(y, y0)[:, None], np.maximum(y, y0)[:, None]
    g = (
        np.exp(-an * (hi - lo))
        * -np.expm1(-2 * an * lo)
        * -np.expm1(-2 * an * (cfg.b - hi))
        / (2 * an * -np.expm1(-2 * an * cfg.b))
    )
    return (2 / cfg.a) * np.einsum("in,n,in->i", np.sin(np.outer(x, an)), np.sin(an * x0), g)


def barry_mercer_exact(cfg: BarryMercerConfig, x, y, t: float):
    """Truncated modal series ``(p, u, v)`` at points ``(x, y)`` and time ``t``.

    Requires ``alpha = 1`` and zero storage. Each mode
    ``sin(a_n x) sin(b_q y)`` of the pressure satisfies, after eliminating
    the irrotational displacement ``div u = p / (lambda + 2 mu)``,

        dp/dt + nu_s g_nq p = 8 nu_s (lambda + 2 mu) / (a b) phi_nq(x0) sin(nu_s t),

    with ``g_nq = a b (a_n^2 + b_q^2)``, solved from ``p(0) = 0``. The
    displacement is ``-(a_n cos sin, b_q sin cos) p_nq / ((lambda + 2 mu) k^2)``.

    The quasi-static part ``sin(nu_s t) / g_nq`` of every pressure mode sums
    to ``2 (lambda + 2 mu) / (a b) sin(nu_s t) G(x, x0)`` with ``G`` the
    Dirichlet Green's function; it is evaluated in single-series form so the
    logarithmic singularity does not slow the truncation down. The remaining
    modes decay like ``1 / g_nq^2`` and are summed directly.
    """
    x, y = np.broadcast_arrays(np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float)))
    x, y = x.ravel(), y.ravel()
    m = cfg.lam + 2 * cfg.mu
    om = cfg.frequency
    n = np.arange(1, cfg.n_modes + 1)
    an = n * PI / cfg.a
    bq = n * PI / cfg.b
    k2 = an[:, None] ** 2 + bq[None, :] ** 2
    gam = cfg.a * cfg.b * k2
    x0, y0 = cfg.source
    phi0 = np.sin(an * x0)[:, None] * np.sin(bq * y0)[None, :]
    s_t, c_t = math.sin(om * t), math.cos(om * t)
    decay = np.exp(-gam * om * t)
    scale = 8 * m / (cfg.a * cfg.b) * phi0
    coef = scale * (gam * s_t - c_t + decay) / (gam**2 + 1)  # pressure mode amplitudes
    rest = scale * ((decay - c_t) / (gam**2 + 1) - s_t / (gam * (gam**2 + 1)))  # coef minus quasi-static part
    ucoef = -an[:, None] * coef / (m * k2)
    vcoef = -bq[None, :] * coef / (m * k2)

    sx, cx = np.sin(np.outer(x, an)), np.cos(np.outer(x, an))  # (npts, N)
    sy, cy = np.sin(np.outer(y, bq)), np.cos(np.outer(y, bq))
    p = np.einsum("in,nq,iq->i", sx, rest, sy) + 2 * m / (cfg.a * cfg.b) * s_t * _dirichlet_green(cfg, x, y)
    u = np.einsum("in,nq,iq->i", cx, ucoef, sy)
    v = np.einsum("in,nq,iq->i", sx, vcoef, cy)
    # the sine factors vanish on the edges; remove the round-off there
    on_x = np.isclose(x, 0.0) | np.isclose(x, cfg.a)
    on_y = np.isclose(y, 0.0) | np.isclose(y, cfg.b)
    p[on_x | on_y] = 0.0
    u[on_y] = 0.0
    v[on_x] = 0.0
    return p, u, v
