"""Finite-element spaces, reference basis functions and triangle quadrature.

Three spaces are provided on a :class:`~biot_split.mesh.Mesh`:

* ``P1_SCALAR``: continuous piecewise linears, one dof per vertex.
* ``P1_VECTOR``: two copies of P1, dofs interleaved per vertex as (x, y).
* ``MINI_VECTOR``: P1 vector enriched with one cubic bubble per triangle and
  component; bubble dofs follow all vertex dofs, in triangle order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh


class SpaceKind(str, enum.Enum):
    P1_SCALAR = "p1_scalar"
    P1_VECTOR = "p1_vector"
    MINI_VECTOR = "mini_vector"

    @property
    def is_vector(self) -> bool:
        return self is not SpaceKind.P1_SCALAR

    @property
    def n_shape(self) -> int:
        """Scalar shape functions per triangle."""
        return 4 if self is SpaceKind.MINI_VECTOR else 3


@dataclass(frozen=True)
class FeSpace:
    kind: SpaceKind
    mesh: Mesh
    dof_count: int
    cell_dofs: np.ndarray  # (nt, n_local)
    dirichlet_dofs: np.ndarray

    @property
    def n_components(self) -> int:
        return 2 if self.kind.is_vector else 1

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return mask


def _boundary_sides(mesh: Mesh):
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    tol = 1e-14
    vertical = (np.abs(x) <= tol) | (np.abs(x - mesh.a) <= tol)
    horizontal = (np.abs(y) <= tol) | (np.abs(y - mesh.b) <= tol)
    return vertical, horizontal


def make_space(mesh: Mesh, kind: SpaceKind | str, dirichlet: str = "all") -> FeSpace:
    """Build a space with its dof layout.

    ``dirichlet`` selects the constrained vertex dofs: ``"all"`` (every
    boundary vertex, every component), ``"tangential"`` (vector spaces only:
    the y-component on the sides x = 0, a and the x-component on y = 0, b),
    or ``"none"``.
    """
    kind = SpaceKind(kind)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    tris = mesh.triangles

    if kind is SpaceKind.P1_SCALAR:
        cell_dofs = tris.copy()
        dof_count = nv
    else:
        vdofs = np.stack([2 * tris, 2 * tris + 1], axis=-1).reshape(nt, 6)
        if kind is SpaceKind.P1_VECTOR:
            cell_dofs = vdofs
            dof_count = 2 * nv
        else:
            bub = 2 * nv + 2 * np.arange(nt)
            cell_dofs = np.column_stack([vdofs, bub, bub + 1])
            dof_count = 2 * nv + 2 * nt

    bverts = np.flatnonzero(mesh.boundary_vertex)
    if dirichlet == "none":
        dofs = np.empty(0, dtype=np.int64)
    elif dirichlet == "all":
        dofs = bverts if not kind.is_vector else np.sort(np.concatenate([2 * bverts, 2 * bverts + 1]))
    elif dirichlet == "tangential":
        if not kind.is_vector:
            raise ValueError("tangential constraints need a vector space")
        vertical, horizontal = _boundary_sides(mesh)
        dofs = np.sort(np.concatenate([2 * np.flatnonzero(horizontal), 2 * np.flatnonzero(vertical) + 1]))
    else:
        raise ValueError(f"unknown dirichlet selection {dirichlet!r}")

    cell_dofs = np.ascontiguousarray(cell_dofs, dtype=np.int64)
    dofs = np.asarray(dofs, dtype=np.int64)
    cell_dofs.setflags(write=False)
    dofs.setflags(write=False)
    return FeSpace(kind, mesh, int(dof_count), cell_dofs, dofs)


_P1_REF_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def eval_basis(kind: SpaceKind | str, bary) -> tuple[np.ndarray, np.ndarray]:
    """Scalar shape functions and their reference gradients at barycentric points.

    ``bary`` has shape ``(..., 3)``. Returns values ``(..., n_shape)`` and
    gradients with respect to the reference coordinates ``(xi, eta)``,
    shape ``(..., n_shape, 2)``, where ``lambda_1 = xi`` and
    ``lambda_2 = eta``. Vector spaces reuse the scalar functions per
    component; MINI appends the bubble ``27 * l0 * l1 * l2``.
    """
    kind = SpaceKind(kind)
    lam = np.asarray(bary, dtype=float)
    vals = lam.copy()
    grads = np.broadcast_to(_P1_REF_GRAD, lam.shape[:-1] + (3, 2)).copy()
    if kind is SpaceKind.MINI_VECTOR:
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        bubble = 27.0 * l0 * l1 * l2
        d_l = np.stack([l1 * l2, l0 * l2, l0 * l1], axis=-1)  # d bubble / d lambda_k / 27
        gb = 27.0 * (d_l @ _P1_REF_GRAD)
        vals = np.concatenate([vals, bubble[..., None]], axis=-1)
        grads = np.concatenate([grads, gb[..., None, :]], axis=-2)
    return vals, grads


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sum 1/2
    degree: int


def _orbit_s3():
    return np.array([[1 / 3, 1 / 3, 1 / 3]])


def _orbit_s21(a):
    b = 1.0 - 2.0 * a
    return np.array([[b, a, a], [a, b, a], [a, a, b]])


def _orbit_s111(a, b):
    c = 1.0 - a - b
    return np.array([[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]])


def _rule(orbits, degree):
    pts, wts = [], []
    for pts_orbit, w in orbits:
        pts.append(pts_orbit)
        wts.append(np.full(len(pts_orbit), w))
    return QuadratureRule(np.concatenate(pts), np.concatenate(wts), degree)


# symmetric rules with positive weights (weights already scaled to area 1/2)
_RULES = {
    1: _rule([(_orbit_s3(), 0.5)], 1),
    2: _rule([(_orbit_s21(1 / 6), 1 / 6)], 2),
    4: _rule(
        [
            (_orbit_s21(0.44594849091596488632), 0.11169079483900573285),
            (_orbit_s21(0.09157621350977074346), 0.054975871827660933819),
        ],
        4,
    ),
    5: _rule(
        [
            (_orbit_s3(), 0.1125),
            (_orbit_s21(0.47014206410511508977), 0.066197076394253090369),
            (_orbit_s21(0.10128650732345633880), 0.062969590272413576298),
        ],
        5,
    ),
    6: _rule(
        [
            (_orbit_s21(0.24928674517091042129), 0.058393137863189683013),
            (_orbit_s21(0.06308901449150222834), 0.02542245318510340846),
            (_orbit_s111(0.31035245103378440542, 0.053145049844816947353), 0.041425537809186787597),
        ],
        6,
    ),
}


def make_quadrature(min_degree: int) -> QuadratureRule:
    """Cheapest tabulated rule exact for polynomials of degree ``min_degree``."""
    if not 1 <= min_degree <= 6:
        raise ValueError(f"quadrature degree must be in 1..6, got {min_degree}")
    for deg in sorted(_RULES):
        if deg >= min_degree:
            return _RULES[deg]
    raise AssertionError("unreachable")
