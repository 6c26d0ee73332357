"""Sparse assembly of the Biot bilinear forms and load vectors.

Matrices are returned as ``scipy.sparse.csr_matrix`` with sorted, unique
column indices. Element contributions are reduced in element order through
a COO -> CSR conversion, so identical inputs give bitwise-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, QuadratureRule, SpaceKind, eval_basis, make_quadrature
from .mesh import locate_point

DEFAULT_FORM_DEGREE = 4
DEFAULT_LOAD_DEGREE = 5


@dataclass(frozen=True)
class BiotParams:
    """Physical coefficients; ``c0`` is the storage coefficient ``1 / beta``."""

    mu: float
    lam: float
    alpha: float
    c0: float
    k: float
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.c0 >= 0:
            raise ValueError(f"c0 must be nonnegative, got {self.c0}")
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")


@dataclass(frozen=True)
class ElementData:
    """Shape functions of a space mapped to every triangle at the points of a rule."""

    quad: QuadratureRule
    values: np.ndarray  # (nq, nb)
    grads: np.ndarray  # (nt, nq, nb, 2) physical gradients
    jw: np.ndarray  # (nt, nq) |det J| * weight
    points: np.ndarray  # (nt, nq, 2) physical coordinates


def element_data(space: FeSpace, quad: QuadratureRule) -> ElementData:
    mesh = space.mesh
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv_t = np.empty_like(J)  # J^{-T}
    inv_t[:, 0, 0] = J[:, 1, 1] / det
    inv_t[:, 0, 1] = -J[:, 1, 0] / det
    inv_t[:, 1, 0] = -J[:, 0, 1] / det
    inv_t[:, 1, 1] = J[:, 0, 0] / det

    vals, ref_grads = eval_basis(space.kind, quad.points)
    grads = np.einsum("tij,qbj->tqbi", inv_t, ref_grads)
    jw = np.abs(det)[:, None] * quad.weights[None, :]
    points = np.einsum("qk,tkd->tqd", quad.points, p)
    return ElementData(quad, vals, grads, jw, points)


def _assemble(space_rows: FeSpace, space_cols: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    rows_dofs, cols_dofs = space_rows.cell_dofs, space_cols.cell_dofs
    nr, nc = rows_dofs.shape[1], cols_dofs.shape[1]
    I = np.repeat(rows_dofs, nc, axis=1).ravel()
    J = np.tile(cols_dofs, (1, nr)).ravel()
    mat = sp.coo_matrix((local.ravel(), (I, J)), shape=(space_rows.dof_count, space_cols.dof_count)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _vector_gradients(ed: ElementData) -> tuple[np.ndarray, np.ndarray]:
    """Voigt strain rows ``(nt, nq, 3, 2 nb)`` and divergence rows ``(nt, nq, 2 nb)``."""
    g = ed.grads
    nt, nq, nb, _ = g.shape
    strain = np.zeros((nt, nq, 3, 2 * nb))
    strain[:, :, 0, 0::2] = g[..., 0]
    strain[:, :, 1, 1::2] = g[..., 1]
    strain[:, :, 2, 0::2] = g[..., 1]
    strain[:, :, 2, 1::2] = g[..., 0]
    div = np.empty((nt, nq, 2 * nb))
    div[..., 0::2] = g[..., 0]
    div[..., 1::2] = g[..., 1]
    return strain, div


def assemble_elasticity(space: FeSpace, mu: float, lam: float, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Matrix of ``a(u, v) = 2 mu (eps(u), eps(v)) + lambda (div u, div v)``."""
    if not space.kind.is_vector:
        raise ValueError("elasticity needs a vector space")
    ed = element_data(space, quad or make_quadrature(DEFAULT_FORM_DEGREE))
    strain, _ = _vector_gradients(ed)
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    local = np.einsum("tq,tqai,ab,tqbj->tij", ed.jw, strain, D, strain, optimize=True)
    return _assemble(space, space, local)


def assemble_pressure_stiffness(space: FeSpace, k: float, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Matrix of ``b(p, q) = (K grad p, grad q)``."""
    ed = element_data(space, quad or make_quadrature(1))
    local = k * np.einsum("tq,tqai,tqbi->tab", ed.jw, ed.grads, ed.grads, optimize=True)
    return _assemble(space, space, local)


def assemble_coupling(pspace: FeSpace, uspace: FeSpace, alpha: float, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """``G[i, j] = alpha * (q_i, div v_j)``, shape (pressure dofs, displacement dofs)."""
    if pspace.mesh is not uspace.mesh:
        raise ValueError("spaces must share a mesh")
    quad = quad or make_quadrature(DEFAULT_FORM_DEGREE)
    ed_u = element_data(uspace, quad)
    p_vals, _ = eval_basis(pspace.kind, quad.points)
    _, div = _vector_gradients(ed_u)
    local = alpha * np.einsum("tq,qa,tqj->taj", ed_u.jw, p_vals, div, optimize=True)
    return _assemble(pspace, uspace, local)


def assemble_mass(space: FeSpace, coeff: float = 1.0, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix ``coeff * (p, q)``."""
    if space.kind is not SpaceKind.P1_SCALAR:
        raise ValueError("mass matrix is defined for the scalar P1 space")
    quad = quad or make_quadrature(2)
    ed = element_data(space, quad)
    local = coeff * np.einsum("tq,qa,qb->tab", ed.jw, ed.values, ed.values, optimize=True)
    return _assemble(space, space, local)


def assemble_lumped_mass(space: FeSpace, coeff: float = 1.0, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Row-sum lumped mass matrix, stored as a diagonal CSR matrix."""
    diag = np.asarray(assemble_mass(space, coeff, quad).sum(axis=1)).ravel()
    return sp.diags(diag, format="csr")


LoadFn = Callable[[np.ndarray, np.ndarray, float], object]


def assemble_volume_load(space: FeSpace, f: LoadFn | None, t: float = 0.0, quad: QuadratureRule | None = None) -> np.ndarray:
    """Load vector with entries ``(f, phi_i)``.

    ``f(x, y, t)`` is called on arrays of quadrature coordinates; vector
    spaces expect a pair ``(fx, fy)``.
    """
    out = np.zeros(space.dof_count)
    if f is None:
        return out
    ed = element_data(space, quad or make_quadrature(DEFAULT_LOAD_DEGREE))
    x, y = ed.points[..., 0], ed.points[..., 1]
    val = f(x, y, t)
    if space.kind.is_vector:
        fx, fy = (np.broadcast_to(c, x.shape) for c in val)
        nb = ed.values.shape[1]
        local = np.empty((x.shape[0], 2 * nb))
        local[:, 0::2] = np.einsum("tq,tq,qa->ta", ed.jw, fx, ed.values)
        local[:, 1::2] = np.einsum("tq,tq,qa->ta", ed.jw, fy, ed.values)
    else:
        local = np.einsum("tq,tq,qa->ta", ed.jw, np.broadcast_to(val, x.shape), ed.values)
    np.add.at(out, space.cell_dofs.ravel(), local.ravel())
    return out


def assemble_point_load(space: FeSpace, x0, amplitude: float) -> np.ndarray:
    """Dirac load ``amplitude * phi_i(x0)`` for a scalar P1 space."""
    if space.kind is not SpaceKind.P1_SCALAR:
        raise ValueError("point loads are defined for the scalar P1 space")
    tri, lam = locate_point(space.mesh, x0)
    out = np.zeros(space.dof_count)
    np.add.at(out, space.cell_dofs[tri], amplitude * lam)
    return out


def dirichlet_projector(n: int, dirichlet_dofs) -> sp.csr_matrix:
    keep = np.ones(n)
    keep[np.asarray(dirichlet_dofs, dtype=np.int64)] = 0.0
    return sp.diags(keep, format="csr")


def apply_dirichlet(matrix: sp.spmatrix, rhs: np.ndarray | None, dirichlet_dofs) -> tuple[sp.csr_matrix, np.ndarray | None]:
    """Eliminate homogeneous Dirichlet dofs symmetrically.

    Constrained rows and columns are zeroed, their diagonal set to one, and
    the matching right-hand-side entries set to zero.
    """
    n = matrix.shape[0]
    if matrix.shape[1] != n:
        raise ValueError("Dirichlet elimination needs a square matrix")
    dofs = np.asarray(dirichlet_dofs, dtype=np.int64)
    P = dirichlet_projector(n, dofs)
    unit = np.zeros(n)
    unit[dofs] = 1.0
    out = (P @ sp.csr_matrix(matrix) @ P + sp.diags(unit)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    if rhs is not None:
        rhs = np.array(rhs, dtype=float)
        rhs[dofs] = 0.0
    return out, rhs


def is_symmetric(matrix: sp.spmatrix, rtol: float = 1e-12) -> bool:
    m = sp.csr_matrix(matrix)
    scale = abs(m).max() if m.nnz else 0.0
    diff = m - m.T
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * scale


def write_matrix(matrix: sp.spmatrix, stream: TextIO) -> None:
    """Coordinate text dump, one ``i j value`` line per stored entry."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        stream.write(f"{i} {j} {float(v)!r}\n")
