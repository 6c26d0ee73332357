"""Structured right-triangular meshes of axis-aligned rectangles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

_BOUNDARY_TOL = 1e-14
_BARY_TOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Triangulation of ``(0, a) x (0, b)``.

    Vertex ``(i, j)`` of the grid has index ``j * (nx + 1) + i``. Every grid
    cell is cut along its lower-left to upper-right diagonal into a lower
    triangle (index ``2 * cell``) and an upper triangle (``2 * cell + 1``),
    both counterclockwise.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3)
    boundary_vertex: np.ndarray  # (nv,) bool
    nx: int
    ny: int
    a: float
    b: float

    @property
    def h(self) -> float:
        return max(self.a / self.nx, self.b / self.ny)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def vertex_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_rect_mesh(nx: int, ny: int, a: float = 1.0, b: float = 1.0) -> Mesh:
    """Build the ``2 * nx * ny`` triangle mesh of the rectangle ``(0, a) x (0, b)``."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive integers, got nx={nx}, ny={ny}")
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"rectangle extents must be positive, got a={a}, b={b}")
    nx, ny = int(nx), int(ny)
    a, b = float(a), float(b)

    # i / nx * a keeps grid lines exact at dyadic positions such as 1/4
    xs = np.arange(nx + 1) / nx * a
    ys = np.arange(ny + 1) / ny * b
    xs[-1], ys[-1] = a, b
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    x, y = vertices[:, 0], vertices[:, 1]
    boundary = (
        (np.abs(x) <= _BOUNDARY_TOL)
        | (np.abs(x - a) <= _BOUNDARY_TOL)
        | (np.abs(y) <= _BOUNDARY_TOL)
        | (np.abs(y - b) <= _BOUNDARY_TOL)
    )
    for arr in (vertices, triangles, boundary):
        arr.setflags(write=False)
    return Mesh(vertices, triangles, boundary, nx, ny, a, b)


def _cell_index(s: float, n: int) -> int:
    # points on a grid line belong to the lower-numbered cell
    return min(max(math.ceil(s) - 1, 0), n - 1)


def barycentric(mesh: Mesh, tri: int, x) -> np.ndarray:
    """Barycentric coordinates of ``x`` with respect to triangle ``tri``."""
    p = mesh.vertices[mesh.triangles[tri]]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    l12 = np.linalg.solve(T, np.asarray(x, dtype=float) - p[0])
    return np.array([1.0 - l12[0] - l12[1], l12[0], l12[1]])


def locate_point(mesh: Mesh, x) -> tuple[int, np.ndarray]:
    """Return ``(triangle index, barycentric coordinates)`` for a point of the closed rectangle.

    Points shared by several triangles go to the one with the lowest index.
    """
    px, py = float(x[0]), float(x[1])
    tol = _BOUNDARY_TOL * max(mesh.a, mesh.b)
    if not (-tol <= px <= mesh.a + tol and -tol <= py <= mesh.b + tol):
        raise ValueError(f"point ({px}, {py}) lies outside the domain")
    hx, hy = mesh.a / mesh.nx, mesh.b / mesh.ny
    sx, sy = px / hx, py / hy
    i, j = _cell_index(sx, mesh.nx), _cell_index(sy, mesh.ny)
    cell = j * mesh.nx + i
    # lower triangle holds the diagonal itself
    tri = 2 * cell if (sy - j) <= (sx - i) else 2 * cell + 1

    lam = barycentric(mesh, tri, (px, py))
    if lam.min() < -_BARY_TOL:
        # grid arithmetic disagreed with the geometry; fall back to the other half
        other = tri ^ 1
        lam_other = barycentric(mesh, other, (px, py))
        if lam_other.min() < lam.min():
            tri, lam = other, lam_other
        if lam.min() < -_BARY_TOL:
            raise ValueError(f"could not locate point ({px}, {py})")
    lam = np.clip(lam, 0.0, 1.0)
    lam[np.abs(lam) < _BARY_TOL] = 0.0
    lam[np.abs(lam - 1.0) < _BARY_TOL] = 1.0
    lam /= lam.sum()
    return tri, lam


def edge_set(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edges as sorted vertex pairs, plus a flag marking boundary edges."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts == 1


def write_mesh(mesh: Mesh, stream: TextIO) -> None:
    """Dump ``v x y`` lines followed by ``t i j k`` lines (0-based)."""
    for x, y in mesh.vertices:
        stream.write(f"v {float(x)!r} {float(y)!r}\n")
    for i, j, k in mesh.triangles:
        stream.write(f"t {i} {j} {k}\n")
