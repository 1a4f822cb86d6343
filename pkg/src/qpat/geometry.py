"""Discretization of the square domain [-1, 1]^2 and the unit circle of directions.

The spatial mesh is a structured triangulation: the square is cut into
``n_subdiv x n_subdiv`` cells, each split along its (-1,-1)->(1,1) diagonal.
Vertices are numbered row by row (``index = j * (n_subdiv + 1) + i``), so a
nodal field reshapes to an image with ``field.reshape(n + 1, n + 1)`` where
rows run along y.

Ray-geometric helpers (`exit_length`, `ell_plus`, `ell_inf`) measure the
distance to the boundary travelling *against* a direction, which is the
convention used by the collision-free transport solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DiscretizationError, DomainError

DOMAIN_LO = -1.0
DOMAIN_HI = 1.0
DOMAIN_AREA = 4.0
DIAMETER = 2.0 * np.sqrt(2.0)
CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])

SIDES = ("bottom", "right", "top", "left")
# outward unit normal per side
SIDE_NORMALS = {
    "bottom": np.array([0.0, -1.0]),
    "right": np.array([1.0, 0.0]),
    "top": np.array([0.0, 1.0]),
    "left": np.array([-1.0, 0.0]),
}


@dataclass(frozen=True, eq=False)
class SpatialMesh:
    """Uniform diagonal triangulation of the square ``[-1, 1]^2``.

    Attributes
    ----------
    n_subdiv : int
        Number of cells per side.
    vertices : ndarray, shape (n_nodes, 2)
    triangles : ndarray, shape (n_elements, 3)
        Counter-clockwise vertex indices.
    boundary_edges : ndarray, shape (n_boundary, 2)
        Vertex pairs, traversed counter-clockwise around the square.
    boundary_normals : ndarray, shape (n_boundary, 2)
        Outward unit normal of every boundary edge.
    boundary_sides : ndarray of str
        Which side of the square each boundary edge lies on.
    h : float
        Mesh size, the longest edge length (the cell diagonal).
    """

    n_subdiv: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    boundary_sides: np.ndarray
    h: float

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @property
    def grid_spacing(self) -> float:
        return (DOMAIN_HI - DOMAIN_LO) / self.n_subdiv

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.n_subdiv + 1, self.n_subdiv + 1)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three P1 hat functions on each element, shape (E, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / two_area[:, None, None]

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        e = self.vertices[self.boundary_edges]
        return np.linalg.norm(e[:, 1] - e[:, 0], axis=1)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Row sums of the P1 mass matrix (area / 3 per incident element)."""
        return np.bincount(
            self.triangles.ravel(),
            weights=np.repeat(self.areas / 3.0, 3),
            minlength=self.n_nodes,
        )

    @cached_property
    def element_to_node(self) -> sp.csr_matrix:
        """Area-weighted averaging of element values onto vertices."""
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(self.n_elements), 3)
        w = np.repeat(self.areas, 3)
        mat = sp.csr_matrix((w, (rows, cols)), shape=(self.n_nodes, self.n_elements))
        norm = np.asarray(mat.sum(axis=1)).ravel()
        return sp.diags(1.0 / norm) @ mat

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Scatter matrix from (element, local vertex) slots to global nodes."""
        rows = self.triangles.ravel()
        cols = np.arange(3 * self.n_elements)
        return sp.csr_matrix(
            (np.ones(cols.size), (rows, cols)), shape=(self.n_nodes, 3 * self.n_elements)
        )

    def element_mask(self, lo, hi) -> np.ndarray:
        """Elements whose centroid lies in the axis-aligned box ``[lo, hi]``."""
        c = self.centroids
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        return np.all((c >= lo) & (c <= hi), axis=1)

    def node_mask(self, lo, hi) -> np.ndarray:
        v = self.vertices
        return np.all((v >= np.asarray(lo, float)) & (v <= np.asarray(hi, float)), axis=1)

    def as_grid(self, nodal) -> np.ndarray:
        """Reshape a nodal field to an image with rows along y."""
        return np.asarray(nodal).reshape(self.grid_shape)

    def locate(self, points):
        """Find the containing element and barycentric coordinates.

        Returns ``(element, bary, inside)``; points outside the closed square
        get element 0 and ``inside == False``.
        """
        pts = np.atleast_2d(np.asarray(points, float))
        n = self.n_subdiv
        s = (pts - DOMAIN_LO) / self.grid_spacing
        inside = np.all((s >= -1e-12) & (s <= n + 1e-12), axis=1)
        cell = np.clip(np.floor(s), 0, n - 1).astype(np.int64)
        u = np.clip(s[:, 0] - cell[:, 0], 0.0, 1.0)
        v = np.clip(s[:, 1] - cell[:, 1], 0.0, 1.0)
        lower = u >= v
        elem = 2 * (cell[:, 1] * n + cell[:, 0]) + np.where(lower, 0, 1)
        bary = np.where(
            lower[:, None],
            np.stack([1.0 - u, u - v, v], axis=1),
            np.stack([1.0 - v, u, v - u], axis=1),
        )
        elem = np.where(inside, elem, 0)
        return elem, bary, inside

    def interpolate(self, nodal, points) -> np.ndarray:
        """Evaluate the P1 interpolant of ``nodal`` at ``points`` (zero outside).

        ``nodal`` may carry trailing axes, e.g. shape (n_nodes, n_theta).
        """
        nodal = np.asarray(nodal)
        elem, bary, inside = self.locate(points)
        vals = np.einsum("pa,pa...->p...", bary, nodal[self.triangles[elem]])
        vals[~inside] = 0.0
        return vals

    def element_values_at(self, values, points) -> np.ndarray:
        """Evaluate a piecewise-constant element field at ``points``."""
        elem, _, inside = self.locate(points)
        out = np.asarray(values)[elem].astype(float)
        out[~inside] = 0.0
        return out

    def bilinear_weights(self, points):
        """Bilinear interpolation stencil on the vertex grid.

        Returns ``(nodes, weights, inside)`` with shapes (P, 4), (P, 4), (P,).
        """
        pts = np.atleast_2d(np.asarray(points, float))
        n = self.n_subdiv
        s = (pts - DOMAIN_LO) / self.grid_spacing
        inside = np.all((s >= 0.0) & (s <= n), axis=1)
        cell = np.clip(np.floor(s), 0, n - 1).astype(np.int64)
        u = s[:, 0] - cell[:, 0]
        v = s[:, 1] - cell[:, 1]
        base = cell[:, 1] * (n + 1) + cell[:, 0]
        nodes = np.stack([base, base + 1, base + n + 1, base + n + 2], axis=1)
        weights = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=1)
        return nodes, weights, inside

    def bilinear(self, nodal, points) -> np.ndarray:
        nodes, weights, inside = self.bilinear_weights(points)
        vals = np.sum(np.asarray(nodal)[nodes] * weights, axis=1)
        return np.where(inside, vals, 0.0)


@dataclass(frozen=True, eq=False)
class AngularGrid:
    """Uniform grid of directions on the unit circle with trapezoidal weights."""

    n_theta: int
    phi: np.ndarray = field(repr=False)
    directions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.n_theta

    def index_of(self, direction) -> int:
        """Index of the grid direction closest to ``direction``."""
        d = np.asarray(direction, float)
        return int(np.argmax(self.directions @ d))


def build_uniform_mesh(n_subdiv: int) -> SpatialMesh:
    """Structured triangulation of ``[-1, 1]^2`` with ``n_subdiv`` cells per side."""
    n = int(n_subdiv)
    if n < 1 or n != n_subdiv:
        raise DiscretizationError(f"n_subdiv must be a positive integer, got {n_subdiv!r}")
    coords = np.linspace(DOMAIN_LO, DOMAIN_HI, n + 1)
    xx, yy = np.meshgrid(coords, coords)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(n)
    row = lambda jj: jj * (n + 1)  # noqa: E731
    bottom = np.column_stack([row(0) + k, row(0) + k + 1])
    right = np.column_stack([row(k) + n, row(k + 1) + n])
    top = np.column_stack([row(n) + n - k, row(n) + n - k - 1])
    left = np.column_stack([row(n - k), row(n - k - 1)])
    edges = np.vstack([bottom, right, top, left])
    sides = np.repeat(np.array(SIDES), n)
    normals = np.array([SIDE_NORMALS[s] for s in sides])

    h = float(np.hypot(2.0 / n, 2.0 / n))
    return SpatialMesh(n, vertices, triangles, edges, normals, sides, h)


def build_angular_grid(n_theta: int) -> AngularGrid:
    """Directions ``(cos phi_k, sin phi_k)`` with ``phi_k = 2 pi k / n_theta``."""
    if int(n_theta) != n_theta or n_theta < 4:
        raise DiscretizationError(f"n_theta must be an integer >= 4, got {n_theta!r}")
    n_theta = int(n_theta)
    phi = 2.0 * np.pi * np.arange(n_theta) / n_theta
    directions = np.column_stack([np.cos(phi), np.sin(phi)])
    weights = np.full(n_theta, 2.0 * np.pi / n_theta)
    return AngularGrid(n_theta, phi, directions, weights)


def _check_inside(x, tol=1e-12):
    x = np.asarray(x, float)
    if np.any(np.abs(x) > DOMAIN_HI + tol):
        raise DomainError("point outside the closed square [-1, 1]^2")
    return x


def exit_length(x, theta) -> np.ndarray:
    """Distance from ``x`` to the boundary travelling along ``-theta``.

    Broadcasts over leading axes of ``x`` (..., 2) and ``theta`` (..., 2).
    """
    x = _check_inside(x)
    theta = np.asarray(theta, float)
    x, theta = np.broadcast_arrays(x, theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_pos = (x + 1.0) / theta
        s_neg = (x - 1.0) / theta
    s = np.where(theta > 0, s_pos, np.where(theta < 0, s_neg, np.inf))
    return np.clip(np.min(s, axis=-1), 0.0, None)


def ell_plus(x, angular: AngularGrid | None = None) -> np.ndarray:
    """Angular average of `exit_length` using the grid's trapezoidal rule.

    Defaults to a 64-direction grid.
    """
    if angular is None:
        angular = build_angular_grid(64)
    x = np.asarray(x, float)
    lengths = exit_length(x[..., None, :], angular.directions)
    return lengths @ angular.weights / (2.0 * np.pi)


def ell_inf(x, angular: AngularGrid | None = None) -> np.ndarray:
    """Maximum of `exit_length` over all directions.

    The maximum over the circle is attained towards a corner of the square,
    so the corner directions are sampled in addition to the grid directions.
    """
    x = _check_inside(x)
    to_corner = x[..., None, :] - CORNERS
    dist = np.linalg.norm(to_corner, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corner_dirs = to_corner / dist[..., None]
    corner_dirs = np.nan_to_num(corner_dirs)
    best = np.max(exit_length(x[..., None, :], corner_dirs), axis=-1)
    if angular is not None:
        best = np.maximum(best, np.max(exit_length(x[..., None, :], angular.directions), axis=-1))
    return best


def write_mesh_csv(mesh: SpatialMesh, stem) -> tuple[Path, Path]:
    """Write ``<stem>_vertices.csv`` and ``<stem>_triangles.csv``."""
    stem = Path(stem)
    vpath = stem.with_name(stem.name + "_vertices.csv")
    tpath = stem.with_name(stem.name + "_triangles.csv")
    with open(vpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "x", "y"])
        for k, (x, y) in enumerate(mesh.vertices):
            w.writerow([k, repr(float(x)), repr(float(y))])
    with open(tpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle", "v0", "v1", "v2"])
        for k, t in enumerate(mesh.triangles):
            w.writerow([k, *map(int, t)])
    return vpath, tpath


def read_mesh_csv(stem) -> tuple[np.ndarray, np.ndarray]:
    stem = Path(stem)
    v = np.loadtxt(stem.with_name(stem.name + "_vertices.csv"), delimiter=",", skiprows=1)
    t = np.loadtxt(stem.with_name(stem.name + "_triangles.csv"), delimiter=",", skiprows=1, dtype=np.int64)
    return np.atleast_2d(v)[:, 1:], np.atleast_2d(t)[:, 1:]
