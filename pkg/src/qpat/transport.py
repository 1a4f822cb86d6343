"""Stationary radiative transfer on the square with streamline-diffusion FEM.

Space is discretized with P1 hat functions on a `SpatialMesh`, angle by
collocation at the `AngularGrid` nodes (piecewise-affine periodic hats whose
angular mass matrix is lumped by the trapezoidal rule). For every direction
``theta_k`` the test functions are ``psi_j + D theta_k . grad psi_j``. The
unknown coefficient vector is stored node-major, ``c[node * n_theta + k]``.

The coupled system is solved by GMRES on the direction-block preconditioned
operator, with one sparse LU factorization per direction. The collision-free
inverse and a Neumann series around it are provided as an independent
ray-based solver for cross-checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ParameterError, SolverError, TruncationError
from .geometry import AngularGrid, SpatialMesh, exit_length

MU_A_BAR = 4.0
MU_S_BAR = 10.0
SD_FACTOR = 3.0 / 100.0
SD_THRESHOLD = 1.0
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class OpticalCoefficients:
    """Piecewise-constant absorption and scattering on mesh elements."""

    mu_a: np.ndarray
    mu_s: np.ndarray
    mu_a_bar: float = MU_A_BAR
    mu_s_bar: float = MU_S_BAR

    def __post_init__(self):
        mu_a = np.asarray(self.mu_a, dtype=float)
        mu_s = np.asarray(self.mu_s, dtype=float)
        if mu_a.shape != mu_s.shape or mu_a.ndim != 1:
            raise AssemblyError("mu_a and mu_s must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(mu_a)) and np.all(np.isfinite(mu_s))):
            raise ParameterError("optical coefficients must be finite")
        if np.any(mu_a < 0) or np.any(mu_a > self.mu_a_bar):
            raise ParameterError(f"mu_a must lie in [0, {self.mu_a_bar}]")
        if np.any(mu_s < 0) or np.any(mu_s > self.mu_s_bar):
            raise ParameterError(f"mu_s must lie in [0, {self.mu_s_bar}]")
        object.__setattr__(self, "mu_a", mu_a)
        object.__setattr__(self, "mu_s", mu_s)

    @classmethod
    def constant(cls, mesh: SpatialMesh, mu_a: float, mu_s: float, **bounds):
        e = mesh.n_elements
        return cls(np.full(e, float(mu_a)), np.full(e, float(mu_s)), **bounds)

    @property
    def total(self) -> np.ndarray:
        return self.mu_a + self.mu_s

    @property
    def n_elements(self) -> int:
        return self.mu_a.size

    def perturbed(self, h_a=None, h_s=None, eps: float = 1.0) -> "OpticalCoefficients":
        mu_a = self.mu_a if h_a is None else self.mu_a + eps * np.asarray(h_a, float)
        mu_s = self.mu_s if h_s is None else self.mu_s + eps * np.asarray(h_s, float)
        return OpticalCoefficients(mu_a, mu_s, self.mu_a_bar, self.mu_s_bar)


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    """Henyey-Greenstein kernel sampled on an angular grid.

    ``matrix[j, k]`` approximates ``k(theta_j, theta_k)``; rows are scaled so
    that ``matrix @ weights == 1``.
    """

    g: float
    matrix: np.ndarray
    raw_matrix: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    scale: float = 1.0

    @property
    def raw_row_sums(self) -> np.ndarray:
        return self.raw_matrix @ self.weights

    def apply(self, nodal: np.ndarray) -> np.ndarray:
        """``(K Phi)(x, theta_k) = sum_l K[k, l] w_l Phi(x, theta_l)`` for (n, N) arrays."""
        return nodal @ (self.matrix * self.weights[None, :]).T

    def apply_transpose(self, nodal: np.ndarray) -> np.ndarray:
        return nodal @ (self.matrix * self.weights[None, :])


def henyey_greenstein(g: float, angular: AngularGrid) -> ScatteringKernel:
    """Two-dimensional Henyey-Greenstein kernel with anisotropy ``g`` in (0, 1)."""
    g = float(g)
    if not 0.0 < g < 1.0:
        raise ParameterError(f"anisotropy factor must lie in (0, 1), got {g}")
    cosang = np.clip(angular.directions @ angular.directions.T, -1.0, 1.0)
    raw = (1.0 - g * g) / (2.0 * np.pi * (1.0 + g * g - 2.0 * g * cosang))
    # the grid is uniform, so the matrix is circulant and all row sums agree;
    # one common factor keeps it exactly symmetric
    scale = 1.0 / float(np.mean(raw @ angular.weights))
    matrix = raw * scale
    matrix = 0.5 * (matrix + matrix.T)
    return ScatteringKernel(g, matrix, raw, angular.weights.copy(), scale)


@dataclass(frozen=True, eq=False)
class BoundarySource:
    """Inflow radiance ``f`` per boundary edge and direction, zero off the inflow set."""

    values: np.ndarray

    @classmethod
    def zeros(cls, mesh: SpatialMesh, angular: AngularGrid):
        return cls(np.zeros((len(mesh.boundary_edges), angular.n_theta)))

    @classmethod
    def from_values(cls, mesh: SpatialMesh, angular: AngularGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(mesh.boundary_edges), angular.n_theta):
            raise AssemblyError("boundary source must have shape (n_boundary_edges, n_theta)")
        outflow = (mesh.boundary_normals @ angular.directions.T) >= 0.0
        if np.any(values[outflow] != 0.0):
            raise ParameterError("boundary source must vanish where <nu, theta> >= 0")
        return cls(values)

    def __mul__(self, factor):
        return BoundarySource(self.values * float(factor))

    __rmul__ = __mul__

    def __add__(self, other):
        return BoundarySource(self.values + other.values)


@dataclass(frozen=True, eq=False)
class VolumeSource:
    """Piecewise-constant internal source ``q(element, direction)``."""

    values: np.ndarray

    @classmethod
    def zeros(cls, mesh: SpatialMesh, angular: AngularGrid):
        return cls(np.zeros((mesh.n_elements, angular.n_theta)))

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("volume source must be finite")


@dataclass(frozen=True, eq=False)
class PhotonDensity:
    """Coefficients of a discrete photon density, node-major ``c[node * N + k]``."""

    coefficients: np.ndarray
    n_nodes: int
    n_theta: int

    @classmethod
    def from_array(cls, nodal):
        nodal = np.asarray(nodal, dtype=float)
        return cls(nodal.ravel().copy(), nodal.shape[0], nodal.shape[1])

    def as_array(self) -> np.ndarray:
        return self.coefficients.reshape(self.n_nodes, self.n_theta)

    def fluence(self, angular: AngularGrid) -> np.ndarray:
        return fluence(self, angular)


def fluence(density, angular: AngularGrid) -> np.ndarray:
    """Angular integral ``phi(x) = sum_k w_k Phi(x, theta_k)``."""
    arr = density.as_array() if isinstance(density, PhotonDensity) else np.asarray(density)
    return arr @ angular.weights


def streamline_diffusion_rule(mesh: SpatialMesh, coeffs: OpticalCoefficients) -> np.ndarray:
    """Per-element stabilization: ``3h/100`` where ``mu_a + mu_s < 1``, zero elsewhere."""
    return np.where(coeffs.total < SD_THRESHOLD, SD_FACTOR * mesh.h, 0.0)


def no_stabilization(mesh: SpatialMesh, coeffs: OpticalCoefficients) -> np.ndarray:
    return np.zeros(mesh.n_elements)


class RTESystem:
    """Assembled streamline-diffusion system for one set of optical coefficients.

    Direction blocks ``A_k`` (transport, attenuation, inflow boundary) are
    stored as sparse matrices and factorized lazily on first solve. The
    scattering coupling is applied matrix-free.
    """

    def __init__(self, mesh, angular, coeffs, kernel, stabilization):
        self.mesh = mesh
        self.angular = angular
        self.coeffs = coeffs
        self.kernel = kernel
        self.stabilization = np.asarray(stabilization, dtype=float)
        self.n_nodes = mesh.n_nodes
        self.n_theta = angular.n_theta
        # streamline derivatives of the hat functions, (E, 3, N)
        self._b = np.einsum("ead,kd->eak", mesh.gradients, angular.directions)
        self._tri = mesh.triangles
        self._area = mesh.areas
        self._blocks = self._assemble_blocks()
        self._lu = None
        self._lu_t = None
        self.has_scattering = bool(np.any(coeffs.mu_s != 0.0))
        self.last_info: dict = {}

    @property
    def size(self) -> int:
        return self.n_nodes * self.n_theta

    @property
    def blocks(self):
        return self._blocks

    # assembly

    def _assemble_blocks(self):
        mesh, n, N = self.mesh, self.n_nodes, self.n_theta
        A = self._area[:, None, None, None]
        D = self.stabilization[:, None, None, None]
        sig = self.coeffs.total[:, None, None, None]
        b = self._b
        bi = b[:, :, None, :]
        bj = b[:, None, :, :]
        eye = np.eye(3)[None, :, :, None]
        local = (
            A / 3.0 * bj
            + D * A * bi * bj
            + sig * A / 12.0 * (1.0 + eye)
            + sig * D * A / 3.0 * bi
        )
        rows = np.repeat(self._tri, 3, axis=1).ravel()
        cols = np.tile(self._tri, (1, 3)).ravel()

        edges = mesh.boundary_edges
        L = mesh.boundary_lengths
        cos_in = mesh.boundary_normals @ self.angular.directions.T
        inflow = np.clip(-cos_in, 0.0, None)  # |<theta, nu>| on the inflow set
        brow = np.repeat(edges, 2, axis=1).ravel()
        bcol = np.tile(edges, (1, 2)).ravel()
        bpat = np.array([2.0, 1.0, 1.0, 2.0]) / 6.0

        blocks = []
        for k in range(N):
            bvals = (inflow[:, k] * L)[:, None] * bpat[None, :]
            data = np.concatenate([local[..., k].ravel(), bvals.ravel()])
            r = np.concatenate([rows, brow])
            c = np.concatenate([cols, bcol])
            blocks.append(sp.csc_matrix((data, (r, c)), shape=(n, n)))
        return blocks

    def _gather(self, X):
        return X[self._tri]  # (E, 3, N)

    def _scatter(self, local):
        return (self.mesh.incidence @ local.reshape(-1, local.shape[-1]))

    def weighted_apply(self, alpha, X) -> np.ndarray:
        """``[Q_k(alpha) X_k]_k``: mass plus streamline term with element weight ``alpha``."""
        alpha = np.asarray(alpha, float)
        Xg = self._gather(X)
        s = Xg.sum(axis=1, keepdims=True)
        am = (alpha * self._area / 12.0)[:, None, None]
        ad = (alpha * self.stabilization * self._area / 3.0)[:, None, None]
        local = am * (s + Xg) + ad * self._b * s
        return self._scatter(local)

    def weighted_apply_transpose(self, alpha, Z) -> np.ndarray:
        alpha = np.asarray(alpha, float)
        Zg = self._gather(Z)
        s = Zg.sum(axis=1, keepdims=True)
        am = (alpha * self._area / 12.0)[:, None, None]
        ad = (alpha * self.stabilization * self._area / 3.0)[:, None, None]
        zb = np.sum(Zg * self._b, axis=1, keepdims=True)
        local = am * (s + Zg) + ad * np.broadcast_to(zb, Zg.shape)
        return self._scatter(local)

    def weighted_gradient(self, Z, X) -> np.ndarray:
        """Element gradient of ``<Z, Q(alpha) X>`` with respect to ``alpha``."""
        Zg = self._gather(Z)
        Xg = self._gather(X)
        sz = Zg.sum(axis=1)
        sx = Xg.sum(axis=1)
        mass = self._area / 12.0 * np.sum(sz * sx + np.sum(Zg * Xg, axis=1), axis=1)
        zb = np.sum(Zg * self._b, axis=1)
        sd = self.stabilization * self._area / 3.0 * np.sum(zb * sx, axis=1)
        return mass + sd

    def _scatter_op(self, X):
        if not self.has_scattering:
            return np.zeros_like(X)
        return -self.weighted_apply(self.coeffs.mu_s, self.kernel.apply(X))

    def _scatter_op_t(self, Z):
        if not self.has_scattering:
            return np.zeros_like(Z)
        return -self.kernel.apply_transpose(self.weighted_apply_transpose(self.coeffs.mu_s, Z))

    def matvec(self, c) -> np.ndarray:
        X = np.asarray(c, float).reshape(self.n_nodes, self.n_theta)
        out = np.empty_like(X)
        for k, blk in enumerate(self._blocks):
            out[:, k] = blk @ X[:, k]
        out += self._scatter_op(X)
        return out.ravel()

    def rmatvec(self, z) -> np.ndarray:
        Z = np.asarray(z, float).reshape(self.n_nodes, self.n_theta)
        out = np.empty_like(Z)
        for k, blk in enumerate(self._blocks):
            out[:, k] = blk.T @ Z[:, k]
        out += self._scatter_op_t(Z)
        return out.ravel()

    def rhs(self, q: VolumeSource | None = None, f: BoundarySource | None = None) -> np.ndarray:
        """Load vector for the volume and inflow sources."""
        b = np.zeros((self.n_nodes, self.n_theta))
        if q is not None:
            qv = np.asarray(q.values, float)
            if qv.shape != (self.mesh.n_elements, self.n_theta):
                raise AssemblyError("volume source shape does not match the system")
            A = self._area[:, None, None]
            D = self.stabilization[:, None, None]
            local = qv[:, None, :] * (A / 3.0 + D * A * self._b)
            b += self._scatter(local)
        if f is not None:
            fv = np.asarray(f.values, float)
            if fv.shape != (len(self.mesh.boundary_edges), self.n_theta):
                raise AssemblyError("boundary source shape does not match the system")
            cos_in = self.mesh.boundary_normals @ self.angular.directions.T
            w = np.clip(-cos_in, 0.0, None) * fv * (self.mesh.boundary_lengths / 2.0)[:, None]
            for a in range(2):
                np.add.at(b, self.mesh.boundary_edges[:, a], w)
        return b.ravel()

    # solves

    def factorize(self):
        if self._lu is None:
            self._lu = [spla.splu(blk) for blk in self._blocks]
        return self._lu

    def _block_solve(self, R, trans="N"):
        lus = self.factorize()
        out = np.empty_like(R)
        for k, lu in enumerate(lus):
            out[:, k] = lu.solve(R[:, k], trans=trans)
        return out

    def _solve(self, b, transpose=False):
        shape = (self.n_nodes, self.n_theta)
        b = np.asarray(b, float).ravel()
        if b.size != self.size:
            raise AssemblyError(f"right-hand side has length {b.size}, expected {self.size}")
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            self.last_info = {"iterations": 0, "residual": 0.0}
            return np.zeros_like(b)
        trans = "T" if transpose else "N"
        op = self._scatter_op_t if transpose else self._scatter_op
        B = b.reshape(shape)
        if transpose:
            rhs0 = B
        else:
            rhs0 = self._block_solve(B)
        n_iter = 0
        if not self.has_scattering:
            x = self._block_solve(B, trans=trans).ravel()
        else:
            count = [0]
            if transpose:
                # right preconditioning: (A_blk^T + S^T) A_blk^-T y = b
                def mv(y):
                    count[0] += 1
                    Y = y.reshape(shape)
                    X = self._block_solve(Y, trans="T")
                    return (Y + op(X)).ravel()
            else:
                def mv(x):
                    count[0] += 1
                    X = x.reshape(shape)
                    return (X + self._block_solve(op(X))).ravel()
            lin = spla.LinearOperator((self.size, self.size), matvec=mv, dtype=float)
            y, _ = spla.gmres(lin, rhs0.ravel(), rtol=1e-13, atol=0.0, restart=60, maxiter=40)
            n_iter = count[0]
            x = self._block_solve(y.reshape(shape), trans="T").ravel() if transpose else y
        mv_true = self.rmatvec if transpose else self.matvec
        res = np.linalg.norm(mv_true(x) - b) / bnorm
        self.last_info = {"iterations": n_iter, "residual": res}
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            raise SolverError(f"RTE solve reached relative residual {res:.3e}", residual=res)
        return x

    def solve_vector(self, b) -> np.ndarray:
        return self._solve(b, transpose=False)

    def solve_transpose(self, b) -> np.ndarray:
        return self._solve(b, transpose=True)

    def solve(self, q=None, f=None) -> PhotonDensity:
        c = self._solve(self.rhs(q, f))
        return PhotonDensity(c, self.n_nodes, self.n_theta)

    def system_derivative(self, X, h_a=None, h_s=None) -> np.ndarray:
        """Weak form of ``(h_a + h_s) X - h_s K X`` with the system's test functions."""
        E = self.mesh.n_elements
        h_a = np.zeros(E) if h_a is None else np.asarray(h_a, float)
        h_s = np.zeros(E) if h_s is None else np.asarray(h_s, float)
        out = self.weighted_apply(h_a + h_s, X)
        if np.any(h_s != 0.0):
            out -= self.weighted_apply(h_s, self.kernel.apply(X))
        return out


def assemble_rte_system(
    mesh: SpatialMesh,
    angular: AngularGrid,
    coeffs: OpticalCoefficients,
    kernel: ScatteringKernel,
    stabilization_rule: Callable = streamline_diffusion_rule,
) -> RTESystem:
    """Assemble the streamline-diffusion discretization of the RTE."""
    if coeffs.n_elements != mesh.n_elements:
        raise AssemblyError(
            f"coefficients have {coeffs.n_elements} elements, mesh has {mesh.n_elements}"
        )
    if kernel.matrix.shape != (angular.n_theta, angular.n_theta):
        raise AssemblyError("scattering kernel does not match the angular grid")
    stab = np.broadcast_to(np.asarray(stabilization_rule(mesh, coeffs), float), (mesh.n_elements,))
    return RTESystem(mesh, angular, coeffs, kernel, stab)


def solve_rte(system: RTESystem, q: VolumeSource | None = None, f: BoundarySource | None = None) -> PhotonDensity:
    """Solve ``M c = b`` for the given sources; raises `SolverError` on residual > 1e-10."""
    return system.solve(q, f)


# ray-based solvers


def apply_collision_free_inverse(mesh, angular, source, attenuation, weight=None, step=None):
    """Apply the collision-free inverse along backward rays.

    Computes ``int_0^l exp(-int_0^t mu(x - tau theta) dtau) s(x - t theta, theta) dt``
    at every mesh node and grid direction. ``source`` is a nodal (n, N) array
    interpolated linearly in space, optionally multiplied by the element field
    ``weight``. The optical depth is accumulated step by step with the
    element value at the step midpoint, and the exponential is integrated
    exactly over each step.
    """
    src = np.asarray(source, float)
    mu = np.broadcast_to(np.asarray(attenuation, float), (mesh.n_elements,))
    step = mesh.h / 2.0 if step is None else float(step)
    x = mesh.vertices
    out = np.zeros((mesh.n_nodes, angular.n_theta))
    for k, theta in enumerate(angular.directions):
        ell = exit_length(x, theta)
        m = max(1, int(np.ceil(ell.max() / step)))
        dt = ell / m
        tau = np.zeros(mesh.n_nodes)
        acc = np.zeros(mesh.n_nodes)
        for j in range(m):
            pts = x - ((j + 0.5) * dt)[:, None] * theta[None, :]
            elem, bary, _ = mesh.locate(pts)
            s = np.einsum("pa,pa->p", bary, src[mesh.triangles[elem], k])
            if weight is not None:
                s = s * np.asarray(weight)[elem]
            mj = mu[elem]
            md = mj * dt
            with np.errstate(invalid="ignore", divide="ignore"):
                factor = np.where(md > 1e-12, -np.expm1(-md) / np.where(mj > 0, mj, 1.0), dt * (1.0 - 0.5 * md))
            acc += s * np.exp(-tau) * factor
            tau += md
        out[:, k] = acc
    return out


@dataclass
class NeumannResult:
    """Partial sum of the scattering Neumann series and its term norms."""

    density: np.ndarray
    term_norms: list
    n_terms: int

    @property
    def ratios(self) -> np.ndarray:
        t = np.asarray(self.term_norms)
        return t[1:] / t[:-1] if t.size > 1 else np.array([])


def neumann_series_solve(mesh, angular, h_a, background, coeffs, kernel, tol=1e-8, max_terms=200):
    """Solve the linearized transport problem by the Neumann series.

    Sums ``sum_k (V0^-1 mu_s K)^k V0^-1 (h_a Phi)`` where ``V0^-1`` is the
    collision-free inverse with total attenuation ``mu_a + mu_s``.
    """
    Phi = background.as_array() if isinstance(background, PhotonDensity) else np.asarray(background)
    mu_t = coeffs.total
    term = apply_collision_free_inverse(mesh, angular, Phi, mu_t, weight=h_a)
    total = term.copy()
    norms = [float(np.linalg.norm(term))]
    if not np.any(coeffs.mu_s != 0.0) or norms[0] == 0.0:
        return NeumannResult(total, norms, 1)
    for n in range(1, max_terms):
        term = apply_collision_free_inverse(mesh, angular, kernel.apply(term), mu_t, weight=coeffs.mu_s)
        total += term
        norms.append(float(np.linalg.norm(term)))
        if norms[-1] <= tol * np.linalg.norm(total):
            return NeumannResult(total, norms, n + 1)
    raise TruncationError(
        f"Neumann series did not converge in {max_terms} terms", partial=total, n_terms=max_terms
    )


# coefficient files


def write_coefficients_csv(path, coeffs: OpticalCoefficients) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "mu_a", "mu_s"])
        for e, (a, s) in enumerate(zip(coeffs.mu_a, coeffs.mu_s)):
            w.writerow([e, repr(float(a)), repr(float(s))])
    return path


def read_coefficients_csv(path, mu_a_bar=MU_A_BAR, mu_s_bar=MU_S_BAR) -> OpticalCoefficients:
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    order = np.argsort(data[:, 0])
    return OpticalCoefficients(data[order, 1], data[order, 2], mu_a_bar, mu_s_bar)
