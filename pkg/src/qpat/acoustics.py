"""Two-dimensional acoustic forward operator, its adjoint and time reversal.

The pressure generated by an initial heating ``h`` (constant sound speed 1)
is evaluated through circular integrals of ``h`` around each detector:

    U(y, t) = 1/(2 pi) int_0^t M(y, r) r / sqrt(t^2 - r^2) dr,   p = dU/dt,

where ``M(y, r)`` integrates ``h`` over the circle of radius ``r`` centred at
``y``. ``M`` is sampled on a radial grid and interpolated linearly, and the
weakly singular ``r``-integral is evaluated exactly for that interpolant.
The time derivative uses backward (BDF2) differences so that the discrete
operator is exactly causal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .geometry import DOMAIN_HI, SpatialMesh

TWO_PI = 2.0 * np.pi
HALF_DIAGONAL = np.sqrt(2.0)


def _wrap(a):
    return np.mod(a, TWO_PI)


@dataclass(frozen=True)
class MeasurementGeometry:
    """Detectors on an arc of the circle of radius ``radius`` and a uniform time grid.

    Detectors sit at the polar angles ``2 pi d / n_detectors``; those in the
    half-open arc ``[arc_lo, arc_hi)`` are active. ``arc_hi`` may exceed
    ``2 pi`` to describe arcs that wrap through angle zero, and
    ``arc_lo == arc_hi`` is the empty arc. Time samples are
    ``linspace(0, time_horizon, n_time)``.
    """

    radius: float = 1.5
    arc_lo: float = 0.0
    arc_hi: float = TWO_PI
    n_detectors: int = 256
    time_horizon: float = 3.0
    n_time: int = 512

    def __post_init__(self):
        if not self.radius > HALF_DIAGONAL:
            raise ConfigurationError(f"detector radius must exceed sqrt(2), got {self.radius}")
        if not 0.0 <= self.arc_lo < TWO_PI:
            raise ConfigurationError("arc_lo must lie in [0, 2 pi)")
        if not self.arc_lo <= self.arc_hi <= self.arc_lo + TWO_PI + 1e-12:
            raise ConfigurationError("arc must satisfy arc_lo <= arc_hi <= arc_lo + 2 pi")
        if not self.time_horizon > 0:
            raise ConfigurationError("time horizon must be positive")
        if int(self.n_detectors) != self.n_detectors or self.n_detectors < 1:
            raise ConfigurationError("n_detectors must be a positive integer")
        if int(self.n_time) != self.n_time or self.n_time < 3:
            raise ConfigurationError("n_time must be an integer >= 3")

    @property
    def arc_span(self) -> float:
        return min(self.arc_hi - self.arc_lo, TWO_PI)

    @property
    def is_full(self) -> bool:
        return self.arc_span >= TWO_PI - 1e-12

    @property
    def detector_angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_detectors) / self.n_detectors

    @property
    def detector_positions(self) -> np.ndarray:
        a = self.detector_angles
        return self.radius * np.column_stack([np.cos(a), np.sin(a)])

    def in_arc(self, angles) -> np.ndarray:
        if self.is_full:
            return np.ones(np.shape(angles), dtype=bool)
        rel = _wrap(np.asarray(angles, float) - self.arc_lo)
        return rel < self.arc_span - 1e-12

    @property
    def active(self) -> np.ndarray:
        return self.in_arc(self.detector_angles)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.time_horizon, self.n_time)

    @property
    def dt(self) -> float:
        return self.time_horizon / (self.n_time - 1)

    @property
    def detector_weights(self) -> np.ndarray:
        """Arc-length quadrature weights, zero on inactive detectors."""
        return np.where(self.active, TWO_PI * self.radius / self.n_detectors, 0.0)

    def rotated(self, angle: float) -> "MeasurementGeometry":
        lo = _wrap(self.arc_lo + angle)
        if self.is_full:
            return self
        return MeasurementGeometry(self.radius, lo, lo + self.arc_span, self.n_detectors,
                                   self.time_horizon, self.n_time)

    def with_arc(self, lo: float, hi: float) -> "MeasurementGeometry":
        return MeasurementGeometry(self.radius, lo, hi, self.n_detectors, self.time_horizon, self.n_time)


@dataclass(frozen=True, eq=False)
class PressureData:
    """Pressure samples ``values[detector, time]`` on a measurement geometry."""

    values: np.ndarray
    geometry: MeasurementGeometry

    def __post_init__(self):
        g = self.geometry
        if self.values.shape != (g.n_detectors, g.n_time):
            raise ConfigurationError(
                f"pressure data shape {self.values.shape} does not match "
                f"({g.n_detectors}, {g.n_time})"
            )

    def __add__(self, other):
        return PressureData(self.values + np.asarray(getattr(other, "values", other)), self.geometry)

    def __sub__(self, other):
        return PressureData(self.values - np.asarray(getattr(other, "values", other)), self.geometry)

    def inner(self, other) -> float:
        """Quadrature inner product over the arc and the time interval."""
        g = self.geometry
        wt = np.full(g.n_time, g.dt)
        wt[[0, -1]] *= 0.5
        return float(np.einsum("d,dt,dt,t->", g.detector_weights, self.values, other.values, wt))

    def write_csv(self, path) -> Path:
        path = Path(path)
        g = self.geometry
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["detector", "angle", "time", "value"])
            for d, a in enumerate(g.detector_angles):
                for t, v in zip(g.times, self.values[d]):
                    w.writerow([d, repr(float(a)), repr(float(t)), repr(float(v))])
        return path

    @classmethod
    def read_csv(cls, path, geometry: MeasurementGeometry) -> "PressureData":
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        vals = np.zeros((geometry.n_detectors, geometry.n_time))
        d = data[:, 0].astype(int)
        t = np.rint(data[:, 2] / geometry.dt).astype(int)
        vals[d, t] = data[:, 3]
        return cls(vals, geometry)


# forward operator

_CIRC_CACHE: dict = {}
_CIRC_CACHE_SIZE = 2


def _abel_matrix(t: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Weights ``Q[n, j]`` with ``sum_j Q[n, j] M_j = int_0^{t_n} M(r) r / sqrt(t_n^2 - r^2) dr``
    for the piecewise-linear interpolant of ``M`` on the grid ``r``."""
    dr = r[1] - r[0]
    Q = np.zeros((t.size, r.size))
    ra, rb = r[:-1], r[1:]
    for n in range(1, t.size):
        tn = t[n]
        mask = ra < tn - 1e-14 * tn
        a = ra[mask]
        b = np.minimum(rb[mask], tn)
        sa = np.sqrt(np.clip(tn * tn - a * a, 0.0, None))
        sb = np.sqrt(np.clip(tn * tn - b * b, 0.0, None))
        i0 = sa - sb
        fa = 0.5 * (tn * tn * np.arcsin(np.clip(a / tn, -1, 1)) - a * sa)
        fb = 0.5 * (tn * tn * np.arcsin(np.clip(b / tn, -1, 1)) - b * sb)
        i1 = fb - fa
        idx = np.nonzero(mask)[0]
        Q[n, idx] += (rb[mask] * i0 - i1) / dr
        Q[n, idx + 1] += (i1 - ra[mask] * i0) / dr
    return Q


def _time_matrix(n_time: int, dt: float, r_refine: int) -> np.ndarray:
    """Map sampled circular integrals ``M(r_j)`` to pressure samples ``p(t_n)``."""
    t = dt * np.arange(n_time)
    r = (dt / r_refine) * np.arange(r_refine * (n_time - 1) + 1)
    U = _abel_matrix(t, r) / TWO_PI
    G = np.zeros_like(U)
    G[0, 0] = 1.0 / TWO_PI
    G[1] = U[1] / dt
    G[2:] = (3.0 * U[2:] - 4.0 * U[1:-1] + U[:-2]) / (2.0 * dt)
    return G


def _circular_integral_matrix(mesh: SpatialMesh, geom: MeasurementGeometry, r_refine: int, ds: float):
    """Sparse matrix mapping nodal ``h`` to ``M(y_d, r_j)``, rows ordered ``d * n_r + j``."""
    dt = geom.dt
    n_r = r_refine * (geom.n_time - 1) + 1
    r_all = (dt / r_refine) * np.arange(n_r)
    R = geom.radius
    # circles that meet the square lie within the annulus R -+ sqrt(2)
    jr = np.nonzero((r_all > max(R - HALF_DIAGONAL - ds, 0.0)) & (r_all < R + HALF_DIAGONAL + ds))[0]
    blocks = []
    for alpha in geom.detector_angles:
        y = R * np.array([np.cos(alpha), np.sin(alpha)])
        beta = alpha + np.pi  # direction towards the origin
        rows, pts, wts = [], [], []
        for j in jr:
            r = r_all[j]
            n_a = max(8, int(np.ceil(TWO_PI * r / ds)))
            cosdev = (r * r + R * R - 2.0) / (2.0 * r * R)
            if cosdev <= -1.0:
                i = np.arange(n_a)
            else:
                dev = np.arccos(min(cosdev, 1.0))
                m = int(np.ceil(dev * n_a / TWO_PI)) + 1
                i = np.arange(-m, m + 1) if 2 * m + 1 < n_a else np.arange(n_a)
            ang = beta + TWO_PI * i / n_a
            p = y + r * np.column_stack([np.cos(ang), np.sin(ang)])
            keep = np.all(np.abs(p) <= DOMAIN_HI, axis=1)
            if not keep.any():
                continue
            pts.append(p[keep])
            wts.append(np.full(keep.sum(), TWO_PI / n_a))
            rows.append(np.full(keep.sum(), j))
        if pts:
            pts = np.vstack(pts)
            nodes, bw, _ = mesh.bilinear_weights(pts)
            data = (bw * np.concatenate(wts)[:, None]).ravel()
            rr = np.repeat(np.concatenate(rows), 4)
            blk = sp.csr_matrix((data, (rr, nodes.ravel())), shape=(n_r, mesh.n_nodes))
        else:
            blk = sp.csr_matrix((n_r, mesh.n_nodes))
        blk.sum_duplicates()
        blocks.append(blk)
    return sp.vstack(blocks, format="csr")


def _cached_circular_matrix(mesh, geom, r_refine, ds):
    key = (mesh.n_subdiv, geom.radius, geom.n_detectors, geom.time_horizon, geom.n_time, r_refine, ds)
    mat = _CIRC_CACHE.get(key)
    if mat is None:
        while len(_CIRC_CACHE) >= _CIRC_CACHE_SIZE:
            _CIRC_CACHE.pop(next(iter(_CIRC_CACHE)))
        mat = _circular_integral_matrix(mesh, geom, r_refine, ds)
        _CIRC_CACHE[key] = mat
    return mat


def clear_cache():
    _CIRC_CACHE.clear()


class WaveOperator:
    """Discrete forward map from nodal heating to pressure on the active detectors.

    Parameters
    ----------
    mesh : SpatialMesh
    geom : MeasurementGeometry
    ds : float, optional
        Arc-length spacing of the circle samples, default ``h / 2``.
    """

    def __init__(self, mesh: SpatialMesh, geom: MeasurementGeometry, ds: float | None = None):
        self.mesh = mesh
        self.geom = geom
        self.ds = mesh.h / 2.0 if ds is None else float(ds)
        self.r_refine = max(1, int(np.ceil(geom.dt / self.ds - 1e-12)))
        self.n_r = self.r_refine * (geom.n_time - 1) + 1
        self.time_matrix = _time_matrix(geom.n_time, geom.dt, self.r_refine)
        self.circular = _cached_circular_matrix(mesh, geom, self.r_refine, self.ds)
        self.active = geom.active
        self._adj = None

    @property
    def shape(self):
        return (self.geom.n_detectors * self.geom.n_time, self.mesh.n_nodes)

    def circular_integrals(self, h) -> np.ndarray:
        return (self.circular @ np.asarray(h, float)).reshape(self.geom.n_detectors, self.n_r)

    def forward(self, h) -> PressureData:
        p = self.circular_integrals(h) @ self.time_matrix.T
        p[~self.active] = 0.0
        return PressureData(p, self.geom)

    __call__ = forward

    def transpose(self, v) -> np.ndarray:
        """Exact transpose of `forward` for the Euclidean inner products."""
        vals = np.array(getattr(v, "values", v), dtype=float, copy=True)
        vals[~self.active] = 0.0
        m = vals @ self.time_matrix
        return self.circular.T @ m.ravel()

    def adjoint(self, v) -> np.ndarray:
        """Discretized continuous adjoint, see `wave_adjoint`."""
        if self._adj is None:
            self._adj = _AdjointKernel(self.mesh, self.geom)
        return self._adj(v)


class _AdjointKernel:
    def __init__(self, mesh, geom):
        self.geom = geom
        dt = geom.dt
        t = geom.times
        drho = dt / 2.0
        y = geom.detector_positions
        dist = np.linalg.norm(mesh.vertices[:, None, :] - y[None, :, :], axis=2)
        n_rho = int(np.ceil(dist.max() / drho)) + 2
        rho = drho * np.arange(n_rho)
        self.kernel = _hyperbolic_matrix(rho, t)
        s = dist / drho
        self.idx = np.minimum(np.floor(s).astype(np.int64), n_rho - 2)
        self.frac = s - self.idx

    def __call__(self, v):
        g = self.geom
        vals = np.asarray(getattr(v, "values", v), dtype=float)
        dv = np.gradient(vals, g.dt, axis=1)
        G = dv @ self.kernel.T  # (n_det, n_rho)
        d = np.arange(g.n_detectors)[None, :]
        vals_at = (1.0 - self.frac) * G[d, self.idx] + self.frac * G[d, self.idx + 1]
        return -(vals_at @ g.detector_weights) / TWO_PI


def _hyperbolic_matrix(rho: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Weights ``K[k, n]`` with ``sum_n K[k, n] w_n = int_{rho_k}^T w(t) / sqrt(t^2 - rho_k^2) dt``
    for the piecewise-linear interpolant of ``w``; exact via ``t = rho cosh s``."""
    dt = t[1] - t[0]
    K = np.zeros((rho.size, t.size))
    ta, tb = t[:-1], t[1:]
    for k, r in enumerate(rho):
        if r <= 0.0:
            continue
        mask = tb > r
        a = np.maximum(ta[mask], r)
        b = tb[mask]
        j0 = np.arccosh(b / r) - np.arccosh(a / r)
        j1 = np.sqrt(b * b - r * r) - np.sqrt(a * a - r * r)
        idx = np.nonzero(mask)[0]
        K[k, idx] += (tb[mask] * j0 - j1) / dt
        K[k, idx + 1] += (j1 - ta[mask] * j0) / dt
    return K


def wave_forward(h, mesh: SpatialMesh, geom: MeasurementGeometry) -> PressureData:
    """Pressure on the active detectors generated by the nodal heating ``h``."""
    return WaveOperator(mesh, geom).forward(h)


def wave_adjoint(v, mesh: SpatialMesh, geom: MeasurementGeometry | None = None) -> np.ndarray:
    """Continuous adjoint of the wave forward map evaluated at the mesh nodes.

    ``(W* v)(x) = -1/(2 pi) int_Lambda int_{|x-y|}^T dv/dt(y, t) / sqrt(t^2 - |x-y|^2) dt dS(y)``
    with centered time differences, exact integration of the linear
    interpolant of ``dv/dt`` and arc-length trapezoid weights.
    """
    geom = v.geometry if geom is None else geom
    return _AdjointKernel(mesh, geom)(v)


# time reversal


def time_taper(times, horizon, delta=0.2) -> np.ndarray:
    """One on ``[0, T - delta]``, decaying like ``cos^2`` to zero at ``T``."""
    t = np.asarray(times, float)
    s = np.clip((t - (horizon - delta)) / delta, 0.0, 1.0)
    return np.cos(0.5 * np.pi * s) ** 2


def default_cutoff(geom: MeasurementGeometry, delta=0.2, angular_delta=0.0) -> np.ndarray:
    """Smooth cutoff ``chi[d, t]``: time taper, optionally an angular taper at arc ends."""
    chi = np.outer(geom.active.astype(float), time_taper(geom.times, geom.time_horizon, delta))
    if angular_delta > 0 and not geom.is_full:
        rel = _wrap(geom.detector_angles - geom.arc_lo)
        edge = np.minimum(rel, geom.arc_span - rel)
        w = np.sin(0.5 * np.pi * np.clip(edge / angular_delta, 0.0, 1.0)) ** 2
        chi *= w[:, None]
    return chi


def time_reversal(g: PressureData, mesh: SpatialMesh, chi=None, dx: float | None = None,
                  cfl: float = 0.5) -> np.ndarray:
    """Solve the wave equation backwards from ``T`` with Dirichlet data ``chi * g``.

    A Cartesian grid of spacing ``dx`` (default half the mesh spacing) covers
    the detector disk; grid nodes outside the disk adjacent to interior
    nodes carry the boundary data, interpolated linearly in angle and time.
    Returns ``q(., 0)`` at the mesh nodes.
    """
    if not 0.0 < cfl <= 0.5:
        raise ConfigurationError(f"CFL number must lie in (0, 0.5], got {cfl}")
    geom = g.geometry
    data = np.asarray(g.values, float)
    if chi is None:
        chi = default_cutoff(geom)
    data = data * np.broadcast_to(chi, data.shape)
    R = geom.radius
    dx = mesh.grid_spacing / 2.0 if dx is None else float(dx)
    n = int(np.ceil(R / dx)) + 2
    xs = dx * np.arange(-n, n + 1)
    X, Y = np.meshgrid(xs, xs)
    rad = np.hypot(X, Y)
    inside = rad < R
    nb = np.zeros_like(inside)
    nb[1:, :] |= inside[:-1, :]
    nb[:-1, :] |= inside[1:, :]
    nb[:, 1:] |= inside[:, :-1]
    nb[:, :-1] |= inside[:, 1:]
    bnd = nb & ~inside
    bang = _wrap(np.arctan2(Y[bnd], X[bnd]))
    # periodic linear interpolation in angle
    s = bang / (TWO_PI / geom.n_detectors)
    i0 = np.floor(s).astype(np.int64) % geom.n_detectors
    i1 = (i0 + 1) % geom.n_detectors
    fa = s - np.floor(s)

    T = geom.time_horizon
    n_steps = int(np.ceil(T / (cfl * dx)))
    tau = T / n_steps
    lam2 = (tau / dx) ** 2

    def boundary(t):
        u = np.clip(t / geom.dt, 0.0, geom.n_time - 1)
        k = min(int(np.floor(u)), geom.n_time - 2)
        ft = u - k
        col = (1 - ft) * data[:, k] + ft * data[:, k + 1]
        return (1 - fa) * col[i0] + fa * col[i1]

    q_next = np.zeros_like(X)
    q_next[bnd] = boundary(T)
    q = q_next.copy()  # zero final velocity
    for m in range(n_steps, 0, -1):
        lap = np.zeros_like(q)
        lap[1:-1, 1:-1] = (q[2:, 1:-1] + q[:-2, 1:-1] + q[1:-1, 2:] + q[1:-1, :-2]
                           - 4.0 * q[1:-1, 1:-1])
        q_prev = np.where(inside, 2.0 * q - q_next + lam2 * lap, 0.0)
        q_prev[bnd] = boundary((m - 1) * tau)
        q_next, q = q, q_prev
    # bilinear interpolation of the grid solution to the mesh nodes
    p = (mesh.vertices - xs[0]) / dx
    i = np.clip(np.floor(p).astype(np.int64), 0, xs.size - 2)
    f = p - i
    ix, iy = i[:, 0], i[:, 1]
    fx, fy = f[:, 0], f[:, 1]
    return ((1 - fx) * (1 - fy) * q[iy, ix] + fx * (1 - fy) * q[iy, ix + 1]
            + (1 - fx) * fy * q[iy + 1, ix] + fx * fy * q[iy + 1, ix + 1])


# uniqueness and visibility


def distance_to_arc(x, geom: MeasurementGeometry) -> np.ndarray:
    """Euclidean distance from points ``x`` (..., 2) to the closed detector arc."""
    x = np.asarray(x, float)
    R = geom.radius
    if geom.arc_span <= 0.0:
        return np.full(x.shape[:-1], np.inf)
    r = np.linalg.norm(x, axis=-1)
    ang = _wrap(np.arctan2(x[..., 1], x[..., 0]))
    rel = _wrap(ang - geom.arc_lo)
    radial = np.abs(R - r)
    ends = []
    for a in (geom.arc_lo, geom.arc_lo + geom.arc_span):
        e = R * np.array([np.cos(a), np.sin(a)])
        ends.append(np.linalg.norm(x - e, axis=-1))
    end = np.minimum(*ends)
    if geom.is_full:
        return radial
    return np.where(rel <= geom.arc_span, np.minimum(radial, end), end)


def uniqueness_set(geom: MeasurementGeometry, points) -> np.ndarray:
    """Mask of points within distance ``T`` of the detector arc."""
    return distance_to_arc(points, geom) <= geom.time_horizon


def visible(x, xi, geom: MeasurementGeometry) -> np.ndarray:
    """Whether the line through ``x`` with direction ``xi`` meets the arc within distance ``T``.

    Broadcasts over leading axes of ``x`` and ``xi``.
    """
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    xi = xi / np.linalg.norm(xi, axis=-1, keepdims=True)
    x, xi = np.broadcast_arrays(x, xi)
    if geom.arc_span <= 0.0:
        return np.zeros(x.shape[:-1], dtype=bool)
    b = np.sum(x * xi, axis=-1)
    disc = b * b - np.sum(x * x, axis=-1) + geom.radius ** 2
    root = np.sqrt(np.clip(disc, 0.0, None))
    out = np.zeros(x.shape[:-1], dtype=bool)
    for s in (-b + root, -b - root):
        y = x + s[..., None] * xi
        ang = _wrap(np.arctan2(y[..., 1], y[..., 0]))
        hit = _wrap(ang - geom.arc_lo) <= geom.arc_span
        out |= (disc >= 0) & hit & (np.abs(s) <= geom.time_horizon)
    return out
