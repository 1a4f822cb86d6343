"""Landweber inversion of the linearized heating-plus-wave forward map."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import MeasurementGeometry, WaveOperator, uniqueness_set, visible
from .errors import DivergenceError, ParameterError, SolverError
from .heating import LinearizedHeatingOperator
from .transport import BoundarySource, VolumeSource, assemble_rte_system, streamline_diffusion_rule

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Illumination:
    f: BoundarySource
    geom: MeasurementGeometry
    q: VolumeSource | None = None
    label: str = ""


@dataclass(frozen=True, eq=False)
class IlluminationSet:
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


class LinearizedForwardOperator:
    """Stacked operator ``h_a -> (W_i D_i h_a)_i`` over an illumination set.

    All illuminations share one assembled and factorized RTE system at the
    linearization point. ``wave_adjoint="transpose"`` (default) uses the
    exact transpose of the discrete wave operator, so the normal operator is
    symmetric; ``"continuous"`` uses the discretized continuous adjoint.
    """

    def __init__(self, mesh, angular, coeffs, kernel, illuminations, wave_adjoint="transpose",
                 stabilization_rule=streamline_diffusion_rule, system=None):
        if wave_adjoint not in ("transpose", "continuous"):
            raise ParameterError(f"unknown wave adjoint {wave_adjoint!r}")
        self.mesh = mesh
        self.angular = angular
        self.coeffs = coeffs
        self.kernel = kernel
        self.illuminations = illuminations
        self.wave_adjoint = wave_adjoint
        if system is None:
            system = assemble_rte_system(mesh, angular, coeffs, kernel, stabilization_rule)
        self.system = system
        self.heating_ops = [
            LinearizedHeatingOperator(mesh, angular, coeffs, kernel, f=il.f, q=il.q, system=system)
            for il in illuminations
        ]
        self.wave_ops = [WaveOperator(mesh, il.geom) for il in illuminations]

    @property
    def n_illuminations(self) -> int:
        return len(self.heating_ops)

    @property
    def n_unknowns(self) -> int:
        return self.mesh.n_elements

    def background_data(self) -> list:
        """``W_i H_i(mu*)`` for each illumination."""
        return [W.forward(D.heating).values for D, W in zip(self.heating_ops, self.wave_ops)]

    def apply_single(self, i, h_a) -> np.ndarray:
        return self.wave_ops[i].forward(self.heating_ops[i].apply(h_a)).values

    def adjoint_single(self, i, r) -> np.ndarray:
        W = self.wave_ops[i]
        if self.wave_adjoint == "transpose":
            z = W.transpose(r)
        else:
            # rescale the L2 adjoint to the Euclidean pairing used by the residual
            g = W.geom
            scale = self.mesh.lumped_mass / (2.0 * np.pi * g.radius / g.n_detectors * g.dt)
            z = W.adjoint(np.where(W.active[:, None], r, 0.0)) * scale
        return self.heating_ops[i].adjoint(z)

    def apply(self, h_a) -> list:
        return [self.apply_single(i, h_a) for i in range(self.n_illuminations)]

    def adjoint(self, residuals) -> np.ndarray:
        out = np.zeros(self.n_unknowns)
        for i, r in enumerate(residuals):
            out += self.adjoint_single(i, r)
        return out

    def normal(self, h_a) -> np.ndarray:
        return self.adjoint(self.apply(h_a))


@dataclass
class NormEstimate:
    value: float
    history: list
    degenerate: bool = False


def estimate_norm(op: LinearizedForwardOperator, iters: int = 20, seed: int = 0) -> NormEstimate:
    """Power iteration on the normal operator from a seeded random start.

    Returns the square root of the last Rayleigh quotient; ``history`` holds
    the estimate after every step.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.n_unknowns)
    x /= np.linalg.norm(x)
    history = []
    for _ in range(iters):
        y = op.normal(x)
        rq = float(x @ y)
        history.append(np.sqrt(max(rq, 0.0)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return NormEstimate(0.0, history, degenerate=True)
        x = y / ny
    return NormEstimate(history[-1], history, degenerate=history[-1] == 0.0)


def residual(h_a, data, background, op: LinearizedForwardOperator, per_illumination=False):
    """``sum_i |v_i - v*_i - W_i D_i h_a|^2`` with Euclidean norms."""
    vals = []
    for i, (v, vs) in enumerate(zip(data, background)):
        r = np.asarray(v) - np.asarray(vs) - op.apply_single(i, h_a)
        vals.append(float(np.sum(r * r)))
    return vals if per_illumination else float(sum(vals))


@dataclass
class IterationLog:
    residuals: list = field(default_factory=list)
    step_size: float = 0.0
    wall_times: list = field(default_factory=list)
    seed: int | None = None
    norm_estimate: float | None = None
    stopped_early: bool = False

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "step_size", "wall_time"])
            for n, (r, t) in enumerate(zip(self.residuals, self.wall_times)):
                w.writerow([n, repr(float(r)), repr(float(self.step_size)), f"{t:.6f}"])
        return path


@dataclass
class ReconstructionResult:
    h_a: np.ndarray
    mu_a: np.ndarray
    log: IterationLog
    metrics: dict | None = None
    iterates: list | None = None


def landweber(data, background, op: LinearizedForwardOperator, step=None, n_iters: int = 50,
              h0=None, clamp: bool = False, noise_energy: float | None = None, tau: float = 1.1,
              norm: float | None = None, seed: int | None = None, keep_iterates: bool = False,
              callback=None) -> ReconstructionResult:
    """Landweber iteration ``h <- h + step * sum_i D_i^* W_i^* (v_i - v*_i - W_i D_i h)``.

    Parameters
    ----------
    data, background : list of ndarray
        Measured and background pressure per illumination.
    step : float, optional
        Step size; defaults to ``1 / norm**2``. A warning is emitted when
        ``step >= 2 / norm**2``.
    norm : float, optional
        Operator norm estimate; computed with `estimate_norm` if needed.
    clamp : bool
        Project onto ``mu_a* + h_a >= 0`` after each step.
    noise_energy : float, optional
        Known ``sum |noise|^2``; when given the iteration stops as soon as
        the residual drops below ``tau * noise_energy``.
    """
    if norm is None:
        norm = estimate_norm(op, seed=0 if seed is None else seed).value
    if step is None:
        if norm <= 0.0:
            raise ParameterError("operator norm estimate is zero; cannot choose a step size")
        step = 1.0 / norm ** 2
    if not step > 0:
        raise ParameterError("step size must be positive")
    if norm > 0 and step >= 2.0 / norm ** 2:
        warnings.warn(f"step size {step:.3e} exceeds the convergence bound 2/|WD|^2 = {2.0 / norm ** 2:.3e}",
                      RuntimeWarning, stacklevel=2)
    mu_star = op.coeffs.mu_a
    h = np.zeros(op.n_unknowns) if h0 is None else np.array(h0, dtype=float)
    diffs = [np.asarray(v, float) - np.asarray(vs, float) for v, vs in zip(data, background)]
    lg = IterationLog(step_size=step, seed=seed, norm_estimate=norm)
    iterates = [h.copy()] if keep_iterates else None
    t0 = time.perf_counter()

    def resid(h):
        rs = [d - op.apply_single(i, h) for i, d in enumerate(diffs)]
        return rs, float(sum(np.sum(r * r) for r in rs))

    rs, val = resid(h)
    lg.residuals.append(val)
    lg.wall_times.append(time.perf_counter() - t0)
    for n in range(n_iters):
        if noise_energy is not None and val <= tau * noise_energy:
            lg.stopped_early = True
            break
        h_new = h + step * op.adjoint(rs)
        if clamp:
            h_new = np.maximum(h_new, -mu_star)
        if not np.all(np.isfinite(h_new)):
            raise DivergenceError(f"non-finite iterate at step {n + 1}", last_iterate=h, iteration=n + 1)
        try:
            rs, val = resid(h_new)
        except SolverError as exc:
            raise DivergenceError(f"solver failed at step {n + 1}: {exc}", last_iterate=h,
                                  iteration=n + 1) from exc
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite residual at step {n + 1}", last_iterate=h, iteration=n + 1)
        h = h_new
        lg.residuals.append(val)
        lg.wall_times.append(time.perf_counter() - t0)
        if keep_iterates:
            iterates.append(h.copy())
        if callback is not None:
            callback(n + 1, h, val)
        log.debug("landweber %d residual %.6e", n + 1, val)
    return ReconstructionResult(h, mu_star + h, lg, iterates=iterates)


@dataclass
class CoverageReport:
    node_fraction: float
    pair_fraction: float
    n_nodes: int
    n_pairs: int


def multi_illumination_coverage(geoms, fluences, mesh, angular, rel_tol: float = 1e-8) -> CoverageReport:
    """Coverage of the mesh by the union of uniqueness sets and visible pairs.

    A node counts for illumination ``i`` if it is within distance ``T`` of
    the arc and ``phi_i > rel_tol * max phi_i``; a pair ``(x, xi)`` with
    ``xi`` on the angular grid additionally needs the line through ``x`` to
    be visible from the arc.
    """
    X = mesh.vertices
    n, N = mesh.n_nodes, angular.n_theta
    nodes = np.zeros(n, dtype=bool)
    pairs = np.zeros((n, N), dtype=bool)
    for geom, phi in zip(geoms, fluences):
        phi = np.asarray(phi, float)
        pos = phi > rel_tol * max(float(np.max(phi)), 0.0) if phi.size else np.zeros(n, bool)
        if not np.any(phi > 0):
            pos = np.zeros(n, dtype=bool)
        nodes |= pos & uniqueness_set(geom, X)
        vis = visible(X[:, None, :], angular.directions[None, :, :], geom)
        pairs |= pos[:, None] & vis
    return CoverageReport(float(nodes.mean()), float(pairs.mean()), n, n * N)
