"""Heating operator, its derivative with respect to absorption, and the discrete transpose.

Heating fields are nodal: element absorption is averaged onto vertices with
area weights (``mesh.element_to_node``) and multiplied by the nodal fluence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DIAMETER, AngularGrid, SpatialMesh, ell_inf, ell_plus
from .transport import (
    BoundarySource,
    OpticalCoefficients,
    PhotonDensity,
    RTESystem,
    ScatteringKernel,
    VolumeSource,
    assemble_rte_system,
    fluence,
    streamline_diffusion_rule,
)

DEFAULT_OMEGA0 = ((-0.9, -0.9), (0.9, 0.9))


def heating(mesh, angular, coeffs, kernel, f=None, q=None, stabilization_rule=streamline_diffusion_rule,
            system: RTESystem | None = None) -> np.ndarray:
    """Absorbed energy ``H = mu_a * phi`` at the mesh nodes."""
    if system is None:
        system = assemble_rte_system(mesh, angular, coeffs, kernel, stabilization_rule)
    phi = fluence(system.solve(q, f), angular)
    return (mesh.element_to_node @ coeffs.mu_a) * phi


@dataclass(frozen=True, eq=False)
class PerturbationDirection:
    """Direction ``(h_a, h_s)`` in coefficient space, per element."""

    h_a: np.ndarray
    h_s: np.ndarray | None = None

    def is_feasible(self, coeffs: OpticalCoefficients, eps: float = 1e-6) -> bool:
        """True if ``mu + eps h`` stays in the admissible set."""
        a = coeffs.mu_a + eps * self.h_a
        s = coeffs.mu_s if self.h_s is None else coeffs.mu_s + eps * self.h_s
        return bool(np.all(a >= 0) and np.all(a <= coeffs.mu_a_bar)
                    and np.all(s >= 0) and np.all(s <= coeffs.mu_s_bar))


class LinearizedHeatingOperator:
    """Derivative of the heating operator at a fixed linearization point.

    Parameters
    ----------
    mesh, angular, coeffs, kernel
        Discretization and linearization point ``mu*``.
    f, q : BoundarySource, VolumeSource, optional
        Illumination. ``q`` defaults to zero.
    system : RTESystem, optional
        Pre-assembled (and possibly already factorized) system at ``mu*``;
        pass the same instance to share one factorization between
        illuminations.
    """

    def __init__(self, mesh: SpatialMesh, angular: AngularGrid, coeffs: OpticalCoefficients,
                 kernel: ScatteringKernel, f: BoundarySource | None = None, q: VolumeSource | None = None,
                 system: RTESystem | None = None, stabilization_rule=streamline_diffusion_rule):
        self.mesh = mesh
        self.angular = angular
        self.coeffs = coeffs
        self.kernel = kernel
        self.f = f
        self.q = q
        if system is None:
            system = assemble_rte_system(mesh, angular, coeffs, kernel, stabilization_rule)
        self.system = system
        self.background: PhotonDensity = system.solve(q, f)
        self.phi = fluence(self.background, angular)
        self._P = mesh.element_to_node
        self._mu_nodal = self._P @ coeffs.mu_a
        self._matrix = None

    @property
    def shape(self):
        return (self.mesh.n_nodes, self.mesh.n_elements)

    @property
    def heating(self) -> np.ndarray:
        return self._mu_nodal * self.phi

    def psi(self, h_a, h_s=None) -> np.ndarray:
        """Solve the linearized transport problem for ``Psi``, shape (n, N)."""
        Phi = self.background.as_array()
        src = self.system.system_derivative(Phi, h_a, h_s)
        return self.system.solve_vector(src.ravel()).reshape(Phi.shape)

    def apply(self, h) -> np.ndarray:
        """``D h = h_a phi* - mu_a* int Psi dtheta`` at the nodes."""
        if isinstance(h, PerturbationDirection):
            h_a, h_s = h.h_a, h.h_s
        else:
            h_a, h_s = h, None
        h_a = np.asarray(h_a, float)
        out = (self._P @ h_a) * self.phi
        if np.any(self.coeffs.mu_a != 0.0):
            out -= self._mu_nodal * (self.psi(h_a, h_s) @ self.angular.weights)
        return out

    def adjoint(self, z) -> np.ndarray:
        """Exact transpose of ``h_a -> D h_a`` applied to a nodal field."""
        z = np.asarray(z, float)
        out = self._P.T @ (self.phi * z)
        y = self._mu_nodal * z
        if np.any(y != 0.0):
            rhs = np.outer(y, self.angular.weights)
            Z = self.system.solve_transpose(rhs.ravel()).reshape(rhs.shape)
            out -= self.system.weighted_gradient(Z, self.background.as_array())
        return out

    def matrix(self) -> np.ndarray:
        """Dense matrix of ``D``, built column by column (small meshes only)."""
        if self._matrix is None:
            E = self.mesh.n_elements
            cols = [self.apply(np.eye(1, E, e).ravel()) for e in range(E)]
            self._matrix = np.column_stack(cols)
        return self._matrix

    def injectivity_report(self, omega0=DEFAULT_OMEGA0) -> "InjectivityReport":
        return injectivity_report(self, omega0)


apply_derivative = LinearizedHeatingOperator.apply
apply_adjoint = LinearizedHeatingOperator.adjoint


@dataclass
class Condition:
    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return bool(self.lhs < self.rhs)


@dataclass
class InjectivityReport:
    """Sufficient injectivity conditions evaluated at the linearization point."""

    conditions: list
    phi_min: float
    phi_max_omega: float
    density_sup: float
    density_sup_omega0: float
    uc_prefactor: float
    extras: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        out = []
        for c in self.conditions:
            flag = "pass" if c.passed else "fail"
            out.append(f"{c.name:<4} lhs={c.lhs:.6g} rhs={c.rhs:.6g} {flag}")
        out.append(f"uc prefactor 2*pi*diam*|Phi*|_inf = {self.uc_prefactor:.6g}")
        return out


def injectivity_report(op: LinearizedHeatingOperator, omega0=DEFAULT_OMEGA0) -> InjectivityReport:
    """Evaluate the injectivity conditions (a), (b), (c) and the collinear bound (uc).

    (a) ``2 pi |mu_a l|_inf |Phi|_{L inf(Omega0)} < phi_min``
    (b) ``2 pi |mu_a|_inf diam e^{|mu_s l+|_inf} |Phi|_inf < phi_min``
    (c) ``|mu_a l_inf|_{L inf(Omega0)} < 1``
    (uc) ``|mu_a|_inf < min phi / (2 pi diam |Phi|_inf)``

    ``l`` is taken as its supremum over directions, ``l_inf``. ``phi_min`` is
    the nodal fluence minimum over ``Omega0``; the (uc) bound uses the
    minimum over the whole square.
    """
    mesh, ang, co = op.mesh, op.angular, op.coeffs
    lo, hi = omega0
    nodes0 = mesh.node_mask(lo, hi)
    elems0 = mesh.element_mask(lo, hi)
    Phi = op.background.as_array()
    phi = op.phi
    c = mesh.centroids
    mu_a_l = co.mu_a * ell_inf(c)
    mu_a_l0 = float(np.max(mu_a_l[elems0])) if elems0.any() else 0.0
    mu_s_lplus = float(np.max(co.mu_s * ell_plus(c, ang)))
    sup_phi = float(np.max(np.abs(Phi)))
    sup_phi0 = float(np.max(np.abs(Phi[nodes0]))) if nodes0.any() else 0.0
    phi_min = float(np.min(phi[nodes0])) if nodes0.any() else 0.0
    mu_a_sup = float(np.max(co.mu_a))
    S1 = 2.0 * np.pi
    prefactor = S1 * DIAMETER * sup_phi
    conds = [
        Condition("a", S1 * float(np.max(mu_a_l)) * sup_phi0, phi_min),
        Condition("b", S1 * mu_a_sup * DIAMETER * np.exp(mu_s_lplus) * sup_phi, phi_min),
        Condition("c", mu_a_l0, 1.0),
        Condition("uc", mu_a_sup, float(np.min(phi)) / prefactor if prefactor > 0 else np.inf),
    ]
    # with mu_a* = 0 every left side vanishes; treat 0 < 0 as satisfied
    for cond in conds:
        if cond.lhs == 0.0 and cond.rhs == 0.0:
            cond.rhs = np.inf
    return InjectivityReport(conds, phi_min, float(np.max(phi)), sup_phi, sup_phi0, prefactor,
                             {"mu_a_ell_inf_omega0": mu_a_l0, "mu_s_ell_plus": mu_s_lplus})
