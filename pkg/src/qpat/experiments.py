"""Phantoms, illuminations, noise and the three reconstruction scenarios.

The phantoms contain two square inclusions of side 0.4 centred at
(-0.35, 0.35) and (0.35, -0.35). Positions are approximations read off the
published figures. The base scenarios illuminate from the bottom side and
record full-circle data; `half_data` keeps the detectors on the lower half
circle and `four_half` combines four rotated half-data measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .acoustics import MeasurementGeometry, PressureData, WaveOperator
from .errors import ConfigurationError, ParameterError
from .geometry import SIDE_NORMALS, SIDES, AngularGrid, SpatialMesh, build_angular_grid, build_uniform_mesh
from .inversion import (
    Illumination,
    IlluminationSet,
    LinearizedForwardOperator,
    ReconstructionResult,
    estimate_norm,
    landweber,
)
from .transport import (
    MU_A_BAR,
    MU_S_BAR,
    BoundarySource,
    OpticalCoefficients,
    assemble_rte_system,
    fluence,
    henyey_greenstein,
)

# spatial degrees of freedom of the reference discretization; the mesh uses
# (n + 1)^2 vertices, so 6400 nodes means 79 cells per side
REFERENCE_SPATIAL_DOF = 6400
REFERENCE_MESH_N = int(round(np.sqrt(REFERENCE_SPATIAL_DOF))) - 1
REFERENCE_N_THETA = 64
ANISOTROPY = 0.8
BOX_SIDE = 0.4
BOX_CENTERS = ((-0.35, 0.35), (0.35, -0.35))
FULL_ARC = (0.0, 2.0 * np.pi)
LOWER_HALF_ARC = (np.pi, 2.0 * np.pi)


@dataclass(frozen=True)
class Inclusion:
    """Axis-aligned rectangle ``[lo, hi]`` with its coefficient values."""

    lo: tuple
    hi: tuple
    mu_a: float
    mu_s: float

    @classmethod
    def square(cls, center, side, mu_a, mu_s):
        c = np.asarray(center, float)
        return cls(tuple(c - side / 2), tuple(c + side / 2), float(mu_a), float(mu_s))


@dataclass(frozen=True)
class Phantom:
    mu_a: float
    mu_s: float
    inclusions: tuple = ()

    def coefficients(self, mesh: SpatialMesh, mu_a_bar=MU_A_BAR, mu_s_bar=MU_S_BAR) -> OpticalCoefficients:
        a = np.full(mesh.n_elements, self.mu_a)
        s = np.full(mesh.n_elements, self.mu_s)
        for inc in self.inclusions:
            m = mesh.element_mask(inc.lo, inc.hi)
            a[m] = inc.mu_a
            s[m] = inc.mu_s
        return OpticalCoefficients(a, s, mu_a_bar, mu_s_bar)

    def inclusion_masks(self, mesh: SpatialMesh) -> list:
        return [mesh.element_mask(inc.lo, inc.hi) for inc in self.inclusions]


@dataclass(frozen=True)
class Scenario:
    """Complete description of a simulation and reconstruction run."""

    name: str
    phantom: Phantom
    mu_a_star: float
    mu_s_star: float
    sides: tuple = ("bottom",)
    arcs: tuple = (FULL_ARC,)
    noise: float = 0.005
    g: float = ANISOTROPY
    n_subdiv: int = REFERENCE_MESH_N
    n_theta: int = REFERENCE_N_THETA
    radius: float = 1.5
    n_detectors: int = 256
    n_time: int = 512
    time_horizon: float = 3.0
    intensity: float = 1.0
    n_iters: int = 50
    lambda_factor: float = 1.0
    seed: int = 0
    mu_a_bar: float = MU_A_BAR
    mu_s_bar: float = MU_S_BAR

    def __post_init__(self):
        if len(self.sides) != len(self.arcs):
            raise ConfigurationError("each illumination needs exactly one detector arc")
        for s in self.sides:
            if s not in SIDES:
                raise ConfigurationError(f"unknown side {s!r}")
        if self.noise < 0:
            raise ConfigurationError("noise level must be nonnegative")

    def mesh(self) -> SpatialMesh:
        return build_uniform_mesh(self.n_subdiv)

    def angular(self) -> AngularGrid:
        return build_angular_grid(self.n_theta)

    def geometries(self) -> list:
        return [MeasurementGeometry(self.radius, lo, hi, self.n_detectors, self.time_horizon, self.n_time)
                for lo, hi in self.arcs]

    def illumination_set(self, mesh, angular) -> IlluminationSet:
        return IlluminationSet(
            Illumination(make_illumination(side, self.intensity, angular, mesh), geom, label=side)
            for side, geom in zip(self.sides, self.geometries())
        )

    def truth(self, mesh) -> OpticalCoefficients:
        return self.phantom.coefficients(mesh, self.mu_a_bar, self.mu_s_bar)

    def linearization_point(self, mesh) -> OpticalCoefficients:
        return OpticalCoefficients.constant(mesh, self.mu_a_star, self.mu_s_star,
                                            mu_a_bar=self.mu_a_bar, mu_s_bar=self.mu_s_bar)

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def make_illumination(side: str, intensity: float, angular: AngularGrid, mesh: SpatialMesh) -> BoundarySource:
    """Collimated illumination of one side of the square along its inward normal.

    The angular profile is ``N / (2 pi)`` at the grid direction equal to the
    inward normal and zero at all others, so its quadrature integral is one.
    """
    if side not in SIDES:
        raise ConfigurationError(f"unknown side {side!r}")
    if not intensity > 0:
        raise ParameterError("illumination intensity must be positive")
    k = angular.index_of(-SIDE_NORMALS[side])
    vals = np.zeros((len(mesh.boundary_edges), angular.n_theta))
    vals[mesh.boundary_sides == side, k] = intensity * angular.n_theta / (2.0 * np.pi)
    return BoundarySource.from_values(mesh, angular, vals)


def add_noise(p, level: float, seed=None, rng=None):
    """Add white Gaussian noise with std ``level * max|p|`` on the active detectors."""
    if level < 0:
        raise ParameterError("noise level must be nonnegative")
    vals = np.asarray(getattr(p, "values", p), dtype=float)
    if level == 0:
        return p
    rng = np.random.default_rng(seed) if rng is None else rng
    noise = rng.standard_normal(vals.shape) * (level * float(np.max(np.abs(vals))))
    geom = getattr(p, "geometry", None)
    if geom is not None:
        noise[~geom.active] = 0.0
        return PressureData(vals + noise, geom)
    return vals + noise


def preset_low_scattering() -> Scenario:
    ph = Phantom(0.1, 0.1, (Inclusion.square(BOX_CENTERS[0], BOX_SIDE, 1.5, 0.1),
                            Inclusion.square(BOX_CENTERS[1], BOX_SIDE, 3.0, 0.1)))
    return Scenario("low_scattering", ph, 0.1, 0.1, noise=0.005)


def preset_low_contrast() -> Scenario:
    ph = Phantom(1.0, 0.1, (Inclusion.square(BOX_CENTERS[0], BOX_SIDE, 1.1, 0.1),
                            Inclusion.square(BOX_CENTERS[1], BOX_SIDE, 1.2, 0.1)))
    return Scenario("low_contrast", ph, 1.0, 0.1, noise=0.05)


def preset_high_scattering() -> Scenario:
    ph = Phantom(1.0, 1.0, (Inclusion.square(BOX_CENTERS[0], BOX_SIDE, 2.0, 1.0),
                            Inclusion.square(BOX_CENTERS[1], BOX_SIDE, 2.0, 8.0)))
    return Scenario("high_scattering", ph, 1.0, 1.0, noise=0.005)


PRESETS = {
    "low_scattering": preset_low_scattering,
    "low_contrast": preset_low_contrast,
    "high_scattering": preset_high_scattering,
}


def get_preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _rotate_side(side, k):
    return SIDES[(SIDES.index(side) + k) % 4]


def rotate_measurement(scenario: Scenario, k: int) -> Scenario:
    """Rotate illumination sides and detector arcs by ``k * pi / 2``; the phantom stays fixed."""
    if k not in (0, 1, 2, 3):
        raise ConfigurationError("rotation index must be 0, 1, 2 or 3")
    if k == 0:
        return scenario
    arcs = []
    for lo, hi in scenario.arcs:
        if hi - lo >= 2.0 * np.pi - 1e-12:
            arcs.append((lo, hi))
            continue
        # snap to multiples of pi/2 so repeated rotations are exact
        nlo = np.mod(lo + k * np.pi / 2, 2.0 * np.pi)
        q = round(nlo / (np.pi / 2))
        if abs(nlo - q * np.pi / 2) < 1e-9:
            nlo = (q % 4) * np.pi / 2
        arcs.append((nlo, nlo + (hi - lo)))
    sides = tuple(_rotate_side(s, k) for s in scenario.sides)
    return replace(scenario, sides=sides, arcs=tuple(arcs))


def half_data(scenario: Scenario) -> Scenario:
    """Detectors on the lower half circle, on the illuminated side."""
    return replace(scenario, name=scenario.name + "_half", arcs=tuple(LOWER_HALF_ARC for _ in scenario.sides))


def four_half(scenario: Scenario) -> Scenario:
    """Four half-data measurements with illumination and arc rotated by ``k pi / 2``."""
    base = half_data(replace(scenario, sides=scenario.sides[:1], arcs=scenario.arcs[:1]))
    rots = [rotate_measurement(base, k) for k in range(4)]
    return replace(base, name=scenario.name + "_4xhalf",
                   sides=tuple(r.sides[0] for r in rots), arcs=tuple(r.arcs[0] for r in rots))


VARIANTS = {"full": lambda s: s, "half": half_data, "4xhalf": four_half}


def error_metrics(recon, truth, mesh: SpatialMesh, masks=None) -> dict:
    """Relative L2 error, max-abs error and per-inclusion means of an element field."""
    recon = np.asarray(recon, float)
    truth = np.asarray(truth, float)
    w = mesh.areas
    diff = recon - truth
    tn = np.sqrt(np.sum(w * truth ** 2))
    out = {
        "rel_l2": float(np.sqrt(np.sum(w * diff ** 2)) / tn) if tn > 0 else float(np.sqrt(np.sum(w * diff ** 2))),
        "max_abs": float(np.max(np.abs(diff))),
    }
    means = []
    for m in masks or []:
        means.append(float(np.sum(w[m] * recon[m]) / np.sum(w[m])))
    out["inclusion_means"] = means
    return out


@dataclass
class SimulationResult:
    scenario: Scenario
    mesh: SpatialMesh
    angular: AngularGrid
    truth: OpticalCoefficients
    heating: list
    fluence: list
    clean: list
    data: list
    noise_energy: float


def simulate(scenario: Scenario, mesh=None, angular=None) -> SimulationResult:
    """Forward data ``W H(mu) + noise`` for every illumination of the scenario."""
    mesh = scenario.mesh() if mesh is None else mesh
    angular = scenario.angular() if angular is None else angular
    kernel = henyey_greenstein(scenario.g, angular)
    truth = scenario.truth(mesh)
    system = assemble_rte_system(mesh, angular, truth, kernel)
    rng = np.random.default_rng(scenario.seed)
    heats, flus, clean, noisy = [], [], [], []
    energy = 0.0
    P = mesh.element_to_node
    for il in scenario.illumination_set(mesh, angular):
        phi = fluence(system.solve(f=il.f), angular)
        H = (P @ truth.mu_a) * phi
        p = WaveOperator(mesh, il.geom).forward(H)
        pn = add_noise(p, scenario.noise, rng=rng)
        energy += float(np.sum((pn.values - p.values) ** 2))
        heats.append(H)
        flus.append(phi)
        clean.append(p)
        noisy.append(pn)
    return SimulationResult(scenario, mesh, angular, truth, heats, flus, clean, noisy, energy)


@dataclass
class ExperimentResult:
    simulation: SimulationResult
    reconstruction: ReconstructionResult
    metrics: dict
    background: list = field(default_factory=list)


def reconstruct(sim: SimulationResult, n_iters=None, lambda_factor=None, clamp=False,
                discrepancy=False, operator=None) -> ExperimentResult:
    """Landweber reconstruction of ``mu_a`` from simulated data."""
    sc = sim.scenario
    mesh, angular = sim.mesh, sim.angular
    kernel = henyey_greenstein(sc.g, angular)
    if operator is None:
        lin = sc.linearization_point(mesh)
        operator = LinearizedForwardOperator(mesh, angular, lin, kernel, sc.illumination_set(mesh, angular))
    background = operator.background_data()
    nrm = estimate_norm(operator, seed=sc.seed)
    if nrm.degenerate:
        raise ParameterError("forward operator is zero; nothing to reconstruct")
    lam = (sc.lambda_factor if lambda_factor is None else lambda_factor) / nrm.value ** 2
    res = landweber([p.values for p in sim.data], background, operator, step=lam,
                    n_iters=sc.n_iters if n_iters is None else n_iters, clamp=clamp,
                    noise_energy=sim.noise_energy if discrepancy else None,
                    norm=nrm.value, seed=sc.seed)
    metrics = error_metrics(res.mu_a, sim.truth.mu_a, mesh, sc.phantom.inclusion_masks(mesh))
    res.metrics = metrics
    return ExperimentResult(sim, res, metrics, background)


def run_experiment(scenario: Scenario, **kw) -> ExperimentResult:
    return reconstruct(simulate(scenario), **kw)
