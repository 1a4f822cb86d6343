"""Quantitative photoacoustic tomography with the radiative transfer equation.

Modules
-------
geometry     meshes, angular grids and ray lengths on the square [-1, 1]^2
transport    streamline-diffusion RTE solver, collision-free inverse, Neumann series
heating      heating operator, its derivative and discrete transpose
acoustics    2D wave forward map, adjoint, time reversal, visibility
inversion    Landweber iteration over one or more illuminations
experiments  phantoms, presets, noise and error metrics
"""

from .acoustics import (
    MeasurementGeometry,
    PressureData,
    WaveOperator,
    time_reversal,
    uniqueness_set,
    visible,
    wave_adjoint,
    wave_forward,
)
from .errors import (
    AssemblyError,
    ConfigurationError,
    DiscretizationError,
    DivergenceError,
    DomainError,
    ParameterError,
    QpatError,
    SolverError,
    TruncationError,
)
from .experiments import (
    Phantom,
    Scenario,
    add_noise,
    error_metrics,
    four_half,
    half_data,
    make_illumination,
    preset_high_scattering,
    preset_low_contrast,
    preset_low_scattering,
    rotate_measurement,
)
from .geometry import (
    AngularGrid,
    SpatialMesh,
    build_angular_grid,
    build_uniform_mesh,
    ell_inf,
    ell_plus,
    exit_length,
)
from .heating import (
    LinearizedHeatingOperator,
    PerturbationDirection,
    apply_adjoint,
    apply_derivative,
    heating,
    injectivity_report,
)
from .inversion import (
    Illumination,
    IlluminationSet,
    IterationLog,
    LinearizedForwardOperator,
    ReconstructionResult,
    estimate_norm,
    landweber,
    multi_illumination_coverage,
    residual,
)
from .transport import (
    BoundarySource,
    OpticalCoefficients,
    PhotonDensity,
    RTESystem,
    ScatteringKernel,
    VolumeSource,
    apply_collision_free_inverse,
    assemble_rte_system,
    fluence,
    henyey_greenstein,
    neumann_series_solve,
    solve_rte,
)

__version__ = "0.1.0"
