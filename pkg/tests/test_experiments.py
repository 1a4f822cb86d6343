import numpy as np
import pytest

from qpat.acoustics import MeasurementGeometry, PressureData
from qpat.errors import ConfigurationError, ParameterError
from qpat.experiments import (
    BOX_CENTERS,
    BOX_SIDE,
    PRESETS,
    add_noise,
    error_metrics,
    four_half,
    get_preset,
    half_data,
    make_illumination,
    preset_high_scattering,
    preset_low_contrast,
    preset_low_scattering,
    rotate_measurement,
    simulate,
)
from qpat.geometry import SIDES, build_angular_grid, build_uniform_mesh
from qpat.inversion import LinearizedForwardOperator, landweber
from qpat.transport import henyey_greenstein


@pytest.fixture(scope="module")
def grid():
    return build_uniform_mesh(6), build_angular_grid(16)


@pytest.mark.parametrize("side", SIDES)
def test_illumination_normalized_and_inflow(grid, side):
    mesh, ang = grid
    f = make_illumination(side, 2.0, ang, mesh)
    on = mesh.boundary_sides == side
    # per edge the angular profile integrates to I0
    assert np.allclose(f.values[on] @ ang.weights, 2.0, atol=1e-12)
    assert np.all(f.values[~on] == 0)
    assert f.values.max() == pytest.approx(2.0 * ang.n_theta / (2 * np.pi), rel=1e-15)
    # support only on inflow pairs
    cos = mesh.boundary_normals @ ang.directions.T
    assert np.all(cos[f.values != 0] < 0)


def test_illumination_errors(grid):
    mesh, ang = grid
    with pytest.raises(ParameterError):
        make_illumination("left", 0.0, ang, mesh)
    with pytest.raises(ConfigurationError):
        make_illumination("front", 1.0, ang, mesh)


def test_noise_statistics_and_determinism():
    geom = MeasurementGeometry(n_detectors=256, n_time=512)
    t = geom.times
    p = PressureData(np.outer(np.cos(geom.detector_angles), np.sin(3 * t)), geom)
    assert add_noise(p, 0.0, seed=1) is p
    a = add_noise(p, 0.005, seed=11)
    b = add_noise(p, 0.005, seed=11)
    assert np.array_equal(a.values, b.values)
    eps = (a - p).values.ravel()
    assert eps.size >= 1e5
    target = 0.005 * np.abs(p.values).max()
    assert abs(eps.std() - target) / target < 0.05
    with pytest.raises(ParameterError):
        add_noise(p, -0.1, seed=0)


def test_noise_only_on_active_detectors():
    geom = MeasurementGeometry(arc_lo=np.pi, arc_hi=2 * np.pi, n_detectors=32, n_time=64)
    p = PressureData(np.ones((32, 64)), geom)
    noisy = add_noise(p, 0.1, seed=0)
    assert np.all(noisy.values[~geom.active] == 1.0)
    assert np.any(noisy.values[geom.active] != 1.0)


def test_preset_values():
    ls = preset_low_scattering()
    assert (ls.mu_a_star, ls.mu_s_star, ls.noise, ls.g, ls.n_theta) == (0.1, 0.1, 0.005, 0.8, 64)
    assert [i.mu_a for i in ls.phantom.inclusions] == [1.5, 3.0]
    assert ls.n_iters == 50
    lc = preset_low_contrast()
    assert lc.mu_a_star == 1.0 and lc.noise == 0.05
    assert [i.mu_a for i in lc.phantom.inclusions] == [1.1, 1.2]
    hs = preset_high_scattering()
    assert (hs.mu_a_star, hs.mu_s_star, hs.noise) == (1.0, 1.0, 0.005)
    assert sorted(i.mu_s for i in hs.phantom.inclusions) == [1.0, 8.0]
    assert all(i.mu_a == 2.0 for i in hs.phantom.inclusions)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_admissible_and_pure(grid, name):
    mesh = grid[0]
    a, b = get_preset(name), get_preset(name)
    assert a == b
    co = a.truth(mesh)
    assert np.all((co.mu_a >= 0) & (co.mu_a <= 4)) and np.all((co.mu_s >= 0) & (co.mu_s <= 10))
    # linearization point equals the phantom's boundary values
    assert a.mu_a_star == a.phantom.mu_a and a.mu_s_star == a.phantom.mu_s
    for inc in a.phantom.inclusions:
        assert np.all(np.asarray(inc.lo) >= -0.9) and np.all(np.asarray(inc.hi) <= 0.9)
    with pytest.raises(ConfigurationError):
        get_preset("nonexistent")


def test_inclusion_geometry():
    inc = preset_low_scattering().phantom.inclusions
    for box, c in zip(inc, BOX_CENTERS):
        assert np.allclose(np.asarray(box.hi) - np.asarray(box.lo), BOX_SIDE)
        assert np.allclose((np.asarray(box.hi) + np.asarray(box.lo)) / 2, c)


def test_rotation_group():
    base = half_data(preset_low_scattering())
    assert rotate_measurement(base, 0) == base
    sc = base
    for _ in range(4):
        sc = rotate_measurement(sc, 1)
    assert sc == base
    assert rotate_measurement(base, 1).sides == ("right",)
    assert rotate_measurement(base, 2).phantom == base.phantom
    with pytest.raises(ConfigurationError):
        rotate_measurement(base, 4)


def test_four_half_arcs_cover_the_circle():
    sc = four_half(preset_low_scattering().with_overrides(n_detectors=64))
    assert sc.sides == ("bottom", "right", "top", "left")
    geoms = sc.geometries()
    counts = np.sum([g.active for g in geoms], axis=0)
    assert np.all(counts >= 1)
    assert all(g.n_active == 32 for g in geoms)


def test_half_data_arc_on_illuminated_side():
    g = half_data(preset_low_scattering().with_overrides(n_detectors=64)).geometries()[0]
    assert np.all(g.detector_positions[g.active][:, 1] <= 1e-12)


def test_error_metrics_closed_forms(grid):
    mesh = grid[0]
    sc = preset_low_scattering()
    truth = sc.truth(mesh).mu_a
    masks = sc.phantom.inclusion_masks(mesh)
    m = error_metrics(truth, truth, mesh, masks)
    assert m["rel_l2"] == 0 and m["max_abs"] == 0
    c = 0.3
    m = error_metrics(truth + c, truth, mesh, masks)
    assert m["rel_l2"] == pytest.approx(c * 2.0 / np.sqrt(np.sum(mesh.areas * truth ** 2)), rel=1e-12)
    assert m["max_abs"] == pytest.approx(c)


def test_simulate_is_deterministic():
    sc = preset_low_scattering().with_overrides(n_subdiv=8, n_theta=8, n_detectors=32, n_time=64, seed=3)
    a, b = simulate(sc), simulate(sc)
    assert np.array_equal(a.data[0].values, b.data[0].values)
    assert a.noise_energy > 0
    clean = simulate(sc.with_overrides(noise=0.0))
    assert np.array_equal(clean.data[0].values, clean.clean[0].values)
    assert np.array_equal(clean.clean[0].values, a.clean[0].values)


def test_inverse_crime_inclusion_means():
    # data generated by the linearized model itself; only the iteration is tested
    sc = preset_low_scattering().with_overrides(n_subdiv=39, n_theta=32, n_detectors=128, n_time=256)
    mesh, ang = sc.mesh(), sc.angular()
    op = LinearizedForwardOperator(mesh, ang, sc.linearization_point(mesh), henyey_greenstein(sc.g, ang),
                                   sc.illumination_set(mesh, ang))
    truth = sc.truth(mesh).mu_a
    bg = op.background_data()
    v = [b + a for b, a in zip(bg, op.apply(truth - sc.mu_a_star))]
    res = landweber(v, bg, op, n_iters=sc.n_iters)
    means = error_metrics(res.mu_a, truth, mesh, sc.phantom.inclusion_masks(mesh))["inclusion_means"]
    for got, want in zip(means, (1.5, 3.0)):
        assert abs(got - want) / want <= 0.1
