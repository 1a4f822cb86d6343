import numpy as np
import pytest

from oracles import BUMP_CENTER, BUMP_RADIUS, bump_nodal, smooth_phantom, wave_bump_oracle
from qpat.acoustics import (
    MeasurementGeometry,
    PressureData,
    WaveOperator,
    default_cutoff,
    distance_to_arc,
    time_reversal,
    uniqueness_set,
    visible,
    wave_adjoint,
    wave_forward,
)
from qpat.checks import smooth_pressure
from qpat.errors import ConfigurationError
from qpat.geometry import build_uniform_mesh

GEOM = MeasurementGeometry()


@pytest.fixture(scope="module")
def mid():
    mesh = build_uniform_mesh(39)
    return mesh, WaveOperator(mesh, GEOM)


@pytest.fixture(scope="module")
def coarse():
    mesh = build_uniform_mesh(20)
    geom = MeasurementGeometry(n_detectors=64, n_time=256)
    return mesh, geom, WaveOperator(mesh, geom)


# geometry


def test_geometry_validation():
    with pytest.raises(ConfigurationError):
        MeasurementGeometry(radius=1.4)
    with pytest.raises(ConfigurationError):
        MeasurementGeometry(arc_lo=2.0, arc_hi=1.0)
    with pytest.raises(ConfigurationError):
        MeasurementGeometry(time_horizon=0.0)
    with pytest.raises(ConfigurationError):
        MeasurementGeometry(n_time=2)
    with pytest.raises(ConfigurationError):
        PressureData(np.zeros((3, 3)), GEOM)


def test_half_arc_has_half_the_detectors():
    g = GEOM.with_arc(np.pi, 2 * np.pi)
    assert g.n_active == GEOM.n_detectors // 2
    assert np.all(g.detector_positions[g.active][:, 1] <= 1e-12)
    wrapped = GEOM.with_arc(1.5 * np.pi, 2.5 * np.pi)
    assert wrapped.n_active == GEOM.n_detectors // 2
    assert wrapped.active[0]


# forward


def test_zero_heating_zero_pressure(coarse):
    mesh, geom, W = coarse
    assert np.all(W.forward(np.zeros(mesh.n_nodes)).values == 0)


def test_forward_linear(coarse):
    mesh, geom, W = coarse
    rng = np.random.default_rng(0)
    a, b = smooth_phantom(mesh, rng), smooth_phantom(mesh, rng)
    lhs = W.forward(3 * a - b).values
    rhs = 3 * W.forward(a).values - W.forward(b).values
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_finite_speed(mid):
    mesh, W = mid
    p = W.forward(bump_nodal(mesh)).values
    # support of the nodal interpolant reaches at most one cell beyond the bump
    reach = BUMP_RADIUS + mesh.h
    dist = np.linalg.norm(GEOM.detector_positions - BUMP_CENTER, axis=1) - reach
    early = GEOM.times[None, :] < dist[:, None]
    assert early.any()
    assert np.abs(p[early]).max() <= 1e-10 * np.abs(p).max()


def test_forward_against_refined_quadrature(mid):
    mesh, W = mid
    p = W.forward(bump_nodal(mesh)).values
    coarse_mesh = build_uniform_mesh(20)
    pc = WaveOperator(coarse_mesh, GEOM).forward(bump_nodal(coarse_mesh)).values
    err, err_c = [], []
    for d in (0, 37, 64, 128, 200):
        o = wave_bump_oracle(GEOM.detector_positions[d], GEOM.times)
        err.append(np.linalg.norm(p[d] - o) / np.linalg.norm(o))
        err_c.append(np.linalg.norm(pc[d] - o) / np.linalg.norm(o))
    # the 1% full-resolution criterion lives in the acceptance suite; here the
    # intermediate mesh must be within 2% and better than the coarse one
    assert max(err) < 0.02
    assert max(err) < max(err_c)


def test_translation_shifts_arrival(coarse):
    mesh, geom, W = coarse
    delta = np.array([0.15, 0.1])
    p0 = W.forward(bump_nodal(mesh)).values
    p1 = W.forward(bump_nodal(mesh, BUMP_CENTER + delta)).values

    def arrival(p):
        hit = np.abs(p) > 1e-3 * np.abs(p).max()
        return geom.times[np.argmax(hit, axis=1)]

    shift = np.abs(arrival(p1) - arrival(p0))
    assert np.all(shift <= np.linalg.norm(delta) + mesh.h + 2 * geom.dt)


def test_energy_bound_stable_under_refinement():
    geom = MeasurementGeometry(n_detectors=64, n_time=256)
    ratios = []
    for n in (10, 20, 40):
        mesh = build_uniform_mesh(n)
        h = bump_nodal(mesh)
        p = WaveOperator(mesh, geom).forward(h)
        ratios.append(np.sqrt(p.inner(p) / np.sum(mesh.lumped_mass * h * h)))
    # the ratio settles as the bump becomes resolved instead of growing
    steps = np.abs(np.diff(ratios))
    assert steps[1] < steps[0]
    assert steps[1] / ratios[-1] < 0.05


def test_inactive_detectors_are_zero(coarse):
    mesh, geom, _ = coarse
    g = geom.with_arc(0.0, np.pi)
    p = wave_forward(bump_nodal(mesh), mesh, g).values
    assert np.all(p[~g.active] == 0)
    assert np.abs(p[g.active]).max() > 0


def test_transpose_exact(coarse):
    mesh, geom, W = coarse
    rng = np.random.default_rng(1)
    h = rng.standard_normal(mesh.n_nodes)
    v = rng.standard_normal((geom.n_detectors, geom.n_time))
    a = W.forward(h).values
    assert abs(np.sum(a * v) - h @ W.transpose(v)) <= 1e-12 * np.linalg.norm(a) * np.linalg.norm(v)


# continuous adjoint


def test_adjoint_of_zero(coarse):
    mesh, geom, _ = coarse
    assert np.all(wave_adjoint(PressureData(np.zeros((geom.n_detectors, geom.n_time)), geom), mesh) == 0)


def test_adjoint_linear(coarse):
    mesh, geom, W = coarse
    rng = np.random.default_rng(2)
    a, b = smooth_pressure(geom, rng), smooth_pressure(geom, rng)
    lhs = W.adjoint(2 * a - b)
    assert np.abs(lhs - 2 * W.adjoint(a) + W.adjoint(b)).max() <= 1e-12 * np.abs(lhs).max()


def test_adjoint_inner_products(coarse):
    mesh, geom, W = coarse
    rng = np.random.default_rng(3)
    for _ in range(3):
        h = smooth_phantom(mesh, rng)
        v = PressureData(smooth_pressure(geom, rng), geom)
        Wh = W.forward(h)
        rhs = np.sum(mesh.lumped_mass * h * W.adjoint(v))
        assert abs(Wh.inner(v) - rhs) <= 1e-2 * np.sqrt(Wh.inner(Wh) * v.inner(v))


def test_adjoint_late_time_data_is_small():
    # in two dimensions the adjoint keeps a weak tail after the last
    # characteristic; it must be small against the response to early data and
    # decay as the data moves later
    mesh = build_uniform_mesh(20)
    geom = MeasurementGeometry(n_detectors=64, n_time=400, time_horizon=5.0)
    t, a = geom.times, geom.detector_angles
    latest = 2 * np.sqrt(2) + geom.radius - np.sqrt(2)

    def response(t0):
        s = np.clip((t - t0) / 1.0, 0, 1)
        v = np.cos(a)[:, None] * (np.sin(np.pi * s) ** 4)[None, :]
        return np.abs(wave_adjoint(PressureData(v, geom), mesh)).max()

    early = response(0.5)
    late = [response(t0) for t0 in (latest + 0.3, latest + 0.9)]
    assert late[0] < 0.05 * early
    assert late[1] < late[0]


# time reversal


def test_time_reversal_zero_cases(coarse):
    mesh, geom, W = coarse
    zero = PressureData(np.zeros((geom.n_detectors, geom.n_time)), geom)
    assert np.all(time_reversal(zero, mesh) == 0)
    g = W.forward(bump_nodal(mesh))
    assert np.all(time_reversal(g, mesh, chi=np.zeros_like(g.values)) == 0)


def test_time_reversal_cfl_error(coarse):
    mesh, geom, W = coarse
    with pytest.raises(ConfigurationError):
        time_reversal(W.forward(bump_nodal(mesh)), mesh, cfl=0.6)


def test_time_reversal_recovers_smooth_phantom(mid):
    mesh, W = mid
    h = smooth_phantom(mesh, np.random.default_rng(1))
    rec = time_reversal(W.forward(h), mesh, chi=default_cutoff(GEOM, delta=0.2))
    assert np.linalg.norm(rec - h) / np.linalg.norm(h) <= 0.1


# visibility and uniqueness


def line_hits_arc(x, xi, geom, n=200001):
    # brute force: sample the line segment of length 2T and test for a sample on the arc
    s = np.linspace(-geom.time_horizon, geom.time_horizon, n)
    y = np.asarray(x) + s[:, None] * np.asarray(xi) / np.linalg.norm(xi)
    r = np.linalg.norm(y, axis=1)
    cross = np.nonzero(np.diff(np.sign(r - geom.radius)))[0]
    ang = np.mod(np.arctan2(y[cross, 1], y[cross, 0]), 2 * np.pi)
    return bool(np.any(np.mod(ang - geom.arc_lo, 2 * np.pi) <= geom.arc_span))


def test_full_circle_sees_everything():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (500, 2))
    a = rng.uniform(0, 2 * np.pi, 500)
    xi = np.column_stack([np.cos(a), np.sin(a)])
    assert np.all(visible(x, xi, GEOM))
    assert np.all(uniqueness_set(GEOM, x))


def test_half_circle_horizontal_example():
    g = GEOM.with_arc(0.0, np.pi)
    x, xi = np.array([0.0, -0.5]), np.array([1.0, 0.0])
    assert bool(visible(x, xi, g)) == line_hits_arc(x, xi, g)
    # the horizontal line meets the circle only below the x-axis
    assert not visible(x, xi, g)
    assert visible(np.array([0.0, 0.5]), xi, g)


def test_visibility_against_brute_force():
    g = GEOM.with_arc(0.3, 2.4)
    rng = np.random.default_rng(4)
    for _ in range(60):
        x = rng.uniform(-1, 1, 2)
        a = rng.uniform(0, np.pi)
        xi = np.array([np.cos(a), np.sin(a)])
        assert bool(visible(x, xi, g)) == line_hits_arc(x, xi, g)


def test_empty_arc():
    g = GEOM.with_arc(1.0, 1.0)
    assert g.n_active == 0
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert not np.any(visible(x, np.array([1.0, 0.0]), g))
    assert not np.any(uniqueness_set(g, x))


def test_distance_to_arc_short_horizon():
    g = MeasurementGeometry(arc_lo=0.0, arc_hi=np.pi / 2, time_horizon=0.5)
    pts = np.array([[1.0, 1.0], [-1.0, -1.0]])
    d = distance_to_arc(pts, g)
    assert d[0] == pytest.approx(1.5 - np.sqrt(2), abs=1e-12)
    assert d[1] == pytest.approx(np.hypot(1.0, 2.5), abs=1e-12)
    assert list(uniqueness_set(g, pts)) == [True, False]


# io


def test_pressure_csv_roundtrip(tmp_path, coarse):
    mesh, geom, W = coarse
    p = W.forward(bump_nodal(mesh))
    path = p.write_csv(tmp_path / "p.csv")
    assert path.read_text().splitlines()[0] == "detector,angle,time,value"
    back = PressureData.read_csv(path, geom)
    assert np.array_equal(back.values, p.values)
