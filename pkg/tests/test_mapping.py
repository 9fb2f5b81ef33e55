import filecmp
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvfluidics.constants import GAMMA_NV
from nvfluidics.control import ControllerConfig
from nvfluidics.magnetostatics import MagneticParticle, NVSensor, splitting_to_field
from nvfluidics.mapping import (
    DegenerateGeometry,
    FieldMapSample,
    ScanPlan,
    acquire_map,
    beta_angle_error,
    delta_field_from_splittings,
    fit_dipole_map,
    predicted_delta_field,
    predicted_map_grid,
    samples_from_csv,
    samples_to_csv,
)
from nvfluidics.odmr import ODMRConfig, fit_esr, simulate_lockin_spectrum
from nvfluidics.world import DeviceWorld

Z0 = 0.7e-6
K = 1e-7
BETA_TILT = np.array([0.5, 0.2, 0.843]) / np.linalg.norm([0.5, 0.2, 0.843])
REF = np.array([-10e-6, 0.0])


def synthetic_samples(m, beta, offsets, sigma=5e-6, ref=REF):
    pred = predicted_delta_field(np.array(offsets), Z0, m, beta, ref)
    return [FieldMapSample(o, p, sigma) for o, p in zip(offsets, pred)]


def test_delta_field_anchors():
    assert delta_field_from_splittings(42.3e6, 42.3e6) == 0.0
    oracle = lambda a, b: (a - b) / (2 * 27.9924e9)
    assert delta_field_from_splittings(42.3e6, 40.7e6) == pytest.approx(oracle(42.3e6, 40.7e6), rel=5e-3)
    assert delta_field_from_splittings(42.3e6, 40.7e6) * 1e6 == pytest.approx(28.6, rel=5e-3)
    assert delta_field_from_splittings(42.3e6, 34.2e6) * 1e6 == pytest.approx(144.7, rel=5e-3)
    assert delta_field_from_splittings(40e6, 42e6) < 0


def test_prediction_zero_moment():
    offs = np.random.default_rng(0).uniform(-5e-6, 5e-6, (20, 2))
    np.testing.assert_array_equal(predicted_delta_field(offs, Z0, 0.0, BETA_TILT), 0.0)


def test_prediction_on_axis():
    m = 1e-14
    val = predicted_delta_field(np.zeros(2), Z0, m, [0, 0, 1])
    # directly beneath, the dipole field adds to an upward coil field
    assert val == pytest.approx(-2 * K * m / Z0**3, rel=1e-12)


@settings(max_examples=100)
@given(st.floats(0.0, 20e-6), st.floats(0, 2 * math.pi))
def test_sign_convention_magic_radius(r, phi):
    # with beta = z the reduction is positive exactly outside r = sqrt(2) z0, where the stray field
    # at the NV turns against the vertical moment
    magic = math.sqrt(2) * Z0
    if abs(r - magic) < 1e-9:
        return
    val = predicted_delta_field(np.array([r * math.cos(phi), r * math.sin(phi)]), Z0, 1e-14, [0, 0, 1])
    assert (val > 0) == (r > magic)


def test_reported_samples_positive_beyond_magic_radius():
    for r in (1.5e-6, 3.62e-6, 7.25e-6):
        assert predicted_delta_field(np.array([r, 0.0]), Z0, 1e-14, [0, 0, 1]) > 0


def test_far_field_decay():
    near = predicted_delta_field(np.array([1.5e-6, 0.0]), Z0, 1e-14, [0, 0, 1])
    far = predicted_delta_field(np.array([7.25e-6, 0.0]), Z0, 1e-14, [0, 0, 1])
    assert abs(far) < 0.03 * abs(near)


@settings(max_examples=50)
@given(st.floats(0.01, 100.0))
def test_scale_covariance_of_prediction(s):
    offs = np.array([[1e-6, 0.3e-6], [2e-6, -1e-6], [0.0, 4e-6]])
    np.testing.assert_allclose(predicted_delta_field(offs, Z0, s * 1e-14, BETA_TILT),
                               s * predicted_delta_field(offs, Z0, 1e-14, BETA_TILT), rtol=1e-12)


def test_scale_covariance_of_fit():
    offs = ScanPlan().offsets
    base = fit_dipole_map(synthetic_samples(1e-14, BETA_TILT, offs), Z0, REF)
    s = 3.7
    scaled = [FieldMapSample(x.offset, s * x.delta_B, s * x.sigma_delta_B) for x in synthetic_samples(1e-14, BETA_TILT, offs)]
    fit = fit_dipole_map(scaled, Z0, REF)
    assert fit.moment_magnitude == pytest.approx(s * base.moment_magnitude, rel=1e-8)
    np.testing.assert_allclose(fit.nv_axis, base.nv_axis, atol=1e-8)


@pytest.mark.parametrize("m", [3e-15, 1e-14, 4e-14])
@pytest.mark.parametrize("beta", [BETA_TILT, np.array([0.0, 0.0, 1.0]), np.array([-0.6, 0.3, 0.74])])
def test_noiseless_round_trip(m, beta):
    beta = beta / np.linalg.norm(beta)
    fit = fit_dipole_map(synthetic_samples(m, beta, ScanPlan().offsets), Z0, REF)
    assert fit.moment_magnitude == pytest.approx(m, rel=1e-3)
    assert math.degrees(beta_angle_error(fit.nv_axis, beta)) < 0.5
    assert fit.residual_norm < 1e-6
    assert np.linalg.norm(fit.nv_axis) == pytest.approx(1.0, rel=1e-12)


def test_negative_moment_is_reflected():
    samples = synthetic_samples(-1e-14, BETA_TILT, ScanPlan().offsets)
    fit = fit_dipole_map(samples, Z0, REF)
    assert fit.moment_magnitude == pytest.approx(1e-14, rel=1e-6)
    np.testing.assert_allclose(fit.nv_axis, -BETA_TILT, atol=1e-6)


def test_single_line_is_degenerate():
    offs = ScanPlan.along_line([1e-6, 2e-6, 3e-6, 4e-6, 5e-6]).offsets
    with pytest.raises(DegenerateGeometry, match="degenerate geometry"):
        fit_dipole_map(synthetic_samples(1e-14, BETA_TILT, offs), Z0, REF)


def test_too_few_samples():
    offs = [np.array([1e-6, 0]), np.array([0, 2e-6]), np.array([3e-6, 0])]
    with pytest.raises(ValueError, match=">= 4"):
        fit_dipole_map(synthetic_samples(1e-14, BETA_TILT, offs), Z0, REF)
    offs = [np.array([1e-6, 0]), np.array([0, 1e-6]), np.array([-1e-6, 0]), np.array([0, 2e-6])]
    with pytest.raises(ValueError, match="distinct radii"):
        fit_dipole_map(synthetic_samples(1e-14, BETA_TILT, offs), Z0, REF)


def test_dipole_validity_guard():
    z0 = 0.3e-6
    offs = [np.array([0.1e-6, 0.0]), np.array([2e-6, 0]), np.array([0, 3e-6]), np.array([4e-6, 1e-6])]
    samples = [FieldMapSample(o, 1e-6, 1e-6) for o in offs]
    with pytest.raises(ValueError, match="particle radius"):
        fit_dipole_map(samples, z0)


def test_flagged_samples_excluded():
    samples = synthetic_samples(1e-14, BETA_TILT, ScanPlan().offsets)
    samples.append(FieldMapSample([9e-6, 9e-6], math.nan, math.nan, "timeout"))
    fit = fit_dipole_map(samples, Z0, REF)
    assert fit.n_samples == len(ScanPlan().offsets)


def test_reported_three_points_consistent():
    # per-sample sigma at nominal noise: reference and sample splittings each carry a fit sigma
    grid = ODMRConfig().grid(2.87e9)
    sig = np.median([
        fit_esr(simulate_lockin_spectrum(grid, splitting_to_field(42.3e6), NVSensor(),
                                         rng=np.random.default_rng(s))).sigma_splitting
        for s in range(10)
    ])
    sigma = math.sqrt(2) * sig / (2 * GAMMA_NV)
    ref = np.array([7.25e-6, 0.0])
    samples = [
        FieldMapSample(ref, 0.0, sigma),
        FieldMapSample([3.62e-6, 0.0], delta_field_from_splittings(42.3e6, 40.7e6), sigma),
        FieldMapSample([1.50e-6, 0.0], delta_field_from_splittings(42.3e6, 34.2e6), sigma),
    ]
    # three collinear points cannot pin a free axis
    with pytest.raises(ValueError):
        fit_dipole_map(samples, Z0, ref)
    fit = fit_dipole_map(samples, Z0, ref, fixed_axis=[0, 0, 1])
    for s in samples:
        pred = predicted_delta_field(s.offset, Z0, fit.moment_magnitude, fit.nv_axis, ref)
        assert abs(s.delta_B - pred) < 2 * s.sigma_delta_B
    assert 1e-14 < fit.moment_magnitude < 2e-14


def test_map_grid_zero_and_symmetry():
    x = 0.25e-6 * np.arange(-20, 21)
    assert np.all(predicted_map_grid(0.0, [0, 0, 1], Z0, x, x) == 0.0)
    grid = predicted_map_grid(1e-14, [0, 0, 1], Z0, x, x)
    xx, yy = np.meshgrid(x, x)
    radial = predicted_delta_field(np.column_stack([np.hypot(xx, yy).ravel(), np.zeros(xx.size)]), Z0, 1e-14,
                                   [0, 0, 1]).reshape(xx.shape)
    np.testing.assert_allclose(grid, radial, rtol=1e-12, atol=1e-12 * np.abs(grid).max())
    i, j = np.unravel_index(np.argmax(np.abs(grid)), grid.shape)
    assert x[i] == 0.0 and x[j] == 0.0
    tilted = predicted_map_grid(1e-14, BETA_TILT, Z0, x, x)
    assert not np.allclose(tilted, tilted.T)


def test_scan_plan_invariants():
    with pytest.raises(ValueError):
        ScanPlan(reference_offset=[3e-6, 0.0])
    with pytest.raises(ValueError):
        ScanPlan(offsets=[[1e-6, 0], [1e-6, 0]])
    with pytest.raises(ValueError):
        ScanPlan(z0=0.0)
    plan = ScanPlan()
    assert len(plan.offsets) == 14
    radii = sorted({round(float(np.hypot(*o)) * 1e9) for o in plan.offsets})
    assert radii[0] == 1000 and radii[-1] == 7250


@pytest.fixture(scope="module")
def tilted_world():
    return DeviceWorld(nv=NVSensor(axis=BETA_TILT))


def test_height_precondition(tilted_world):
    with pytest.raises(ValueError, match="equilibrium height"):
        acquire_map(tilted_world, ScanPlan(z0=2e-6), seed=0)


def test_null_experiment():
    w = DeviceWorld(particle=MagneticParticle(field_moment=0.0), nv=NVSensor(axis=BETA_TILT))
    samples = acquire_map(w, ScanPlan(), seed=3)
    assert all(s.usable for s in samples)
    for s in samples:
        assert abs(s.delta_B) < 3 * s.sigma_delta_B


def test_closed_loop_matches_forward_model(tilted_world):
    plan = ScanPlan.along_line([1e-6, 1.5e-6, 2e-6, 3e-6, 4e-6, 5e-6, 7e-6])
    samples = acquire_map(tilted_world, plan, seed=11)
    m = tilted_world.particle.stray_moment
    for s in samples:
        assert s.usable
        pred = predicted_delta_field(s.offset, plan.z0, m, BETA_TILT, samples.reference_offset)
        assert abs(s.delta_B - pred) < 3 * s.sigma_delta_B


def test_acquire_determinism(tilted_world, tmp_path):
    plan = ScanPlan.along_line([1.5e-6, 3e-6])
    a = acquire_map(tilted_world, plan, seed=5)
    b = acquire_map(tilted_world, plan, seed=5)
    samples_to_csv(a, tmp_path / "a.csv")
    samples_to_csv(b, tmp_path / "b.csv")
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "rx_um,ry_um,deltaB_uT,sigma_uT,flag"
    back = samples_from_csv(tmp_path / "a.csv")
    assert [s.flag for s in back] == [s.flag for s in a]
    np.testing.assert_allclose([s.delta_B for s in back], [s.delta_B for s in a], rtol=1e-15)


def test_steering_timeout_flags_sample(tilted_world):
    ctrl = ControllerConfig(waypoint_timeout=0.3)
    plan = ScanPlan.along_line([1.5e-6, 3e-6])
    samples = acquire_map(tilted_world, plan, controller=ctrl, seed=0)
    assert [s.flag for s in samples] == ["timeout", "timeout"]
    assert all(math.isnan(s.delta_B) for s in samples)


def test_fit_on_acquired_map(tilted_world):
    samples = acquire_map(tilted_world, ScanPlan(), seed=2)
    fit = fit_dipole_map(samples, ScanPlan().z0)
    m = tilted_world.particle.stray_moment
    assert abs(fit.moment_magnitude - m) < 3 * fit.parameter_sigmas["m"]
    assert beta_angle_error(fit.nv_axis, BETA_TILT) < 3 * fit.parameter_sigmas["beta_angle"]
    keys = [line.split("=")[0] for line in fit.to_text().splitlines()]
    assert keys == ["m_Am2", "beta_x", "beta_y", "beta_z", "sigma_m", "sigma_theta_deg", "residual_norm"]
