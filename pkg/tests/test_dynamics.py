import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nvfluidics.dynamics import (
    FluidEnvironment,
    ParticleState,
    advance,
    calibrate_surface_force,
    diffusion_coefficient,
    equilibrium_height,
    step_overdamped,
    stokes_drag_coefficient,
    vertical_force,
    z_bounds,
)
from nvfluidics.world import DeviceWorld

KT298 = 1.380649e-23 * 298.0


@pytest.fixture
def world():
    return DeviceWorld()


def test_stokes_drag():
    assert stokes_drag_coefficient(0.05, 0.5e-6) == pytest.approx(4.712e-7, rel=1e-4)
    assert stokes_drag_coefficient(0.0, 0.5e-6) == 0.0
    assert stokes_drag_coefficient(0.1, 0.5e-6) == pytest.approx(2 * stokes_drag_coefficient(0.05, 0.5e-6))
    assert stokes_drag_coefficient(0.05, 1e-6) == pytest.approx(2 * stokes_drag_coefficient(0.05, 0.5e-6))


def test_diffusion_coefficient():
    d = diffusion_coefficient(298.0, 4.712e-7)
    assert d == pytest.approx(8.73e-15, rel=1e-3)
    assert diffusion_coefficient(298.0, math.inf) == 0.0
    assert math.sqrt(2 * d * 0.1) == pytest.approx(41.8e-9, rel=1e-3)


def test_world_diffusion_matches_stokes_einstein(world):
    assert world.diffusion == pytest.approx(KT298 / (6 * math.pi * 0.05 * 0.5e-6), rel=1e-12)
    assert world.replace(brownian=False).diffusion == 0.0


def test_vertical_force_without_magnet_points_up(world):
    w = world.with_current(0.0)
    for z in np.linspace(0, w.fluid.channel_height, 25):
        assert vertical_force(z, w) > 0


def test_equilibrium_is_stable(world):
    z = equilibrium_height(0.05, world)
    assert abs(vertical_force(z, world)) < 1e-3 * world.fluid.surface_force_amplitude
    h = 1e-8
    assert (vertical_force(z + h, world) - vertical_force(z - h, world)) / (2 * h) < 0


def test_equilibrium_calibration_anchor(world):
    assert equilibrium_height(0.05, world) == pytest.approx(0.7e-6, abs=0.01e-6)
    f0 = calibrate_surface_force(0.7e-6, 0.05, world)
    assert f0 == pytest.approx(world.fluid.surface_force_amplitude, rel=0.01)


def test_equilibrium_limits(world):
    assert equilibrium_height(0.0, world) == world.fluid.channel_height
    assert equilibrium_height(0.1, world) == world.particle.radius


def test_equilibrium_monotone_in_current(world):
    currents = np.linspace(0, 0.1, 20)
    heights = [equilibrium_height(i, world) for i in currents]
    assert all(b <= a for a, b in zip(heights, heights[1:]))
    assert heights[0] > heights[-1]


def test_equilibrium_bisection_resolution(world):
    # the root is bracketed to 1 nm; the force there must change sign across +-1 nm
    w = world
    z = equilibrium_height(0.03, w)
    assert vertical_force(z - 1e-9, w.with_current(0.03)) > 0 > vertical_force(z + 1e-9, w.with_current(0.03))


def test_step_deterministic_advection():
    w = DeviceWorld(brownian=False)
    s0 = ParticleState([0.0, 0.0, 5e-6])
    s1 = step_overdamped(s0, (1e-6, 0, 0), (0, 0, 0), 1.0, np.random.default_rng(0), w)
    np.testing.assert_array_equal(s1.position - s0.position, [1e-6, 0.0, 0.0])
    assert s1.time == 1.0


def test_step_rejects_bad_dt(world):
    with pytest.raises(ValueError):
        step_overdamped(ParticleState(), (0, 0, 0), (0, 0, 0), 0.0, np.random.default_rng(0), world)


def test_step_ensemble_variance(world):
    rng = np.random.default_rng(11)
    dt = 1e-2
    s0 = ParticleState([0.0, 0.0, 5e-6])
    xs = np.array([step_overdamped(s0, (0, 0, 0), (0, 0, 0), dt, rng, world).position[0] for _ in range(10_000)])
    assert np.var(xs) == pytest.approx(2 * world.diffusion * dt, rel=0.05)


def test_same_seed_bit_identical(world):
    def run(seed):
        rng = np.random.default_rng(seed)
        s = ParticleState([0.0, 0.0, 2e-6])
        out = []
        for _ in range(50):
            s = advance(s, (1e-6, -2e-6, 0.0), 0.1, world, rng)
            out.append(s.position.copy())
        return np.array(out)

    np.testing.assert_array_equal(run(3), run(3))
    assert not np.array_equal(run(3), run(4))


def test_advance_matches_repeated_steps(world):
    start = ParticleState([1e-6, -1e-6, 2e-6])
    flow = (2e-6, 1e-6, 0.0)
    fast = advance(start, flow, 0.1, world, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    s = start
    for _ in range(100):
        s = step_overdamped(s, flow, (0, 0, vertical_force(s.position[2], world)), world.dt, rng, world)
    np.testing.assert_allclose(fast.position, s.position, rtol=1e-12, atol=1e-18)
    assert fast.time == pytest.approx(s.time)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 10e-6), st.floats(-1e-9, 1e-9), st.integers(0, 2**32 - 1))
def test_wall_clamp(z0, fz, seed):
    w = DeviceWorld()
    zmin, zmax = z_bounds(w)
    s = ParticleState([0.0, 0.0, z0])
    rng = np.random.default_rng(seed)
    for _ in range(5):
        s = step_overdamped(s, (0, 0, 0), (0, 0, fz), 1e-3, rng, w)
        assert zmin <= s.position[2] <= zmax
    s = advance(s, (0, 0, 0), 0.05, w, rng)
    assert zmin <= s.position[2] <= zmax


def test_msd_slope_and_chi_square(world):
    n_walkers, n_steps, dt = 10_000, 10, 1e-2
    rng = np.random.default_rng(2024)
    start = ParticleState([0.0, 0.0, 5e-6])
    disp = np.empty((n_walkers, n_steps, 2))
    for k in range(n_walkers):
        s = start
        for j in range(n_steps):
            s = step_overdamped(s, (0, 0, 0), (0, 0, 0), dt, rng, world)
            disp[k, j] = s.position[:2]
    t = dt * np.arange(1, n_steps + 1)
    d = world.diffusion
    for axis in (0, 1):
        msd = np.mean(disp[:, :, axis] ** 2, axis=0)
        slope = (t @ msd) / (t @ t)
        assert slope == pytest.approx(2 * d, rel=0.05)
        # N * MSD / (2 D t) ~ chi2(N) at the first lag, where increments are independent
        q = n_walkers * msd[0] / (2 * d * t[0])
        assert stats.chi2.ppf(0.025, n_walkers) < q < stats.chi2.ppf(0.975, n_walkers)


@pytest.mark.parametrize("offset", [1e-6, -1e-6])
def test_equilibrium_is_attracting(world, offset):
    current = 0.03
    w = world.with_current(current)
    z_star = equilibrium_height(current, w)
    h = 1e-8
    stiffness = -(vertical_force(z_star + h, w) - vertical_force(z_star - h, w)) / (2 * h)
    sigma = math.sqrt(KT298 / stiffness)
    rng = np.random.default_rng(17 if offset > 0 else 18)
    s = ParticleState([0.0, 0.0, z_star + offset])
    zs = []
    for _ in range(600):
        s = advance(s, (0, 0, 0), 0.5, w, rng)
        zs.append(s.position[2])
    assert abs(np.mean(zs[len(zs) // 2:]) - z_star) < 3 * sigma


def test_fluid_invariants():
    with pytest.raises(ValueError):
        FluidEnvironment(viscosity=0)
    with pytest.raises(ValueError):
        FluidEnvironment(surface_force_decay=0)
    with pytest.raises(ValueError):
        equilibrium_height(-0.01, DeviceWorld())


def test_ensemble_step_matches_single_walker_steps():
    from nvfluidics.dynamics import ParticleState, step_ensemble, step_overdamped
    from nvfluidics.world import DeviceWorld

    world = DeviceWorld()
    start = np.array([[0.0, 0.0, 1e-6], [1e-6, -2e-6, 2e-6], [3e-6, 1e-6, 1.5e-6]])
    force = np.array([1e-15, -2e-15, 0.0])
    together = step_ensemble(start, [1e-6, 0, 0], force, 0.01, np.random.default_rng(5), world)
    rng = np.random.default_rng(5)
    one_by_one = [step_overdamped(ParticleState(p, 0.0), [1e-6, 0, 0], force, 0.01, rng, world).position
                  for p in start]
    np.testing.assert_array_equal(together, np.array(one_by_one))
