"""Overdamped Langevin motion of the bead in the channel.

Coordinates: z is measured up from the bottom glass surface; the channel
roof (PDMS) sits at ``channel_height``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import BOLTZMANN_K, MU0
from .magnetostatics import MagneticParticle, as_vec3, coil_axial_gradient


@dataclass(frozen=True)
class FluidEnvironment:
    viscosity: float = 0.05  # Pa s
    temperature: float = 298.0  # K
    channel_height: float = 10e-6  # m
    # Phenomenological upward push, F0 * exp(-z / decay). F0 is calibrated so the
    # default bead sits 0.7 um above the glass at 50 mA coil current.
    surface_force_amplitude: float = 3.15e-14  # N
    surface_force_decay: float = 3e-6  # m

    def __post_init__(self):
        if self.viscosity <= 0:
            raise ValueError("viscosity must be > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.channel_height <= 0:
            raise ValueError("channel_height must be > 0")
        if self.surface_force_amplitude < 0:
            raise ValueError("surface_force_amplitude must be >= 0")
        if self.surface_force_decay <= 0:
            raise ValueError("surface_force_decay must be > 0")


@dataclass(frozen=True)
class ParticleState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position))


def stokes_drag_coefficient(viscosity: float, radius: float) -> float:
    if viscosity < 0 or radius < 0:
        raise ValueError("viscosity and radius must be non-negative")
    return 6.0 * math.pi * viscosity * radius


def diffusion_coefficient(temperature: float, drag: float) -> float:
    """Stokes-Einstein diffusion constant, m^2/s."""
    if drag <= 0:
        raise ValueError("drag must be > 0")
    if math.isinf(drag):
        return 0.0
    return BOLTZMANN_K * temperature / drag


def vertical_force(z: float, world, particle: MagneticParticle | None = None) -> float:
    """Net vertical force (N, positive up) on the bead centre at height ``z``."""
    particle = particle or world.particle
    fluid = world.fluid
    if not 0 <= z <= fluid.channel_height:
        raise ValueError(f"z = {z!r} outside channel [0, {fluid.channel_height!r}]")
    push = fluid.surface_force_amplitude * math.exp(-z / fluid.surface_force_decay)
    return push + particle.moment_magnitude * coil_axial_gradient(world.coil, z)


def equilibrium_height(current: float, world, particle: MagneticParticle | None = None) -> float:
    """Height where the surface push balances the coil gradient pull.

    Returns ``channel_height`` when the net force is upward everywhere (bead
    pinned under the roof) and the particle radius when it is downward
    everywhere above the bottom contact point.
    """
    if current < 0:
        raise ValueError("current must be >= 0")
    particle = particle or world.particle
    w = world.with_current(current)
    top = w.fluid.channel_height

    def force(z):
        return vertical_force(z, w, particle)

    if force(top) > 0:
        return top
    if force(particle.radius) <= 0:
        return particle.radius
    return brentq(force, particle.radius, top, xtol=1e-12)


def calibrate_surface_force(target_height: float, current: float, world,
                            particle: MagneticParticle | None = None) -> float:
    """Surface-force amplitude that puts the equilibrium at ``target_height`` for ``current``."""
    particle = particle or world.particle
    pull = -particle.moment_magnitude * coil_axial_gradient(world.coil.with_current(current), target_height)
    return pull * math.exp(target_height / world.fluid.surface_force_decay)


def z_bounds(world, particle: MagneticParticle | None = None) -> tuple[float, float]:
    particle = particle or world.particle
    return particle.radius, world.fluid.channel_height - particle.radius


def step_overdamped(state: ParticleState, flow_velocity, force, dt: float, rng, world) -> ParticleState:
    """One Euler-Maruyama step: advection by the flow plus drift force/drag plus Brownian kick."""
    pos = step_ensemble(state.position[None, :], flow_velocity, force, dt, rng, world)[0]
    return ParticleState(pos, state.time + dt)


def step_ensemble(positions, flow_velocity, force, dt: float, rng, world) -> np.ndarray:
    """:func:`step_overdamped` for independent walkers at ``positions`` (N, 3).

    ``force`` is one vector for all walkers or an (N, 3) array. The noise is
    drawn as one (N, 3) block, so N = 1 reproduces the single-walker stream.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    pos = np.asarray(positions, dtype=float)
    flow = as_vec3(flow_velocity)
    f = np.asarray(force, dtype=float)
    amp = math.sqrt(2.0 * world.diffusion * dt)
    xi = rng.standard_normal(pos.shape)
    zmin, zmax = z_bounds(world)
    out = pos + (flow + f / world.drag) * dt + amp * xi
    out[:, 2] = np.clip(out[:, 2], zmin, zmax)
    return out


def advance(state: ParticleState, flow_velocity, duration: float, world, rng) -> ParticleState:
    """Integrate over ``duration`` with a constant planar flow and the vertical force field.

    Same update as repeated :func:`step_overdamped` calls with force
    (0, 0, vertical_force(z)) at the world's time step (agreement to rounding),
    but the lateral sums are done in bulk and z runs in a scalar loop.
    """
    dt = world.dt
    n = max(1, int(round(duration / dt)))
    flow = as_vec3(flow_velocity)
    drag = world.drag
    amp = math.sqrt(2.0 * world.diffusion * dt)
    zmin, zmax = z_bounds(world)
    fluid = world.fluid
    f0, decay = fluid.surface_force_amplitude, fluid.surface_force_decay
    coil = world.coil
    a2 = coil.loop_radius**2
    # m * dB/dz = pull * d / (a^2 + d^2)^2.5 with d = standoff + z
    pull = -3.0 * world.particle.moment_magnitude * MU0 * coil.turns * coil.current * a2 / 2.0
    standoff = coil.standoff
    noise = rng.standard_normal((n, 3))
    x = state.position[0] + n * flow[0] * dt + amp * noise[:, 0].sum()
    y = state.position[1] + n * flow[1] * dt + amp * noise[:, 1].sum()
    z = float(state.position[2])
    vz = float(flow[2])
    kicks = (amp * noise[:, 2]).tolist()
    for kick in kicks:
        d = standoff + z
        fz = f0 * math.exp(-z / decay) + pull * d / (a2 + d * d) ** 2.5
        z = min(max(z + (vz + fz / drag) * dt + kick, zmin), zmax)
    return ParticleState(np.array([x, y, z]), state.time + n * dt)
