"""Magnetic field models: point dipole, coil magnet, NV projection and Zeeman lines.

All quantities are SI. Vectors are length-3 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import GAMMA_NV, MU0, MU0_OVER_4PI

# Linear Zeeman model is only used well below D0 / gamma (~0.1 T).
ZEEMAN_FIELD_LIMIT = 10e-3


class FieldDomainError(ValueError):
    """Raised when a field model is evaluated outside its domain."""


def as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector components must be finite")
    return arr


def unit(v) -> np.ndarray:
    """Normalize ``v``; raises on a zero vector."""
    arr = as_vec3(v)
    n = np.linalg.norm(arr)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return arr / n


def _check_unit(v, name: str) -> np.ndarray:
    arr = as_vec3(v)
    if abs(np.linalg.norm(arr) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit vector (|{name}| = {np.linalg.norm(arr)!r})")
    return arr


@dataclass(frozen=True)
class MagneticParticle:
    """Spherical magnetic bead.

    ``moment_magnitude`` drives the coil gradient force. ``field_moment`` is the
    effective moment whose stray field the NV sees (None means use
    ``moment_magnitude``). The two differ by an order of magnitude for the
    default bead: the gradient pull needed for a 0.7 um levitation height and
    the field map seen by the NV are not described by one point moment.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment_magnitude: float = 1.6e-13
    moment_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    radius: float = 0.5e-6
    field_moment: float | None = 1.0e-14

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "moment_axis", _check_unit(self.moment_axis, "moment_axis"))
        if self.radius <= 0:
            raise ValueError("particle radius must be > 0")
        if self.moment_magnitude < 0:
            raise ValueError("moment_magnitude must be >= 0")
        if self.field_moment is not None and self.field_moment < 0:
            raise ValueError("field_moment must be >= 0")

    @property
    def stray_moment(self) -> float:
        return self.moment_magnitude if self.field_moment is None else self.field_moment

    @property
    def moment(self) -> np.ndarray:
        return self.stray_moment * self.moment_axis


@dataclass(frozen=True)
class NVSensor:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    zero_field_splitting: float = 2.870e9
    linewidth_fwhm: float = 7.2e6
    contrast_amplitude: float = 0.053
    count_rate: float = 45e3

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "axis", _check_unit(self.axis, "axis"))
        if self.zero_field_splitting <= 0:
            raise ValueError("zero_field_splitting must be > 0")
        if self.linewidth_fwhm <= 0:
            raise ValueError("linewidth_fwhm must be > 0")
        if not 0 < self.contrast_amplitude < 1:
            raise ValueError("contrast_amplitude must lie in (0, 1)")
        if self.count_rate <= 0:
            raise ValueError("count_rate must be > 0")


@dataclass(frozen=True)
class CoilMagnet:
    """Stack of ``turns`` coaxial loops centred under the NV, ``standoff`` below the glass."""

    loop_radius: float = 5e-3
    turns: int = 150
    standoff: float = 2e-3
    current: float = 0.05

    def __post_init__(self):
        if self.loop_radius <= 0:
            raise ValueError("loop_radius must be > 0")
        if int(self.turns) != self.turns or self.turns < 1:
            raise ValueError("turns must be an integer >= 1")
        if self.standoff <= 0:
            raise ValueError("standoff must be > 0")

    def with_current(self, current: float) -> "CoilMagnet":
        return CoilMagnet(self.loop_radius, self.turns, self.standoff, current)


def dipole_field(moment, offset) -> np.ndarray:
    """Field of a point dipole ``moment`` (A m^2) at displacement ``offset`` (m) from it.

    Also accepts an (N, 3) array of offsets and returns (N, 3).
    """
    m = np.asarray(moment, dtype=float)
    r = np.asarray(offset, dtype=float)
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise FieldDomainError("field evaluated at dipole location")
    rhat = r / dist[..., None]
    m_dot = np.sum(rhat * m, axis=-1)
    return MU0_OVER_4PI * (3.0 * rhat * m_dot[..., None] - m) / dist[..., None] ** 3


def nv_projected_field(b, axis) -> float:
    """Signed component of ``b`` along the NV axis."""
    return float(np.dot(as_vec3(b), _check_unit(axis, "axis")))


def field_to_splitting(b_parallel: float) -> float:
    """Zeeman splitting f+ - f- (Hz) for a projected field (T)."""
    return 2.0 * GAMMA_NV * abs(b_parallel)


def splitting_to_field(splitting: float) -> float:
    """Projected field magnitude (T) for a Zeeman splitting (Hz)."""
    return splitting / (2.0 * GAMMA_NV)


def zeeman_frequencies(b_parallel: float, d0: float) -> tuple[float, float]:
    if abs(b_parallel) >= ZEEMAN_FIELD_LIMIT:
        raise FieldDomainError(
            f"|B| = {abs(b_parallel):.3g} T is outside linear Zeeman regime of this model"
        )
    shift = GAMMA_NV * abs(b_parallel)
    return d0 - shift, d0 + shift


def coil_axial_field(coil: CoilMagnet, height_above_glass: float) -> float:
    """On-axis field (T, +z) at ``height_above_glass`` above the bottom glass surface."""
    if height_above_glass < 0:
        raise ValueError("height must be >= 0")
    a = coil.loop_radius
    d = coil.standoff + height_above_glass
    return MU0 * coil.turns * coil.current * a**2 / (2.0 * (a**2 + d**2) ** 1.5)


def coil_axial_gradient(coil: CoilMagnet, height: float) -> float:
    """d/dz of :func:`coil_axial_field`; negative since the field falls off away from the coil."""
    a = coil.loop_radius
    d = coil.standoff + height
    return -3.0 * d * coil_axial_field(coil, height) / (a**2 + d**2)
