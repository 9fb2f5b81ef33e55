"""The simulated apparatus: fluid, coil, electrodes, camera, bead and NV probe."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .control import CameraModel, ControllerConfig, ElectrodeActuator
from .dynamics import FluidEnvironment, diffusion_coefficient, stokes_drag_coefficient
from .magnetostatics import CoilMagnet, MagneticParticle, NVSensor


@dataclass(frozen=True)
class DeviceWorld:
    fluid: FluidEnvironment = field(default_factory=FluidEnvironment)
    coil: CoilMagnet = field(default_factory=CoilMagnet)
    actuator: ElectrodeActuator = field(default_factory=ElectrodeActuator)
    camera: CameraModel = field(default_factory=CameraModel)
    particle: MagneticParticle = field(default_factory=MagneticParticle)
    nv: NVSensor = field(default_factory=NVSensor)
    dt: float = 1e-3  # integrator step, s
    brownian: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        frame = 1.0 / self.camera.frame_rate
        if self.dt > frame:
            raise ValueError("dt must not exceed the camera frame period")

    @property
    def drag(self) -> float:
        return stokes_drag_coefficient(self.fluid.viscosity, self.particle.radius)

    @property
    def diffusion(self) -> float:
        if not self.brownian:
            return 0.0
        return diffusion_coefficient(self.fluid.temperature, self.drag)

    def with_current(self, current: float) -> "DeviceWorld":
        return replace(self, coil=self.coil.with_current(current))

    def replace(self, **changes) -> "DeviceWorld":
        return replace(self, **changes)


def default_world() -> DeviceWorld:
    return DeviceWorld()


def default_controller() -> ControllerConfig:
    return ControllerConfig()
