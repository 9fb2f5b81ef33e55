"""Camera-feedback planar steering with electroosmotic actuation.

The loop runs at the camera frame rate: measure the bead, convert the
position error to a commanded velocity, solve for the four electrode
voltages, then let the dynamics integrate over one frame with that flow held
constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics

CSV_COLUMNS = (
    "time_s", "true_x_um", "true_y_um", "true_z_um", "meas_x_um", "meas_y_um",
    "tgt_x_um", "tgt_y_um", "V1", "V2", "V3", "V4",
)


class TrackingLost(RuntimeError):
    """The bead left the camera field of view. ``log`` holds the frames recorded so far."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


class WaypointTimeout(RuntimeError):
    def __init__(self, index, log):
        super().__init__(f"waypoint timeout at index {index}")
        self.index = index
        self.log = log


def _default_gain():
    return 1e-6 * np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])


@dataclass(frozen=True)
class CameraModel:
    frame_rate: float = 10.0  # Hz
    localization_noise_sigma: float = 10e-9  # m, per axis
    field_of_view: float = 60e-6  # m, full width of the square view centred on the NV

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be > 0")
        if self.localization_noise_sigma < 0:
            raise ValueError("localization_noise_sigma must be >= 0")
        if self.field_of_view <= 0:
            raise ValueError("field_of_view must be > 0")

    @property
    def frame_period(self) -> float:
        return 1.0 / self.frame_rate


@dataclass(frozen=True)
class ElectrodeActuator:
    """Linear map from the four channel-end voltages to planar flow velocity (m/s per V)."""

    gain_matrix: np.ndarray = field(default_factory=_default_gain)
    voltage_limit: float = 10.0

    def __post_init__(self):
        g = np.asarray(self.gain_matrix, dtype=float)
        if g.shape != (2, 4):
            raise ValueError(f"gain_matrix must be 2x4, got {g.shape}")
        if np.linalg.matrix_rank(g) != 2:
            raise ValueError("gain_matrix must have rank 2")
        if self.voltage_limit <= 0:
            raise ValueError("voltage_limit must be > 0")
        object.__setattr__(self, "gain_matrix", g)
        object.__setattr__(self, "_pinv", np.linalg.pinv(g))

    @property
    def pinv(self) -> np.ndarray:
        return self._pinv


@dataclass(frozen=True)
class ControllerConfig:
    proportional_gain: float = 5.0  # 1/s
    max_commanded_speed: float = 10e-6  # m/s
    capture_radius: float = 200e-9  # m
    waypoint_timeout: float = 30.0  # s

    def __post_init__(self):
        if self.proportional_gain <= 0:
            raise ValueError("proportional_gain must be > 0")
        if self.max_commanded_speed <= 0:
            raise ValueError("max_commanded_speed must be > 0")
        if self.capture_radius <= 0:
            raise ValueError("capture_radius must be > 0")
        if self.waypoint_timeout <= 0:
            raise ValueError("waypoint_timeout must be > 0")


@dataclass
class TrajectoryLog:
    time: list = field(default_factory=list)
    true_position: list = field(default_factory=list)
    measured_position: list = field(default_factory=list)
    target: list = field(default_factory=list)
    voltages: list = field(default_factory=list)

    def append(self, t, true_pos, meas_pos, target, volts):
        self.time.append(float(t))
        self.true_position.append(np.array(true_pos, dtype=float))
        self.measured_position.append(np.array(meas_pos, dtype=float))
        self.target.append(np.array(target, dtype=float))
        self.voltages.append(np.array(volts, dtype=float))

    def __len__(self):
        return len(self.time)

    def arrays(self) -> dict[str, np.ndarray]:
        n = len(self)
        return {
            "time": np.asarray(self.time, dtype=float),
            "true": np.asarray(self.true_position, dtype=float).reshape(n, 3),
            "measured": np.asarray(self.measured_position, dtype=float).reshape(n, 3),
            "target": np.asarray(self.target, dtype=float).reshape(n, 2),
            "voltages": np.asarray(self.voltages, dtype=float).reshape(n, 4),
        }

    def rows(self):
        for t, tp, mp, tg, v in zip(self.time, self.true_position, self.measured_position,
                                    self.target, self.voltages):
            yield [t, *(tp * 1e6), *(mp[:2] * 1e6), *(tg * 1e6), *v]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class HoldStats:
    std_x: float
    std_y: float
    mean_x: float
    mean_y: float
    n_frames: int


def measure_position(true_pos, camera: CameraModel, rng) -> np.ndarray:
    """Camera estimate of the bead position: xy blurred by localization noise, z untouched."""
    p = np.array(true_pos, dtype=float)
    noise = rng.standard_normal(2) * camera.localization_noise_sigma
    p[:2] = p[:2] + noise
    return p


def control_voltages(error, controller: ControllerConfig, actuator: ElectrodeActuator) -> np.ndarray:
    """Minimum-norm electrode voltages realizing a proportional velocity command."""
    v_des = controller.proportional_gain * np.asarray(error, dtype=float)
    speed = math.hypot(v_des[0], v_des[1])
    if speed > controller.max_commanded_speed:
        v_des = v_des * (controller.max_commanded_speed / speed)
    volts = actuator.pinv @ v_des
    return np.clip(volts, -actuator.voltage_limit, actuator.voltage_limit)


def flow_from_voltages(voltages, actuator: ElectrodeActuator) -> np.ndarray:
    return actuator.gain_matrix @ np.asarray(voltages, dtype=float)


def square_spiral(center, pitch: float, legs: int) -> list[np.ndarray]:
    """Waypoints of a left-turning square spiral with legs pitch, pitch, 2 pitch, 2 pitch, ..."""
    if legs < 0:
        raise ValueError("legs must be >= 0")
    directions = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
    p = np.array(center, dtype=float)
    points = [p.copy()]
    for k in range(1, legs + 1):
        d = np.array(directions[(k - 1) % 4])
        p = p + d * pitch * math.ceil(k / 2)
        points.append(p.copy())
    return points


def cross_track_errors(positions, waypoints) -> np.ndarray:
    """Distance of each xy position to the polyline through ``waypoints``."""
    pts = np.asarray(positions, dtype=float)[:, :2]
    wps = np.asarray(waypoints, dtype=float)
    if len(wps) == 1:
        return np.linalg.norm(pts - wps[0], axis=1)
    best = np.full(len(pts), np.inf)
    for a, b in zip(wps[:-1], wps[1:]):
        ab = b - a
        denom = ab @ ab
        t = np.zeros(len(pts)) if denom == 0 else np.clip((pts - a) @ ab / denom, 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best


class ClosedLoop:
    """One simulated apparatus under camera feedback. Owns its RNG stream."""

    def __init__(self, world, controller: ControllerConfig | None = None, seed: int = 0,
                 start=None, rng=None):
        self.world = world
        self.controller = controller or ControllerConfig()
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        if start is None:
            start = (0.0, 0.0)
        start = np.asarray(start, dtype=float)
        if start.shape == (2,):
            z0 = dynamics.equilibrium_height(world.coil.current, world)
            zmin, zmax = dynamics.z_bounds(world)
            start = np.array([start[0], start[1], min(max(z0, zmin), zmax)])
        self.state = dynamics.ParticleState(start, 0.0)
        self.log = TrajectoryLog()
        self.last_measurement = None

    def frame(self, target) -> np.ndarray:
        """Measure, actuate and integrate one camera frame. Returns the measured position."""
        cam = self.world.camera
        half = cam.field_of_view / 2
        pos = self.state.position
        if abs(pos[0]) > half or abs(pos[1]) > half:
            raise TrackingLost(
                f"tracking lost at t = {self.state.time:.1f} s: bead at "
                f"({pos[0] * 1e6:.2f}, {pos[1] * 1e6:.2f}) um left the field of view",
                self.log,
            )
        meas = measure_position(pos, cam, self.rng)
        target = np.asarray(target, dtype=float)
        volts = control_voltages(target - meas[:2], self.controller, self.world.actuator)
        flow = flow_from_voltages(volts, self.world.actuator)
        self.log.append(self.state.time, pos, meas, target, volts)
        self.state = dynamics.advance(
            self.state, (flow[0], flow[1], 0.0), cam.frame_period, self.world, self.rng
        )
        self.last_measurement = meas
        return meas

    def hold(self, target, n_frames: int) -> None:
        for _ in range(n_frames):
            self.frame(target)

    def goto(self, target, index: int = 0) -> None:
        """Steer until the measured position is within the capture radius of ``target``."""
        target = np.asarray(target, dtype=float)
        max_frames = int(math.ceil(self.controller.waypoint_timeout * self.world.camera.frame_rate))
        for _ in range(max_frames):
            meas = self.frame(target)
            if math.hypot(*(meas[:2] - target)) <= self.controller.capture_radius:
                return
        raise WaypointTimeout(index, self.log)


def hold_statistics(log: TrajectoryLog, skip_frames: int = 0) -> HoldStats:
    meas = log.arrays()["measured"][skip_frames:]
    return HoldStats(
        std_x=float(np.std(meas[:, 0], ddof=1)),
        std_y=float(np.std(meas[:, 1], ddof=1)),
        mean_x=float(np.mean(meas[:, 0])),
        mean_y=float(np.mean(meas[:, 1])),
        n_frames=len(meas),
    )


def run_hold(target, duration: float, world, seed: int, controller: ControllerConfig | None = None,
             settle_frames: int = 10):
    """Hold the bead at ``target`` for ``duration`` seconds starting on target.

    Statistics exclude the first ``settle_frames`` frames.
    """
    n = int(round(duration * world.camera.frame_rate))
    if n < 10:
        raise ValueError(f"hold duration must cover >= 10 camera frames (got {n})")
    if settle_frames >= n - 1:
        settle_frames = 0
    loop = ClosedLoop(world, controller, seed, start=target)
    loop.hold(target, n)
    return loop.log, hold_statistics(loop.log, settle_frames)


def run_trajectory(waypoints, world, seed: int, controller: ControllerConfig | None = None,
                   dwell: float = 0.0, start=None) -> TrajectoryLog:
    """Visit ``waypoints`` in order, holding ``dwell`` seconds at each after capture."""
    waypoints = [np.asarray(w, dtype=float) for w in waypoints]
    if not waypoints:
        raise ValueError("need at least one waypoint")
    loop = ClosedLoop(world, controller, seed, start=waypoints[0] if start is None else start)
    dwell_frames = int(round(dwell * world.camera.frame_rate))
    for i, wp in enumerate(waypoints):
        loop.goto(wp, i)
        loop.hold(wp, dwell_frames)
    return loop.log
