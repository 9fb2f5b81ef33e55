"""Field-map acquisition around a single NV and dipole inversion of the map.

Offsets ``r`` are horizontal positions of the bead centre relative to the NV;
the bead centre sits ``z0`` above the glass, so the vector from the bead to
the NV is ``(-r, -z0)``. The observable is the drop of the projected field
relative to a far reference position, read off the change of Zeeman
splitting, so the coil field never enters the map fit.

Because the prediction is linear in p = m * beta, the weighted problem has a
closed-form linear solution. It seeds the multi-start nonlinear fit over
(m, theta, phi) and decides whether the geometry identifies beta at all.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import control, dynamics
from .constants import GAMMA_NV
from .magnetostatics import FieldDomainError, coil_axial_field, dipole_field, nv_projected_field
from .odmr import FitError, ODMRConfig, fit_esr, simulate_lockin_spectrum

log = logging.getLogger(__name__)

SAMPLE_CSV_COLUMNS = ("rx_um", "ry_um", "deltaB_uT", "sigma_uT", "flag")
HEIGHT_TOLERANCE = 0.1e-6  # m, allowed mismatch between z0 and the equilibrium height
DEFAULT_RADII = (1.0e-6, 1.5e-6, 2.0e-6, 3.0e-6, 4.0e-6, 5.5e-6, 7.25e-6)


class MappingError(RuntimeError):
    """The map experiment could not produce a usable reference."""


class DegenerateGeometry(ValueError):
    pass


def _default_offsets():
    return [np.array([r, 0.0]) for r in DEFAULT_RADII] + [np.array([0.0, r]) for r in DEFAULT_RADII]


@dataclass(frozen=True)
class ScanPlan:
    offsets: list = field(default_factory=_default_offsets)
    z0: float = 0.7e-6
    reference_offset: np.ndarray = field(default_factory=lambda: np.array([-10e-6, 0.0]))
    hold_frames: int = 50  # frames held at each position while the field is sampled

    def __post_init__(self):
        offs = [np.asarray(o, dtype=float).reshape(2) for o in self.offsets]
        ref = np.asarray(self.reference_offset, dtype=float).reshape(2)
        if not offs:
            raise ValueError("scan plan needs at least one offset")
        if self.z0 <= 0:
            raise ValueError("z0 must be > 0")
        if np.hypot(*ref) < 5e-6:
            raise ValueError("reference_offset must be at least 5 um from the NV")
        keys = {tuple(np.round(o * 1e9).astype(int)) for o in offs}
        if len(keys) != len(offs):
            raise ValueError("scan offsets must be distinct")
        if self.hold_frames < 1:
            raise ValueError("hold_frames must be >= 1")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "reference_offset", ref)

    @classmethod
    def along_line(cls, radii, direction=(1.0, 0.0), **kw) -> "ScanPlan":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(offsets=[r * d for r in radii], **kw)


@dataclass(frozen=True)
class FieldMapSample:
    offset: np.ndarray
    delta_B: float
    sigma_delta_B: float
    flag: str = "ok"

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(2))
        if not (self.sigma_delta_B >= 0 or math.isnan(self.sigma_delta_B)):
            raise ValueError("sigma_delta_B must be >= 0")

    @property
    def usable(self) -> bool:
        return self.flag == "ok"


class FieldMap(list):
    """Samples from one acquisition plus the reference they share.

    Every delta_B inherits the reference splitting error, so the samples are
    correlated with covariance ``reference_sigma**2`` off the diagonal.
    """

    def __init__(self, samples=(), reference_offset=None, reference_sigma: float = 0.0):
        super().__init__(samples)
        self.reference_offset = None if reference_offset is None else np.asarray(reference_offset, dtype=float)
        self.reference_sigma = float(reference_sigma)


@dataclass(frozen=True)
class DipoleFitResult:
    moment_magnitude: float
    nv_axis: np.ndarray
    residual_norm: float
    parameter_sigmas: dict
    covariance: np.ndarray = field(repr=False, compare=False, default=None)
    n_samples: int = 0

    @property
    def theta(self) -> float:
        return math.acos(max(-1.0, min(1.0, self.nv_axis[2])))

    @property
    def phi(self) -> float:
        return math.atan2(self.nv_axis[1], self.nv_axis[0])

    def to_text(self) -> str:
        items = [
            ("m_Am2", self.moment_magnitude),
            ("beta_x", self.nv_axis[0]), ("beta_y", self.nv_axis[1]), ("beta_z", self.nv_axis[2]),
            ("sigma_m", self.parameter_sigmas["m"]),
            ("sigma_theta_deg", math.degrees(self.parameter_sigmas["beta_angle"])),
            ("residual_norm", self.residual_norm),
        ]
        return "".join(f"{k}={float(v)!r}\n" for k, v in items)


def delta_field_from_splittings(splitting_ref: float, splitting_at_r: float) -> float:
    """Projected-field reduction (T) implied by the splitting drop from the reference."""
    return (splitting_ref - splitting_at_r) / (2.0 * GAMMA_NV)


def _unit_response(r, z0) -> np.ndarray:
    """-B_dip of a unit vertical moment at the NV, for bead offsets ``r`` (N, 2)."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    offset = np.column_stack([-r[:, 0], -r[:, 1], np.full(len(r), -float(z0))])
    return -dipole_field(np.array([0.0, 0.0, 1.0]), offset)


def predicted_delta_field(r, z0: float, moment: float, beta, reference_offset=None):
    """Model projected-field reduction at bead offset(s) ``r``.

    ``-beta . B_dip(m z, bead->NV)``, minus the same at ``reference_offset``
    when one is given. Scalar in, scalar out; (N, 2) in, (N,) out.
    """
    beta = np.asarray(beta, dtype=float)
    single = np.ndim(r) == 1
    u = _unit_response(r, z0)
    if reference_offset is not None:
        u = u - _unit_response(reference_offset, z0)
    out = moment * (u @ beta)
    return float(out[0]) if single else out


def predicted_map_grid(moment: float, beta, z0: float, x, y) -> np.ndarray:
    """Predicted reduction on the grid ``x`` by ``y`` (m); shape (len(y), len(x))."""
    xx, yy = np.meshgrid(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return predicted_delta_field(pts, z0, moment, beta).reshape(xx.shape)


def _beta(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def _start_directions():
    return [(math.radians(t), math.radians(p)) for t in (25.0, 65.0) for p in (0.0, 90.0, 180.0, 270.0)]


def fit_dipole_map(samples, z0: float, reference_offset=None, particle_radius: float = 0.5e-6,
                   fixed_axis=None, reference_sigma: float | None = None) -> DipoleFitResult:
    """Weighted least-squares recovery of the moment and NV axis from a field map.

    ``reference_offset`` is where the baseline splitting was taken (None treats
    it as infinitely far). ``reference_sigma`` (T) is the part of every
    sample's sigma that comes from the shared reference; the residuals are
    then whitened with the full covariance instead of 1/sigma^2 weights. Both
    default to the attributes of a :class:`FieldMap`, when given one.
    With ``fixed_axis`` only the moment is fitted.
    The returned moment is non-negative; a negative optimum is reflected to
    (-m, -beta), which predicts the same map.
    """
    if reference_offset is None:
        reference_offset = getattr(samples, "reference_offset", None)
    if reference_sigma is None:
        reference_sigma = getattr(samples, "reference_sigma", 0.0)
    good = [s for s in samples if s.usable]
    if fixed_axis is None:
        radii = {round(float(np.hypot(*s.offset)) * 1e9) for s in good}
        if len(good) < 4 or len(radii) < 3:
            raise ValueError(
                f"need >= 4 usable samples at >= 3 distinct radii (got {len(good)} at {len(radii)})"
            )
    elif len(good) < 2:
        raise ValueError(f"need >= 2 usable samples for a fixed-axis fit (got {len(good)})")
    r = np.array([s.offset for s in good])
    y = np.array([s.delta_B for s in good])
    sig = np.array([s.sigma_delta_B for s in good])
    if np.any(sig <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("samples need finite delta_B and sigma > 0")
    dist = np.sqrt(np.sum(r**2, axis=1) + z0**2)
    if np.any(dist < particle_radius):
        i = int(np.argmin(dist))
        raise ValueError(
            f"sample at ({r[i, 0] * 1e6:.3f}, {r[i, 1] * 1e6:.3f}) um is inside the particle radius; "
            "the point-dipole model is invalid there"
        )
    u = _unit_response(r, z0)
    if reference_offset is not None:
        u = u - _unit_response(reference_offset, z0)
    if reference_sigma > 0:
        own = sig**2 - reference_sigma**2
        if np.any(own <= 0):
            raise ValueError("reference_sigma must be smaller than every sample sigma")
        cov_y = np.diag(own) + reference_sigma**2
        w = np.linalg.inv(np.linalg.cholesky(cov_y))
        a, b = w @ u, w @ y
    else:
        a = u / sig[:, None]
        b = y / sig

    if fixed_axis is not None:
        beta = np.asarray(fixed_axis, dtype=float)
        beta = beta / np.linalg.norm(beta)
        col = a @ beta
        info = col @ col
        m = float(col @ b / info)
        res = b - m * col
        if m < 0:
            m, beta = -m, -beta
        sigmas = {"m": 1.0 / math.sqrt(info), "theta": 0.0, "phi": 0.0, "beta_angle": 0.0}
        return DipoleFitResult(m, beta, float(np.linalg.norm(res)), sigmas,
                               np.array([[sigmas["m"] ** 2]]), len(good))

    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry(
            "degenerate geometry: samples do not constrain all three components of m*beta "
            "(e.g. all offsets on one line through the NV); add off-axis positions"
        )
    p_lin = np.linalg.lstsq(a, b, rcond=None)[0]
    m_lin = float(np.linalg.norm(p_lin))
    m_scale = m_lin if m_lin > 0 else 1e-15

    def residuals(x):
        return a @ (x[0] * m_scale * _beta(x[1], x[2])) - b

    best = None
    for theta0, phi0 in _start_directions():
        for m0 in (0.1, 10.0):
            trial = least_squares(residuals, [m0, theta0, phi0], method="lm", x_scale=[1.0, 1.0, 1.0],
                                  max_nfev=2000)
            if best is None or trial.cost < best.cost:
                best = trial
    mu, theta, phi = best.x
    if mu < 0:
        mu, theta, phi = -mu, math.pi - theta, phi + math.pi
    theta = math.atan2(math.sin(theta), math.cos(theta))
    if theta < 0:
        theta, phi = -theta, phi + math.pi
    phi = math.atan2(math.sin(phi), math.cos(phi))
    x_best = np.array([mu, theta, phi])
    jac = _numeric_jacobian(residuals, x_best)
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    scale = np.array([m_scale, 1.0, 1.0])
    cov = cov * np.outer(scale, scale)
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    sigmas = {
        "m": float(sd[0]), "theta": float(sd[1]), "phi": float(sd[2]),
        "beta_angle": float(math.sqrt(sd[1] ** 2 + (math.sin(theta) * sd[2]) ** 2)),
    }
    return DipoleFitResult(float(mu * m_scale), _beta(theta, phi),
                           float(np.linalg.norm(residuals(x_best))), sigmas, cov, len(good))


def _numeric_jacobian(fun, x, rel=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        h = rel * max(abs(x[k]), 1.0)
        e = np.zeros_like(x)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.column_stack(cols)


def beta_angle_error(beta_fit, beta_true) -> float:
    """Angle (rad) between two axis vectors."""
    a = np.asarray(beta_fit, dtype=float)
    b = np.asarray(beta_true, dtype=float)
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass
class _Measurement:
    offset: np.ndarray
    splitting: float
    sigma: float


def synthesize_spectrum(world, bead_xy, z0: float, odmr: ODMRConfig, rng):
    """Lock-in ESR spectrum at the NV with the bead at ``bead_xy`` (N, 2), height ``z0``.

    The stray field is averaged over the N bead positions, the coil field is
    taken on axis at the NV, and white-light scatter grows as the bead nears
    the NV: background = scatter_coefficient / (|r|^2 + z0^2) at the mean
    position.
    """
    bead_xy = np.atleast_2d(np.asarray(bead_xy, dtype=float))
    nv = world.nv
    bead = np.column_stack([bead_xy, np.full(len(bead_xy), z0)])
    b_dip = dipole_field(world.particle.moment, nv.position - bead).mean(axis=0)
    b_coil = np.array([0.0, 0.0, coil_axial_field(world.coil, max(nv.position[2], 0.0))])
    b_par = nv_projected_field(b_coil + b_dip, nv.axis)
    rel = bead_xy.mean(axis=0) - nv.position[:2]
    background = odmr.scatter_coefficient / (rel @ rel + z0**2)
    return simulate_lockin_spectrum(
        odmr.grid(nv.zero_field_splitting), b_par, nv, odmr.timing, odmr.dwell_per_point,
        background_scatter=background, rng=rng, analytic=odmr.analytic,
    )


def _measure_here(loop, world, plan: ScanPlan, odmr: ODMRConfig, rng, target) -> _Measurement:
    """Hold at ``target`` while sampling the field, then synthesize and fit one spectrum."""
    start = len(loop.log)
    loop.hold(target, plan.hold_frames)
    arr = loop.log.arrays()
    spectrum = synthesize_spectrum(world, arr["true"][start:, :2], plan.z0, odmr, rng)
    fit = fit_esr(spectrum)
    return _Measurement(arr["measured"][start:, :2].mean(axis=0), fit.splitting, fit.sigma_splitting)


def acquire_map(world, plan: ScanPlan, controller: control.ControllerConfig | None = None,
                odmr: ODMRConfig | None = None, seed: int = 0) -> FieldMap:
    """Steer the bead through the plan and return one sample per scan offset.

    The reference position is measured first. Positions that time out or give
    an unresolved spectrum come back flagged and carry NaN values.
    """
    odmr = odmr or ODMRConfig()
    z_eq = dynamics.equilibrium_height(world.coil.current, world)
    if abs(z_eq - plan.z0) > HEIGHT_TOLERANCE:
        raise ValueError(
            f"equilibrium height {z_eq * 1e6:.3f} um at {world.coil.current * 1e3:g} mA does not match "
            f"plan z0 = {plan.z0 * 1e6:.3f} um (tolerance {HEIGHT_TOLERANCE * 1e6:g} um)"
        )
    loop_seq, odmr_seq = np.random.SeedSequence(seed).spawn(2)
    loop = control.ClosedLoop(world, controller, rng=np.random.default_rng(loop_seq),
                              start=plan.reference_offset)
    odmr_rng = np.random.default_rng(odmr_seq)
    try:
        ref = _measure_here(loop, world, plan, odmr, odmr_rng, plan.reference_offset)
    except (FitError, FieldDomainError) as exc:
        raise MappingError(f"reference spectrum unusable: {exc}") from exc

    samples = FieldMap(reference_offset=ref.offset - world.nv.position[:2],
                       reference_sigma=ref.sigma / (2.0 * GAMMA_NV))
    for i, target in enumerate(plan.offsets):
        label = f"({target[0] * 1e6:.2f}, {target[1] * 1e6:.2f}) um"
        try:
            loop.goto(target, i)
        except control.WaypointTimeout:
            log.warning("sample %d at %s excluded: steering timeout", i, label)
            samples.append(FieldMapSample(target, math.nan, math.nan, "timeout"))
            continue
        try:
            m = _measure_here(loop, world, plan, odmr, odmr_rng, target)
        except (FitError, FieldDomainError) as exc:
            log.warning("sample %d at %s excluded: %s", i, label, exc)
            samples.append(FieldMapSample(target, math.nan, math.nan, "unresolved"))
            continue
        dB = delta_field_from_splittings(ref.splitting, m.splitting)
        sigma = math.hypot(ref.sigma, m.sigma) / (2.0 * GAMMA_NV)
        samples.append(FieldMapSample(m.offset - world.nv.position[:2], dB, sigma))
    return samples


def samples_to_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_CSV_COLUMNS)
        for s in samples:
            w.writerow([repr(float(s.offset[0] * 1e6)), repr(float(s.offset[1] * 1e6)),
                        repr(float(s.delta_B * 1e6)), repr(float(s.sigma_delta_B * 1e6)), s.flag])


def samples_from_csv(path) -> list[FieldMapSample]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(FieldMapSample(
                np.array([float(row["rx_um"]), float(row["ry_um"])]) * 1e-6,
                float(row["deltaB_uT"]) * 1e-6, float(row["sigma_uT"]) * 1e-6, row["flag"],
            ))
    return out
