"""Named experiment recipes: run one simulated experiment, write CSVs, then plots.

Each recipe takes an :class:`ExperimentConfig` and an existing output
directory and returns a :class:`RunSummary`. CSV files are written before any
plot is attempted, so a plotting failure never leaves a CSV half written.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import control, dynamics, mapping, odmr
from .config import ExperimentConfig
from .plotting import Series, emit_plot


@dataclass
class RunSummary:
    recipe: str
    wall_clock_s: float = 0.0
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def format(self) -> str:
        lines = [f"recipe: {self.recipe}"]
        for k, v in self.metrics.items():
            lines.append(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
        lines.append(f"wall_clock_s: {self.wall_clock_s:.2f}")
        lines.extend(f"wrote: {p}" for p in self.files)
        return "\n".join(lines)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def hold(cfg: ExperimentConfig, out: Path) -> RunSummary:
    r = cfg.recipes.hold
    log, stats = control.run_hold(r.target, r.duration, cfg.world, cfg.seed, cfg.controller)
    s = RunSummary("hold")
    csv_path = out / "hold_positions.csv"
    log.to_csv(csv_path)
    s.files.append(csv_path)
    s.metrics.update(std_x_nm=stats.std_x * 1e9, std_y_nm=stats.std_y * 1e9, n_frames=stats.n_frames)
    meas = log.arrays()["measured"][len(log) - stats.n_frames:]
    dx = (meas[:, 0] - r.target[0]) * 1e9
    dy = (meas[:, 1] - r.target[1]) * 1e9
    hist = out / "hold_histogram.svg"
    emit_plot([Series(dx, label="x"), Series(dy, label="y")], "histogram", hist,
              xlabel="measured offset from target (nm)", title="Position hold")
    scatter = out / "hold_scatter.svg"
    emit_plot([Series(dx, dy, label="measured", style="points")], "path", scatter,
              xlabel="x (nm)", ylabel="y (nm)", title="Position hold")
    s.files += [hist, scatter]
    return s


def spiral(cfg: ExperimentConfig, out: Path) -> RunSummary:
    r = cfg.recipes.spiral
    wps = control.square_spiral((0.0, 0.0), r.pitch, r.legs)
    log = control.run_trajectory(wps, cfg.world, cfg.seed, cfg.controller, dwell=r.dwell)
    s = RunSummary("spiral")
    csv_path = out / "spiral_trajectory.csv"
    log.to_csv(csv_path)
    s.files.append(csv_path)
    arr = log.arrays()
    err = control.cross_track_errors(arr["true"], wps)
    s.metrics.update(rms_cross_track_nm=float(np.sqrt(np.mean(err**2))) * 1e9,
                     duration_s=float(arr["time"][-1]), n_frames=len(log))
    w = np.array(wps) * 1e6
    plot = out / "spiral_path.svg"
    emit_plot([Series(arr["measured"][:, 0] * 1e6, arr["measured"][:, 1] * 1e6, label="measured"),
               Series(w[:, 0], w[:, 1], label="waypoints", style="points")], "path", plot,
              xlabel="x (um)", ylabel="y (um)", title="Square spiral")
    s.files.append(plot)
    return s


def height_curve(cfg: ExperimentConfig, out: Path) -> RunSummary:
    r = cfg.recipes.height_curve
    currents = np.linspace(0.0, r.max_current, r.n_currents)
    heights = np.array([dynamics.equilibrium_height(i, cfg.world) for i in currents])
    s = RunSummary("height-curve")
    csv_path = out / "height_curve.csv"
    _write_rows(csv_path, ("current_mA", "height_um"), zip(currents * 1e3, heights * 1e6))
    s.files.append(csv_path)
    s.metrics["height_um_at_config_current"] = dynamics.equilibrium_height(cfg.world.coil.current, cfg.world) * 1e6
    plot = out / "height_curve.svg"
    emit_plot([Series(currents * 1e3, heights * 1e6, label="equilibrium height", style="points"),
               Series(currents * 1e3, heights * 1e6)], "curve", plot,
              xlabel="coil current (mA)", ylabel="height above glass (um)", title="Height vs current")
    s.files.append(plot)
    return s


def esr(cfg: ExperimentConfig, out: Path) -> RunSummary:
    offset = cfg.recipes.esr.offset
    z0 = dynamics.equilibrium_height(cfg.world.coil.current, cfg.world)
    rng = np.random.default_rng(cfg.seed)
    spectrum = mapping.synthesize_spectrum(cfg.world, offset, z0, cfg.odmr, rng)
    s = RunSummary("esr")
    csv_path = out / "esr_spectrum.csv"
    spectrum.to_csv(csv_path)
    s.files.append(csv_path)
    fit = odmr.fit_esr(spectrum)
    fit_path = out / "esr_fit.txt"
    fit_path.write_text(fit.to_text())
    s.files.append(fit_path)
    s.metrics.update(offset_um=f"{offset[0] * 1e6:g},{offset[1] * 1e6:g}", height_um=z0 * 1e6,
                     splitting_MHz=fit.splitting / 1e6, sigma_splitting_MHz=fit.sigma_splitting / 1e6,
                     field_uT=fit.field * 1e6, sigma_field_uT=fit.sigma_field * 1e6)
    f = spectrum.frequencies
    dense = np.linspace(f[0], f[-1], 800)
    model = odmr.esr_contrast_model(dense, fit.f_minus, fit.f_plus, fit.fwhm, fit.contrast_amplitude, fit.baseline)
    d0 = cfg.world.nv.zero_field_splitting
    plot = out / "esr_spectrum.svg"
    emit_plot([Series((f - d0) / 1e6, spectrum.contrast, yerr=spectrum.contrast_sigma, label="lock-in data",
                      style="points"),
               Series((dense - d0) / 1e6, model, label="Lorentzian fit")], "spectrum", plot,
              xlabel=f"microwave detuning from {d0 / 1e9:g} GHz (MHz)", ylabel="contrast",
              title=f"ESR, splitting {fit.splitting / 1e6:.2f} MHz")
    s.files.append(plot)
    return s


def _direction_groups(samples):
    groups = {}
    for smp in samples:
        if smp.usable:
            ang = round(math.degrees(math.atan2(smp.offset[1], smp.offset[0])) / 15.0) * 15
            groups.setdefault(ang % 360, []).append(smp)
    return groups


def map_(cfg: ExperimentConfig, out: Path) -> RunSummary:
    plan = cfg.scan
    samples = mapping.acquire_map(cfg.world, plan, cfg.controller, cfg.odmr, cfg.seed)
    s = RunSummary("map")
    csv_path = out / "map_samples.csv"
    mapping.samples_to_csv(samples, csv_path)
    s.files.append(csv_path)
    fit = mapping.fit_dipole_map(samples, plan.z0, particle_radius=cfg.world.particle.radius)
    fit_path = out / "map_fit.txt"
    fit_path.write_text(fit.to_text())
    s.files.append(fit_path)
    ref = samples.reference_offset
    model_path = out / "map_model.csv"
    rows = []
    for smp in samples:
        pred = mapping.predicted_delta_field(smp.offset, plan.z0, fit.moment_magnitude, fit.nv_axis, ref)
        rows.append((smp.offset[0] * 1e6, smp.offset[1] * 1e6, pred * 1e6))
    _write_rows(model_path, ("rx_um", "ry_um", "model_deltaB_uT"), rows)
    s.files.append(model_path)
    n_flagged = sum(not x.usable for x in samples)
    b = fit.nv_axis
    s.metrics.update(m_Am2=fit.moment_magnitude, sigma_m_Am2=fit.parameter_sigmas["m"],
                     beta=f"{b[0]:.4f},{b[1]:.4f},{b[2]:.4f}",
                     sigma_beta_deg=math.degrees(fit.parameter_sigmas["beta_angle"]),
                     n_used=fit.n_samples, n_flagged=n_flagged)

    series = []
    for ang, group in sorted(_direction_groups(samples).items()):
        rad = np.array([np.hypot(*g.offset) for g in group]) * 1e6
        series.append(Series(rad, np.array([g.delta_B for g in group]) * 1e6,
                             yerr=np.array([g.sigma_delta_B for g in group]) * 1e6,
                             label=f"measured, {ang} deg", style="points"))
        dense = np.linspace(max(rad.min(), 0.5), rad.max(), 300)
        u = np.array([math.cos(math.radians(ang)), math.sin(math.radians(ang))])
        model = mapping.predicted_delta_field(dense[:, None] * 1e-6 * u, plan.z0, fit.moment_magnitude,
                                              fit.nv_axis, ref)
        series.append(Series(dense, model * 1e6, label=f"dipole fit, {ang} deg"))
    profile = out / "map_profile.svg"
    emit_plot(series, "curve", profile, xlabel="bead distance from NV, r (um)",
              ylabel="field reduction (uT)", title="Measured vs dipole model")
    grid = np.linspace(-8e-6, 8e-6, 161)
    surface = mapping.predicted_map_grid(fit.moment_magnitude, fit.nv_axis, plan.z0, grid, grid)
    pts = np.array([x.offset for x in samples]) * 1e6
    grid_plot = out / "map_grid.svg"
    emit_plot([Series(grid * 1e6, grid * 1e6, z=surface * 1e6, label="predicted field reduction (uT)"),
               Series(pts[:, 0], pts[:, 1], label="sampled positions")], "map", grid_plot,
              xlabel="x (um)", ylabel="y (um)", title="Dipole field map")
    s.files += [profile, grid_plot]
    return s


RECIPES = {"hold": hold, "spiral": spiral, "height-curve": height_curve, "esr": esr, "map": map_}


def run_recipe(name: str, cfg: ExperimentConfig, out: Path) -> RunSummary:
    t0 = time.perf_counter()
    summary = RECIPES[name](cfg, Path(out))
    summary.wall_clock_s = time.perf_counter() - t0
    return summary
