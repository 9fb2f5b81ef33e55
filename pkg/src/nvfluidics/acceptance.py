"""Acceptance checks for the digital twin, one function per criterion.

Each check returns a :class:`CriterionResult`. ``run_all`` runs them in
order; ``python -m nvfluidics.acceptance`` and ``nvf selftest`` print one
line per criterion and exit nonzero if any fails.
"""

from __future__ import annotations

import filecmp
import math
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import control, dynamics, mapping, odmr
from .config import ExperimentConfig
from .magnetostatics import NVSensor, dipole_field, splitting_to_field
from .oracles import discretized_sphere_field
from .world import DeviceWorld

# independent scalar constants for the Zeeman oracle (CODATA 2018, g = 2)
_H = 6.62607015e-34
_MU_B = 9.2740100783e-24


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f} s)"


def sensitivity_regression() -> CriterionResult:
    eta = odmr.sensitivity(0.053, 7.2e6, 45e3)
    rel = eta / 17.5e-6 - 1
    return CriterionResult(1, "sensitivity regression", abs(rel) <= 0.03,
                           f"eta = {eta * 1e6:.3f} uT/sqrt(Hz), {rel * 100:+.2f}% vs 17.5 (tol 3%)")


def zeeman_anchors() -> CriterionResult:
    def oracle(df):
        return df * _H / (2 * 2.0 * _MU_B)

    cases = [
        ("42.3 MHz", splitting_to_field(42.3e6), oracle(42.3e6), 755.5e-6),
        ("dB(3.62 um)", mapping.delta_field_from_splittings(42.3e6, 40.7e6), oracle(1.6e6), 28.6e-6),
        ("dB(1.50 um)", mapping.delta_field_from_splittings(42.3e6, 34.2e6), oracle(8.1e6), 144.7e-6),
    ]
    ok = True
    parts = []
    for name, value, ref, published in cases:
        e1 = abs(value / ref - 1)
        e2 = abs(value / published - 1)
        ok &= e1 <= 5e-3 and e2 <= 5e-3
        parts.append(f"{name} = {value * 1e6:.2f} uT")
    return CriterionResult(2, "Zeeman inversion anchors", ok, ", ".join(parts) + " (tol 0.5%)")


def dipole_oracle() -> CriterionResult:
    radius = 0.5e-6
    m = np.array([0.2e-14, -0.1e-14, 1e-14])
    dirs = [np.array(d, dtype=float) for d in ((1, 0, 0), (0, 0, 1), (1, 1, 1), (1, -0.5, 0.3), (0, 1, -1))]
    worst = 0.0
    for dist in (2e-6, 3e-6, 5e-6):
        for d in dirs:
            r = d / np.linalg.norm(d) * dist
            ref = discretized_sphere_field(m, radius, r, min_cells=100_000)
            worst = max(worst, np.linalg.norm(dipole_field(m, r) - ref) / np.linalg.norm(ref))
    worst_div = 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.normal(size=3)
        r = d / np.linalg.norm(d) * rng.uniform(1e-6, 20e-6)
        dist = np.linalg.norm(r)
        h = 1e-4 * dist
        div = sum((dipole_field(m, r + h * e)[i] - dipole_field(m, r - h * e)[i]) / (2 * h)
                  for i, e in enumerate(np.eye(3)))
        # divergence relative to the field-gradient scale |B| / |r|
        worst_div = max(worst_div, abs(div) * dist / np.linalg.norm(dipole_field(m, r)))
    ok = worst < 1e-3 and worst_div < 1e-6
    return CriterionResult(3, "dipole model vs discretized sphere", ok,
                           f"max rel. deviation {worst:.2e} (tol 1e-3), max rel. divergence {worst_div:.1e} (tol 1e-6)")


def hold_accuracy(n_seeds: int = 20) -> CriterionResult:
    world = DeviceWorld()
    sx, sy = [], []
    for seed in range(n_seeds):
        _, st = control.run_hold((0.0, 0.0), 60.0, world, seed)
        sx.append(st.std_x)
        sy.append(st.std_y)
    mx, my = np.mean(sx) * 1e9, np.mean(sy) * 1e9
    ok = 30 <= mx <= 70 and 30 <= my <= 70
    return CriterionResult(4, "hold accuracy", ok,
                           f"mean std x = {mx:.1f} nm, y = {my:.1f} nm over {n_seeds} seeds (band 30-70 nm)")


def height_vs_current() -> CriterionResult:
    world = DeviceWorld()
    currents = np.linspace(0.0, 0.1, 20)
    heights = np.array([dynamics.equilibrium_height(i, world) for i in currents])
    monotone = bool(np.all(np.diff(heights) <= 0))
    z50 = dynamics.equilibrium_height(0.05, world)
    high = heights[currents >= 0.08]
    clearance = bool(np.all(high <= world.particle.radius + 0.1e-6))
    ok = monotone and abs(z50 - 0.7e-6) <= 0.1e-6 and clearance
    return CriterionResult(5, "height vs current", ok,
                           f"monotone={monotone}, z(50 mA) = {z50 * 1e6:.3f} um (0.7 +- 0.1), "
                           f"max z(>=80 mA) = {high.max() * 1e6:.3f} um (bead radius 0.5)")


def esr_round_trip(n_seeds: int = 100) -> CriterionResult:
    grid = odmr.ODMRConfig().grid(2.87e9)
    worst = 0.0
    for split in (10e6, 20e6, 42.3e6, 60e6):
        for fwhm in (5e6, 7.2e6, 10e6):
            for contrast in (0.03, 0.053):
                nv = NVSensor(linewidth_fwhm=fwhm, contrast_amplitude=contrast)
                sp = odmr.simulate_lockin_spectrum(grid, splitting_to_field(split), nv, analytic=True)
                fit = odmr.fit_esr(sp)
                truth = (2.87e9 - split / 2, 2.87e9 + split / 2, fwhm, contrast)
                got = (fit.f_minus, fit.f_plus, fit.fwhm, fit.contrast_amplitude)
                worst = max(worst, max(abs(g / t - 1) for g, t in zip(got, truth)))
    fits = []
    nv = NVSensor()
    for seed in range(n_seeds):
        sp = odmr.simulate_lockin_spectrum(grid, splitting_to_field(42.3e6), nv, dwell_per_point=1.0,
                                           rng=np.random.default_rng(seed))
        fits.append(odmr.fit_esr(sp))
    ratios = []
    for attr in ("f_minus", "f_plus"):
        vals = np.array([getattr(f, attr) for f in fits])
        sig = np.median([getattr(f, "sigma_" + attr) for f in fits])
        ratios.append(np.std(vals, ddof=1) / sig)
    ok = worst <= 1e-6 and max(ratios) <= 2.0
    return CriterionResult(6, "ESR fit round trip", ok,
                           f"noiseless max rel. error {worst:.1e} (tol 1e-6); noisy scatter / sigma = "
                           f"{ratios[0]:.2f}, {ratios[1]:.2f} over {n_seeds} seeds (tol 2)")


MAP_BETA = np.array([0.5, 0.2, 0.843]) / np.linalg.norm([0.5, 0.2, 0.843])


def map_experiment(n_trials: int = 100) -> CriterionResult:
    """Closed-loop map acquisition and dipole inversion on a tilted-NV synthetic world.

    Accuracy is judged on the ensemble: the median moment and the mean axis
    over all trials must sit within 5% and 3 degrees of the truth. Each
    trial must cover the truth within 2 sigma, for m and for beta separately,
    in at least 90 of 100 trials. The per-trial hit rates are reported too.
    """
    world = DeviceWorld(nv=NVSensor(axis=MAP_BETA))
    m_true = world.particle.stray_moment
    plan = mapping.ScanPlan()
    m_fit, betas, cov_m, cov_b, within = [], [], 0, 0, 0
    for seed in range(n_trials):
        samples = mapping.acquire_map(world, plan, seed=seed)
        fit = mapping.fit_dipole_map(samples, plan.z0)
        ang = mapping.beta_angle_error(fit.nv_axis, MAP_BETA)
        m_fit.append(fit.moment_magnitude)
        betas.append(fit.nv_axis)
        cov_m += abs(fit.moment_magnitude - m_true) <= 2 * fit.parameter_sigmas["m"]
        cov_b += ang <= 2 * fit.parameter_sigmas["beta_angle"]
        within += abs(fit.moment_magnitude / m_true - 1) <= 0.05 and math.degrees(ang) <= 3.0
    m_err = np.median(m_fit) / m_true - 1
    b_err = math.degrees(mapping.beta_angle_error(np.mean(betas, axis=0), MAP_BETA))
    need = math.ceil(0.9 * n_trials)
    ok = abs(m_err) <= 0.05 and b_err <= 3.0 and cov_m >= need and cov_b >= need
    return CriterionResult(7, "end-to-end map experiment", ok,
                           f"median m error {m_err * 100:+.1f}% (tol 5%), mean beta error {b_err:.2f} deg (tol 3); "
                           f"2-sigma coverage m {cov_m}/{n_trials}, beta {cov_b}/{n_trials} (need {need}); "
                           f"single trials within 5% and 3 deg: {within}/{n_trials}")


def determinism() -> CriterionResult:
    from .recipes import RECIPES, run_recipe

    cfg = ExperimentConfig(seed=7)
    bad = []
    n_csv = 0
    with tempfile.TemporaryDirectory() as tmp:
        for name in RECIPES:
            dirs = [Path(tmp) / f"{name}-{k}" for k in (0, 1)]
            for d in dirs:
                d.mkdir()
                run_recipe(name, cfg, d)
            for f in sorted(dirs[0].glob("*.csv")):
                n_csv += 1
                if not filecmp.cmp(f, dirs[1] / f.name, shallow=False):
                    bad.append(f"{name}/{f.name}")
    ok = not bad and n_csv >= len(RECIPES)
    detail = f"{n_csv} CSV files from {len(RECIPES)} recipes byte-identical" if ok else f"differs: {', '.join(bad)}"
    return CriterionResult(8, "determinism", ok, detail)


def brownian_statistics(n_walkers: int = 10_000, n_steps: int = 10_000) -> CriterionResult:
    world = DeviceWorld()
    rng = np.random.default_rng(2024)
    start = np.tile([0.0, 0.0, 5e-6], (n_walkers, 1))
    pos = start.copy()
    lags = np.unique(np.geomspace(1, n_steps, 25).astype(int))
    msd = []
    zero = np.zeros(3)
    for k in range(1, n_steps + 1):
        pos = dynamics.step_ensemble(pos, zero, zero, world.dt, rng, world)
        pos[:, 2] = 5e-6  # keep walkers mid-channel; only lateral axes are measured
        if k in lags:
            msd.append(np.mean((pos[:, :2] - start[:, :2]) ** 2, axis=0))
    t = lags * world.dt
    msd = np.array(msd)
    slopes = [(t @ msd[:, a]) / (t @ t) for a in (0, 1)]
    rel = [s / (2 * world.diffusion) - 1 for s in slopes]
    ok = all(abs(r) <= 0.05 for r in rel)
    return CriterionResult(9, "Brownian statistics", ok,
                           f"MSD slope / 2D - 1 = {rel[0] * 100:+.2f}% (x), {rel[1] * 100:+.2f}% (y) "
                           f"over {n_steps} steps, {n_walkers} walkers (tol 5%)")


CRITERIA = (sensitivity_regression, zeeman_anchors, dipole_oracle, hold_accuracy, height_vs_current,
            esr_round_trip, map_experiment, determinism, brownian_statistics)


def run_criterion(check) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = check()
    except Exception as exc:  # a crash is a failure of that criterion, not of the suite
        idx = CRITERIA.index(check) + 1 if check in CRITERIA else 0
        res = CriterionResult(idx, check.__name__, False, f"raised {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_all(stream=None) -> list[CriterionResult]:
    results = []
    for check in CRITERIA:
        res = run_criterion(check)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
        results.append(res)
    return results


def main() -> int:
    results = run_all(sys.stdout)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return 0 if n_fail == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
