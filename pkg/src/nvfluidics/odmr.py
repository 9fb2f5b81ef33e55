"""Lock-in ODMR spectra: synthesis with shot noise, Lorentzian-pair fitting, sensitivity.

Contrast is defined per frequency as C = (I_on - I_off) / I_off, so resonant
dips are negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import medfilt

from .constants import GAMMA_NV
from .magnetostatics import NVSensor, field_to_splitting, splitting_to_field, zeeman_frequencies

__all__ = [
    "ESRFit", "ESRSpectrum", "FitError", "FitDidNotConverge", "LockinTimingConfig", "ODMRConfig",
    "UnresolvedSpectrum", "esr_contrast_model", "field_to_splitting", "fit_esr", "lorentzian",
    "sensitivity", "simulate_lockin_spectrum", "splitting_to_field",
]

SENSITIVITY_PREFACTOR = 0.77


MIN_DIP_SIGNIFICANCE = 3.0  # fitted contrast must exceed this many standard errors


class FitError(RuntimeError):
    pass


class UnresolvedSpectrum(FitError):
    pass


class FitDidNotConverge(FitError):
    pass


@dataclass(frozen=True)
class LockinTimingConfig:
    modulation_rate: float = 1000.0  # Hz
    duty: float = 0.5  # fraction of each cycle with the microwave on

    def __post_init__(self):
        if self.modulation_rate <= 0:
            raise ValueError("modulation_rate must be > 0")
        if not 0 < self.duty < 1:
            raise ValueError("duty must lie in (0, 1)")


@dataclass(frozen=True)
class ODMRConfig:
    """Acquisition settings. The sweep is centred on the NV zero-field splitting."""

    half_span: float = 40e6  # Hz
    n_points: int = 81
    dwell_per_point: float = 1.0  # s
    timing: LockinTimingConfig = field(default_factory=LockinTimingConfig)
    # white-light scatter from the bead reaching the detector: b = coeff / distance^2 (counts m^2 / s)
    scatter_coefficient: float = 5e4 * 1e-12
    analytic: bool = False

    def __post_init__(self):
        if self.half_span <= 0:
            raise ValueError("half_span must be > 0")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.dwell_per_point <= 0:
            raise ValueError("dwell_per_point must be > 0")
        if self.scatter_coefficient < 0:
            raise ValueError("scatter_coefficient must be >= 0")

    def grid(self, center: float) -> np.ndarray:
        return np.linspace(center - self.half_span, center + self.half_span, self.n_points)


@dataclass(frozen=True)
class ESRSpectrum:
    frequencies: np.ndarray
    contrast: np.ndarray
    contrast_sigma: np.ndarray
    dwell_per_point: float

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        c = np.asarray(self.contrast, dtype=float)
        s = np.asarray(self.contrast_sigma, dtype=float)
        if not (f.shape == c.shape == s.shape) or f.ndim != 1:
            raise ValueError("frequencies, contrast and contrast_sigma must be equal-length 1-D arrays")
        if len(f) < 8:
            raise ValueError("a spectrum needs at least 8 points")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(s < 0):
            raise ValueError("contrast_sigma must be >= 0")
        for name, v in (("frequencies", f), ("contrast", c), ("contrast_sigma", s)):
            object.__setattr__(self, name, v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("freq_Hz,contrast,contrast_sigma\n")
            for f, c, s in zip(self.frequencies, self.contrast, self.contrast_sigma):
                fh.write(f"{float(f)!r},{float(c)!r},{float(s)!r}\n")

    @classmethod
    def from_csv(cls, path, dwell_per_point: float = float("nan")) -> "ESRSpectrum":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], dwell_per_point)


@dataclass(frozen=True)
class ESRFit:
    f_minus: float
    f_plus: float
    fwhm: float
    contrast_amplitude: float
    baseline: float
    sigma_f_minus: float
    sigma_f_plus: float
    sigma_fwhm: float
    sigma_contrast: float
    sigma_baseline: float
    sigma_splitting: float
    residual_norm: float
    covariance: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def splitting(self) -> float:
        return self.f_plus - self.f_minus

    @property
    def field(self) -> float:
        return splitting_to_field(self.splitting)

    @property
    def sigma_field(self) -> float:
        return splitting_to_field(self.sigma_splitting)

    def to_text(self) -> str:
        items = [
            ("f_minus_Hz", self.f_minus), ("f_plus_Hz", self.f_plus), ("fwhm_Hz", self.fwhm),
            ("contrast", self.contrast_amplitude), ("baseline", self.baseline),
            ("sigma_f_minus_Hz", self.sigma_f_minus), ("sigma_f_plus_Hz", self.sigma_f_plus),
            ("sigma_fwhm_Hz", self.sigma_fwhm), ("sigma_contrast", self.sigma_contrast),
            ("sigma_baseline", self.sigma_baseline), ("sigma_splitting_Hz", self.sigma_splitting),
            ("residual_norm", self.residual_norm),
        ]
        return "".join(f"{k}={float(v)!r}\n" for k, v in items)


def lorentzian(f, f0, fwhm):
    """Unit-height Lorentzian with full width ``fwhm`` at half maximum."""
    hw2 = (0.5 * fwhm) ** 2
    return hw2 / ((np.asarray(f, dtype=float) - f0) ** 2 + hw2)


def esr_contrast_model(f, f_minus, f_plus, fwhm, contrast, baseline=0.0):
    """Flat baseline minus two equal Lorentzian dips of depth ``contrast``."""
    return baseline - contrast * (lorentzian(f, f_minus, fwhm) + lorentzian(f, f_plus, fwhm))


def simulate_lockin_spectrum(freq_grid, b_parallel: float, nv: NVSensor,
                             timing: LockinTimingConfig | None = None, dwell_per_point: float = 1.0,
                             background_scatter: float = 0.0, rng=None,
                             analytic: bool = False) -> ESRSpectrum:
    """Photon-counting lock-in measurement at each microwave frequency.

    Counts are aggregated per phase over the dwell: the microwave-off phase
    sees R + b, the on phase R (1 + C_true(f)) + b, so background scatter b
    dilutes the observed contrast by R / (R + b). ``analytic`` uses the
    expected counts instead of Poisson draws.
    """
    timing = timing or LockinTimingConfig()
    if dwell_per_point * timing.modulation_rate < 10:
        raise ValueError("dwell_per_point must span at least 10 modulation periods")
    if background_scatter < 0:
        raise ValueError("background_scatter must be >= 0")
    f = np.asarray(freq_grid, dtype=float)
    f_minus, f_plus = zeeman_frequencies(b_parallel, nv.zero_field_splitting)
    c_true = esr_contrast_model(f, f_minus, f_plus, nv.linewidth_fwhm, nv.contrast_amplitude)
    rate = nv.count_rate
    duty = timing.duty
    mean_off = (rate + background_scatter) * dwell_per_point * (1.0 - duty) * np.ones_like(f)
    mean_on = (rate * (1.0 + c_true) + background_scatter) * dwell_per_point * duty
    if analytic:
        n_off, n_on = mean_off, mean_on
    else:
        if rng is None:
            raise ValueError("rng is required unless analytic=True")
        n_off = rng.poisson(mean_off).astype(float)
        n_on = rng.poisson(mean_on).astype(float)
    if np.any(n_off == 0):
        bad = f[np.argmax(n_off == 0)]
        raise ValueError(f"insufficient counts at {bad:.6g} Hz (no microwave-off photons)")
    ratio = n_on * (1.0 - duty) / (n_off * duty)
    sigma = ratio * np.sqrt(1.0 / np.maximum(n_on, 1.0) + 1.0 / n_off)
    return ESRSpectrum(f, ratio - 1.0, sigma, dwell_per_point)


def _minima_guess(spectrum: ESRSpectrum):
    f, c = spectrum.frequencies, spectrum.contrast
    step = float(np.median(np.diff(f)))
    baseline = float(np.median(c))
    # robust point noise from second differences (var of c[i-1] - 2c[i] + c[i+1] is 6 sigma^2)
    d2 = c[:-2] - 2.0 * c[1:-1] + c[2:]
    point_noise = 1.4826 * float(np.median(np.abs(d2 - np.median(d2)))) / math.sqrt(6.0)
    kernel = 1
    if point_noise > 0.1 * (baseline - c.min()):
        kernel = 5 if len(c) >= 20 else 3
    smooth = c.copy()
    if kernel > 1:
        half = kernel // 2
        # median filter edges are zero padded; keep the raw data there
        smooth[half:-half] = medfilt(c, kernel)[half:-half]
    noise = point_noise / math.sqrt(kernel)
    interior = np.arange(1, len(c) - 1)
    is_min = (smooth[interior] <= smooth[interior - 1]) & (smooth[interior] < smooth[interior + 1])
    minima = interior[is_min]
    depth = baseline - smooth[minima]
    minima = minima[depth > 3.0 * noise]
    if len(minima) == 0:
        raise UnresolvedSpectrum("unresolved spectrum: no detectable dip")
    order = minima[np.argsort(smooth[minima])]
    first = order[0]

    def separated(i):
        # a second dip needs a real bump between it and the first, not just noise
        lo, hi = sorted((i, first))
        bump = smooth[lo:hi + 1].max()
        return hi - lo >= 2 and bump - max(smooth[i], smooth[first]) > 2.0 * noise

    others = [i for i in order[1:] if separated(i)]
    if not others:
        raise UnresolvedSpectrum("unresolved spectrum: fewer than 2 detectable dips")
    second = others[0]
    i1, i2 = sorted((first, second))
    amp = float(baseline - smooth[first])
    # half-depth width of the deeper dip, bounded by the dip separation
    level = baseline - 0.5 * amp
    lo = first
    while lo > 0 and smooth[lo] < level:
        lo -= 1
    hi = first
    while hi < len(c) - 1 and smooth[hi] < level:
        hi += 1
    width = max((hi - lo) * step, 2.0 * step)
    width = min(width, (i2 - i1) * step)
    return f[i1], f[i2], width, amp, baseline


def _pair_scan_guess(spectrum: ESRSpectrum):
    """Best two-dip placement on the frequency grid by exhaustive search.

    For each pair of grid centres and trial width, baseline and depth enter
    linearly and are solved in closed form; the pair with the lowest weighted
    chi-square and a significant positive depth wins.
    """
    f, c = spectrum.frequencies, spectrum.contrast
    w = 1.0 / spectrum.contrast_sigma**2
    step = float(np.median(np.diff(f)))
    n = len(f)
    i, j = np.triu_indices(n, k=2)
    best = None
    for width in (3.0 * step, 6.0 * step, 12.0 * step):
        lor = lorentzian(f[:, None], f[None, :], width)  # (grid, centre)
        gram = lor.T @ (w[:, None] * lor)
        lw = lor.T @ w
        lc = lor.T @ (w * c)
        sw, swc, swcc = w.sum(), w @ c, w @ (c * c)
        # model c = b - a g with g = L_i + L_j
        swg = lw[i] + lw[j]
        swgg = gram[i, i] + 2.0 * gram[i, j] + gram[j, j]
        swgc = lc[i] + lc[j]
        det = sw * swgg - swg**2
        b = (swc * swgg - swg * swgc) / det
        a = (swg * swc - sw * swgc) / det
        chi2 = swcc - 2.0 * b * swc + 2.0 * a * swgc + b * b * sw - 2.0 * a * b * swg + a * a * swgg
        sigma_a = np.sqrt(sw / det)
        chi2 = np.where(a > 3.0 * sigma_a, chi2, np.inf)
        k = int(np.argmin(chi2))
        if np.isfinite(chi2[k]) and (best is None or chi2[k] < best[0]):
            best = (chi2[k], f[i[k]], f[j[k]], width, float(a[k]), float(b[k]))
    if best is None:
        raise UnresolvedSpectrum("unresolved spectrum: fewer than 2 detectable dips")
    return best[1:]


def _is_noisy(spectrum: ESRSpectrum) -> bool:
    c = spectrum.contrast
    return bool(np.median(spectrum.contrast_sigma) >= 0.1 * (np.median(c) - c.min()))


def _initial_guesses(spectrum: ESRSpectrum) -> list:
    """Starting points: the two deepest separated minima of the spectrum
    (median-smoothed when noisy) and, for noisy data, an exhaustive pair scan.
    """
    guesses = []
    try:
        guesses.append(_minima_guess(spectrum))
    except UnresolvedSpectrum:
        if not _is_noisy(spectrum):
            raise
    if _is_noisy(spectrum):
        try:
            guesses.append(_pair_scan_guess(spectrum))
        except UnresolvedSpectrum:
            if not guesses:
                raise
    return guesses


def fit_esr(spectrum: ESRSpectrum, max_nfev: int = 2000) -> ESRFit:
    """Weighted least-squares fit of two equal Lorentzian dips plus a flat baseline.

    Parameter uncertainties come from the Gauss-Newton curvature (J^T J)^-1 of
    the chi-square at the optimum, using the per-point sigmas as given.
    """
    f, c, s = spectrum.frequencies, spectrum.contrast, spectrum.contrast_sigma
    if np.any(s <= 0):
        raise ValueError("fit requires strictly positive contrast_sigma")
    center = 0.5 * (f[0] + f[-1])
    mhz = 1e6

    def unpack(p):
        return p[0] * mhz + center, p[1] * mhz + center, abs(p[2]) * mhz, p[3], p[4]

    def residuals(p):
        return (esr_contrast_model(f, *unpack(p)) - c) / s

    res = None
    for f1, f2, width, amp, base in _initial_guesses(spectrum):
        p0 = np.array([(f1 - center) / mhz, (f2 - center) / mhz, width / mhz, amp, base])
        trial = least_squares(residuals, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                              max_nfev=max_nfev, x_scale="jac")
        if trial.status <= 0:
            last_failure = (trial, f1, f2, width)
            continue
        if res is None or trial.cost < res.cost:
            res = trial
    if res is None:
        trial, f1, f2, width = last_failure
        raise FitDidNotConverge(
            f"fit did not converge after {trial.nfev} evaluations: {trial.message} "
            f"(start f-={f1:.6g} Hz, f+={f2:.6g} Hz, fwhm={width:.3g} Hz)"
        )
    fm, fp, fwhm, contrast, baseline = unpack(res.x)
    if contrast <= 0:
        raise UnresolvedSpectrum("unresolved spectrum: fitted dips have non-positive contrast")
    jac = res.jac
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jac.T @ jac)
    scale = np.array([mhz, mhz, mhz, 1.0, 1.0])
    cov = cov * np.outer(scale, scale)
    if fm > fp:
        fm, fp = fp, fm
        perm = [1, 0, 2, 3, 4]
        cov = cov[np.ix_(perm, perm)]
    if fp - fm < fwhm / 4:
        raise UnresolvedSpectrum(
            f"unresolved spectrum: splitting {(fp - fm) / mhz:.3f} MHz below a quarter linewidth"
        )
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if contrast < MIN_DIP_SIGNIFICANCE * sig[3]:
        raise UnresolvedSpectrum(
            f"unresolved spectrum: dip contrast {contrast:.4f} is below "
            f"{MIN_DIP_SIGNIFICANCE:g} sigma ({sig[3]:.4f})"
        )
    sig_split = math.sqrt(max(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1], 0.0))
    return ESRFit(
        f_minus=fm, f_plus=fp, fwhm=fwhm, contrast_amplitude=contrast, baseline=baseline,
        sigma_f_minus=sig[0], sigma_f_plus=sig[1], sigma_fwhm=sig[2], sigma_contrast=sig[3],
        sigma_baseline=sig[4], sigma_splitting=sig_split,
        residual_norm=float(np.linalg.norm(res.fun)), covariance=cov,
    )


def sensitivity(contrast: float, fwhm: float, count_rate: float) -> float:
    """Shot-noise-limited field sensitivity in T / sqrt(Hz) for a CW ODMR line."""
    if contrast <= 0 or fwhm <= 0 or count_rate <= 0:
        raise ValueError("contrast, fwhm and count_rate must all be positive")
    return SENSITIVITY_PREFACTOR * fwhm / (GAMMA_NV * contrast * math.sqrt(count_rate))
