"""Spectral envelopes: Gaussian pump, Lorentzian excitation lineshape, fitting."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import least_squares

from .units import wavelength_to_omega, wavenumber_to_omega

__all__ = [
    "PumpSpec",
    "Lineshape",
    "LorentzianFit",
    "LorentzianFitError",
    "pump_amplitude",
    "lineshape_g",
    "synthesize_lorentzian",
    "fit_lorentzian",
    "read_spectrum",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class PumpSpec:
    """Transform-limited Gaussian pump.

    ``intensity_fwhm`` is the FWHM of |E(omega)|^2 in rad/s.  ``waist`` is
    the 1/e^2 intensity radius at focus and is only needed in 3D.
    """

    center_wavelength: float
    intensity_fwhm: float
    waist: float = None

    def __post_init__(self):
        if not self.center_wavelength > 0:
            raise ValueError("pump center wavelength must be positive")
        if not self.intensity_fwhm > 0:
            raise ValueError("pump intensity FWHM must be positive")
        if self.waist is not None and not self.waist > 0:
            raise ValueError("pump waist must be positive")

    @property
    def omega0(self):
        return wavelength_to_omega(self.center_wavelength)

    @property
    def sigma(self):
        """Standard deviation of the spectral intensity |E|^2 (rad/s)."""
        return self.intensity_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class Lineshape:
    Omega0: float
    Gamma: float

    def __post_init__(self):
        if not self.Gamma > 0:
            raise ValueError("linewidth Gamma must be positive")


def pump_amplitude(pump, omega):
    """Real Gaussian amplitude with unit L2 norm and flat phase."""
    s = pump.sigma
    d = np.asarray(omega, dtype=float) - pump.omega0
    return (2 * math.pi * s * s) ** -0.25 * np.exp(-(d * d) / (4 * s * s))


def lineshape_g(ls, Omega):
    """Square root of the unit-area Lorentzian of FWHM Gamma."""
    d = np.asarray(Omega, dtype=float) - ls.Omega0
    hw = ls.Gamma / 2
    return np.sqrt((ls.Gamma / (2 * math.pi)) / (d * d + hw * hw))


def synthesize_lorentzian(shift_cm, shift0_cm, gamma_cm, amplitude=1.0, baseline=0.0):
    """A (G/2)^2 / ((x - x0)^2 + (G/2)^2) + baseline, in the input units."""
    x = np.asarray(shift_cm, dtype=float)
    hw = gamma_cm / 2
    return amplitude * hw * hw / ((x - shift0_cm) ** 2 + hw * hw) + baseline


class LorentzianFitError(RuntimeError):
    """Fit failed; ``best`` carries the best-so-far parameter tuple."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class LorentzianFit:
    shift0_cm: float
    gamma_cm: float
    amplitude: float
    baseline: float
    residual: float
    degenerate: bool = False

    @property
    def Omega0(self):
        return wavenumber_to_omega(self.shift0_cm)

    @property
    def Gamma(self):
        return wavenumber_to_omega(self.gamma_cm)

    def lineshape(self):
        return Lineshape(self.Omega0, self.Gamma)


def _initial_guess(x, y):
    base = float(np.min(y))
    i = int(np.argmax(y))
    amp = float(y[i]) - base
    half = base + amp / 2
    above = np.nonzero(y >= half)[0]
    width = float(x[above[-1]] - x[above[0]]) if above.size > 1 else float(np.ptp(x)) / 10
    if width <= 0:
        width = float(np.min(np.diff(np.sort(x))))
    return np.array([float(x[i]), width, amp, base])


def fit_lorentzian(shift_cm, intensity, max_iter=200):
    """Damped least-squares fit of a Lorentzian plus constant baseline.

    Returns a :class:`LorentzianFit` whose residual is the RMS misfit
    relative to the peak height.  Raises :class:`LorentzianFitError` when
    there is no peak to fit or the optimiser does not converge.
    """
    x = np.asarray(shift_cm, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("shift and intensity must be 1D arrays of equal length")
    if x.size < 8:
        raise ValueError(f"need at least 8 samples, got {x.size}")
    if np.any(y < 0):
        raise ValueError("intensities must be non-negative")
    p0 = _initial_guess(x, y)
    scale = float(np.max(y))
    if p0[2] <= 1e-12 * max(scale, 1e-300):
        raise LorentzianFitError("spectrum is flat; no peak to fit", best=tuple(p0))

    def resid(p):
        return (synthesize_lorentzian(x, p[0], abs(p[1]), p[2], p[3]) - y) / scale

    sol = least_squares(resid, p0, method="lm", max_nfev=max_iter * (p0.size + 1), xtol=1e-15, ftol=1e-15)
    x0, gam, amp, base = sol.x
    gam = abs(gam)
    if not sol.success:
        raise LorentzianFitError(f"fit did not converge: {sol.message}", best=(x0, gam, amp, base))
    rms = float(np.sqrt(np.mean(resid(sol.x) ** 2)) * scale / max(abs(amp), 1e-300))
    span = float(np.ptp(x))
    return LorentzianFit(float(x0), float(gam), float(amp), float(base), rms, degenerate=gam >= span)


def read_spectrum(path):
    """Two-column text (shift in cm^-1, intensity); '#' starts a comment."""
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    rows = [ln.replace(",", " ").split() for ln in lines if ln]
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (shift, intensity)")
    return data[:, 0], data[:, 1]
