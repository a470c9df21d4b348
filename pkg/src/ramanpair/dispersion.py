"""Sellmeier dispersion of the Raman medium.

The refractive index follows the usual Sellmeier form

    n^2(lambda) = 1 + sum_i B_i lambda^2 / (lambda^2 - C_i)

with lambda in micrometres and C_i in um^2.  Functions take angular
frequency (rad/s) and accept scalars or numpy arrays.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.constants import c

__all__ = [
    "DispersionDomainError",
    "MediumSpec",
    "refractive_index",
    "wavevector",
    "inverse_group_velocity",
    "group_delay_forward",
    "group_delay_backward",
]


class DispersionDomainError(ValueError):
    """Frequency outside the Sellmeier validity window."""


@dataclass(frozen=True)
class MediumSpec:
    """Raman-active medium.

    ``sellmeier_terms`` holds ``(B, C)`` pairs with C in um^2.  The
    validity window is given in nm of vacuum wavelength.  ``raman_shift``
    and ``linewidth`` are angular frequencies (rad/s); ``linewidth`` is the
    FWHM of the Raman gain spectral intensity.
    """

    label: str
    sellmeier_terms: tuple = ()
    window_nm: tuple = (0.0, math.inf)
    length: float = 8e-3
    raman_shift: float = 1.0
    linewidth: float = 1.0
    reference: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "sellmeier_terms", tuple((float(b), float(cc)) for b, cc in self.sellmeier_terms)
        )
        object.__setattr__(self, "window_nm", (float(self.window_nm[0]), float(self.window_nm[1])))
        if not self.length > 0:
            raise ValueError(f"medium length must be positive, got {self.length}")
        if not self.raman_shift > 0:
            raise ValueError(f"Raman shift must be positive, got {self.raman_shift}")
        if not self.linewidth > 0:
            raise ValueError(f"linewidth must be positive, got {self.linewidth}")
        lo, hi = self.window_nm
        if not 0 <= lo < hi:
            raise ValueError(f"invalid validity window {self.window_nm}")

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def is_vacuum(self):
        return not self.sellmeier_terms

    @classmethod
    def vacuum(cls, length=8e-3, raman_shift=1.0e14, linewidth=1.0e12):
        return cls("vacuum", (), (0.0, math.inf), length, raman_shift, linewidth)


def _lambda_um(medium, omega):
    omega = np.asarray(omega, dtype=float)
    lam_um = 2 * math.pi * c / omega * 1e6
    lo, hi = medium.window_nm
    lam_nm = lam_um * 1e3
    if np.any(~np.isfinite(lam_nm)) or np.any(lam_nm < lo) or np.any(lam_nm > hi):
        bad = lam_nm[(lam_nm < lo) | (lam_nm > hi) | ~np.isfinite(lam_nm)]
        raise DispersionDomainError(
            f"wavelength {float(np.ravel(bad)[0]):.6g} nm outside the Sellmeier validity window "
            f"[{lo:g}, {hi:g}] nm of medium {medium.label!r}"
        )
    return lam_um


def _n_and_dn_dlambda(medium, omega):
    lam = _lambda_um(medium, omega)
    l2 = lam**2
    n2 = np.ones_like(l2)
    dn2 = np.zeros_like(l2)
    for b, cc in medium.sellmeier_terms:
        d = l2 - cc
        n2 = n2 + b * l2 / d
        dn2 = dn2 - 2.0 * b * lam * cc / d**2
    if np.any(n2 <= 1.0) and not medium.is_vacuum:
        raise DispersionDomainError(f"Sellmeier index of {medium.label!r} not > 1 inside window")
    n = np.sqrt(n2)
    return n, dn2 / (2 * n), lam


def refractive_index(medium, omega):
    """Phase index n(omega)."""
    n, _, _ = _n_and_dn_dlambda(medium, omega)
    return n if n.ndim else float(n)


def wavevector(medium, omega):
    """k(omega) = n(omega) omega / c in rad/m."""
    n, _, _ = _n_and_dn_dlambda(medium, omega)
    k = n * np.asarray(omega, dtype=float) / c
    return k if k.ndim else float(k)


def inverse_group_velocity(medium, omega):
    """dk/domega = (n - lambda dn/dlambda) / c, differentiated analytically."""
    n, dn_dlam, lam = _n_and_dn_dlambda(medium, omega)
    beta = (n - lam * dn_dlam) / c
    return beta if beta.ndim else float(beta)


def group_delay_forward(medium, omega_p0, omega_s0):
    """Pump-Stokes walk-off (beta_p - beta_s) L accumulated over the medium."""
    bp = inverse_group_velocity(medium, omega_p0)
    bs = inverse_group_velocity(medium, omega_s0)
    return (bp - bs) * medium.length


def group_delay_backward(medium, omega_p0, omega_s0):
    """Delay (beta_p + beta_s) L between backward photons born at the two faces."""
    bp = inverse_group_velocity(medium, omega_p0)
    bs = inverse_group_velocity(medium, omega_s0)
    return (bp + bs) * medium.length
