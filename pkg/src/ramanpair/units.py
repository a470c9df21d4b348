"""Unit conversions and parsing of unit-tagged quantities.

Everything inside the package works in SI: angular frequency in rad/s,
lengths in metres, times in seconds, angles in radians.  Spectroscopic
units (nm, cm^-1, deg, fs) only appear at the configuration and CLI
boundary and are converted here.
"""

import math
import re

from scipy.constants import c

__all__ = [
    "UnitError",
    "wavelength_to_omega",
    "omega_to_wavelength",
    "wavenumber_to_omega",
    "omega_to_wavenumber",
    "fwhm_nm_to_omega",
    "fwhm_omega_to_nm",
    "parse_quantity",
]


class UnitError(ValueError):
    """Raised for untagged numbers, unknown units or wrong dimensions."""


def wavelength_to_omega(wavelength):
    """Vacuum wavelength [m] -> angular frequency [rad/s]."""
    return 2 * math.pi * c / wavelength


def omega_to_wavelength(omega):
    return 2 * math.pi * c / omega


def wavenumber_to_omega(wavenumber_cm):
    """Wavenumber [cm^-1] -> angular frequency [rad/s]."""
    return 2 * math.pi * c * 100.0 * wavenumber_cm


def omega_to_wavenumber(omega):
    return omega / (2 * math.pi * c * 100.0)


def fwhm_nm_to_omega(fwhm_nm, center_nm):
    """Spectral-intensity FWHM in nm -> rad/s, linearised at the center."""
    lam = center_nm * 1e-9
    return 2 * math.pi * c * fwhm_nm * 1e-9 / lam**2


def fwhm_omega_to_nm(fwhm_omega, center_nm):
    lam = center_nm * 1e-9
    return fwhm_omega * lam**2 / (2 * math.pi * c) * 1e9


# unit -> (dimension, factor to SI)
_UNITS = {
    "m": ("length", 1.0),
    "mm": ("length", 1e-3),
    "um": ("length", 1e-6),
    "µm": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "cm": ("length", 1e-2),
    "s": ("time", 1.0),
    "ps": ("time", 1e-12),
    "fs": ("time", 1e-15),
    "rad/s": ("angular_frequency", 1.0),
    "cm^-1": ("wavenumber", 1.0),
    "1/cm": ("wavenumber", 1.0),
    "rad": ("angle", 1.0),
    "deg": ("angle", math.pi / 180.0),
    "rad/m": ("wavevector", 1.0),
    "1": ("dimensionless", 1.0),
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)\s*$")


def parse_quantity(text, dimension=None):
    """Parse ``"7 nm"``-style text into ``(value_in_SI_or_base, unit, dimension)``.

    Lengths come back in metres, times in seconds, angles in radians.
    Wavenumbers stay in cm^-1 (the caller decides what they mean), and the
    original unit is returned so that a FWHM given in nm can be converted
    at the pump center.  Bare numbers are rejected.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        raise UnitError(f"untagged number {text!r}; write it with a unit, e.g. '{text} nm'")
    if not isinstance(text, str):
        raise UnitError(f"expected a unit-tagged string, got {type(text).__name__}")
    m = _QUANTITY.match(text)
    if m is None:
        raise UnitError(f"cannot parse quantity {text!r}; expected '<number> <unit>'")
    value, unit = float(m.group(1)), m.group(2)
    if unit not in _UNITS:
        raise UnitError(f"unknown unit {unit!r} in {text!r}")
    dim, factor = _UNITS[unit]
    if dimension is not None:
        allowed = (dimension,) if isinstance(dimension, str) else tuple(dimension)
        if dim not in allowed:
            raise UnitError(f"{text!r} has dimension {dim}, expected {' or '.join(allowed)}")
    return value * factor, unit, dim
