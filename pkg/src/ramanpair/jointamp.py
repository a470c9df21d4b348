"""Photon--excitation joint amplitudes in 1D and 3D geometries.

Conventions
-----------
* omega_s  : Stokes angular frequency (rad/s, absolute)
* Omega    : excitation angular frequency (rad/s, absolute)
* z        : creation point along the medium, |z| <= L/2
* k_CE     : excitation wavevector (rad/m, absolute)
* q        : transverse excitation wavevector (q_x, q_y) in rad/m

The pump argument of every kernel is omega_s + Omega (energy conservation).
Kernels use the full Sellmeier k(omega); the linearised forms are kept only
for cross-checks.  sinc(x) = sin(x)/x.
"""

from dataclasses import dataclass, field
import enum
import json
import math
import struct

import numpy as np

from .dispersion import MediumSpec, inverse_group_velocity, wavevector
from .fields import Lineshape, PumpSpec, lineshape_g, pump_amplitude

__all__ = [
    "GeometryMode",
    "GeometrySpec",
    "PairContext",
    "waist_from_fresnel",
    "f1d_forward",
    "f1d_backward",
    "f1d_kspace",
    "f_energy",
    "f_momentum",
    "f1d_forward_linearized",
    "f1d_kspace_linearized",
    "beta_collinear",
    "alpha_collinear",
    "log_beta_offaxis",
    "beta_offaxis",
    "log_alpha_offaxis",
    "alpha_offaxis",
    "offaxis_longitudinal_phase",
    "log_mu_paraxial_oracle",
    "mu_paraxial_oracle",
    "fiber_projection_oracle",
    "transverse_norm_oracle",
    "JointAmplitudeGrid",
]


def _sinc(x):
    # numpy's sinc is the normalised one
    return np.sinc(np.asarray(x) / np.pi)


class GeometryMode(str, enum.Enum):
    ONE_D_FORWARD = "OneD_Forward"
    ONE_D_BACKWARD = "OneD_Backward"
    THREE_D_COLLINEAR = "ThreeD_Collinear"
    THREE_D_OFFAXIS = "ThreeD_OffAxis"

    @property
    def is_3d(self):
        return self in (GeometryMode.THREE_D_COLLINEAR, GeometryMode.THREE_D_OFFAXIS)

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {
            "forward": cls.ONE_D_FORWARD, "oned_forward": cls.ONE_D_FORWARD, "1d_forward": cls.ONE_D_FORWARD,
            "backward": cls.ONE_D_BACKWARD, "oned_backward": cls.ONE_D_BACKWARD, "1d_backward": cls.ONE_D_BACKWARD,
            "collinear": cls.THREE_D_COLLINEAR, "threed_collinear": cls.THREE_D_COLLINEAR,
            "3d_collinear": cls.THREE_D_COLLINEAR,
            "offaxis": cls.THREE_D_OFFAXIS, "off_axis": cls.THREE_D_OFFAXIS, "threed_offaxis": cls.THREE_D_OFFAXIS,
            "3d_offaxis": cls.THREE_D_OFFAXIS,
        }
        if key not in aliases:
            raise ValueError(f"unknown geometry mode {text!r}; expected one of {[m.value for m in cls]}")
        return aliases[key]


def waist_from_fresnel(fresnel, k, length):
    """Waist giving Fresnel number 2 z_R / L with z_R = k w^2 / 2."""
    if not fresnel > 0:
        raise ValueError("Fresnel number must be positive")
    return math.sqrt(2.0 * fresnel * length / 2.0 / k)


@dataclass(frozen=True)
class GeometrySpec:
    mode: GeometryMode = GeometryMode.ONE_D_FORWARD
    phi: float = 0.0
    waist_p: float = None
    waist_f: float = None

    def __post_init__(self):
        object.__setattr__(self, "mode", GeometryMode.parse(self.mode))
        if not (0.0 <= self.phi <= math.pi):
            raise ValueError(f"collection angle phi={self.phi!r} outside [0, pi]")
        if self.mode.is_3d:
            for name in ("waist_p", "waist_f"):
                w = getattr(self, name)
                if w is None:
                    raise ValueError(f"geometry.{name} is required for {self.mode.value}")
                if not w > 0:
                    raise ValueError(f"geometry.{name} must be positive, got {w}")


@dataclass(frozen=True)
class PairContext:
    """Medium + pump + geometry with the derived center quantities cached."""

    medium: MediumSpec
    pump: PumpSpec
    geometry: GeometrySpec = field(default_factory=GeometrySpec)

    def __post_init__(self):
        wp0 = self.pump.omega0
        ws0 = wp0 - self.medium.raman_shift
        if not ws0 > 0:
            raise ValueError("Stokes center frequency must be positive (Raman shift exceeds pump frequency)")
        kp0 = wavevector(self.medium, wp0)
        ks0 = wavevector(self.medium, ws0)
        d = dict(
            omega_p0=wp0, omega_s0=ws0, k_p0=kp0, k_s0=ks0, k_ce0=kp0 - ks0,
            beta_p=inverse_group_velocity(self.medium, wp0),
            beta_s=inverse_group_velocity(self.medium, ws0),
            lineshape=Lineshape(self.medium.raman_shift, self.medium.linewidth),
        )
        g = self.geometry
        if g.mode.is_3d:
            d["z_rp"] = kp0 * g.waist_p**2 / 2
            d["z_rf"] = ks0 * g.waist_f**2 / 2
        else:
            d["z_rp"] = d["z_rf"] = None
        object.__setattr__(self, "_d", d)

    def __getattr__(self, name):
        d = self.__dict__.get("_d")
        if d is not None and name in d:
            return d[name]
        raise AttributeError(name)

    @property
    def Omega0(self):
        return self.medium.raman_shift

    @property
    def L(self):
        return self.medium.length

    @property
    def fresnel_p(self):
        return None if self.z_rp is None else 2 * self.z_rp / self.L

    @property
    def fresnel_f(self):
        return None if self.z_rf is None else 2 * self.z_rf / self.L

    @property
    def group_delay(self):
        return (self.beta_p - self.beta_s) * self.L

    def replace(self, medium=None, pump=None, geometry=None):
        return PairContext(medium or self.medium, pump or self.pump, geometry or self.geometry)


# ---------------------------------------------------------------- 1D kernels

def f_energy(ctx, omega_s, Omega):
    omega_s, Omega = np.broadcast_arrays(np.asarray(omega_s, float), np.asarray(Omega, float))
    return (pump_amplitude(ctx.pump, omega_s + Omega) * lineshape_g(ctx.lineshape, Omega)).astype(complex)


def _dk(ctx, omega_s, Omega, sign):
    return wavevector(ctx.medium, omega_s + Omega) + sign * wavevector(ctx.medium, omega_s)


def f1d_forward(ctx, omega_s, Omega, z):
    omega_s, Omega, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (omega_s, Omega, z)))
    return f_energy(ctx, omega_s, Omega) * np.exp(1j * _dk(ctx, omega_s, Omega, -1.0) * z)


def f1d_backward(ctx, omega_s, Omega, z):
    omega_s, Omega, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (omega_s, Omega, z)))
    return f_energy(ctx, omega_s, Omega) * np.exp(1j * _dk(ctx, omega_s, Omega, 1.0) * z)


def f1d_kspace(ctx, omega_s, Omega, k_ce):
    omega_s, Omega, k_ce = np.broadcast_arrays(*(np.asarray(a, float) for a in (omega_s, Omega, k_ce)))
    mismatch = _dk(ctx, omega_s, Omega, -1.0) - k_ce
    return f_energy(ctx, omega_s, Omega) * _sinc(ctx.L / 2 * mismatch)


def f_momentum(ctx, omega_s, k_ce):
    omega_s, k_ce = np.broadcast_arrays(np.asarray(omega_s, float), np.asarray(k_ce, float))
    Om = ctx.Omega0
    mismatch = wavevector(ctx.medium, omega_s + Om) - wavevector(ctx.medium, omega_s) - k_ce
    return (pump_amplitude(ctx.pump, omega_s + Om) * _sinc(ctx.L / 2 * mismatch)).astype(complex)


def f1d_forward_linearized(ctx, nu, delta, z, global_phase=True):
    """First-order dispersion form in the detunings nu, delta."""
    nu, delta, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (nu, delta, z)))
    amp = pump_amplitude(ctx.pump, ctx.omega_p0 + nu + delta) * lineshape_g(ctx.lineshape, ctx.Omega0 + delta)
    ph = (ctx.group_delay / ctx.L) * nu * z + ctx.beta_p * delta * z
    if global_phase:
        ph = ph + ctx.k_ce0 * z
    return amp * np.exp(1j * ph)


def f1d_kspace_linearized(ctx, nu, delta, kappa):
    nu, delta, kappa = np.broadcast_arrays(*(np.asarray(a, float) for a in (nu, delta, kappa)))
    amp = pump_amplitude(ctx.pump, ctx.omega_p0 + nu + delta) * lineshape_g(ctx.lineshape, ctx.Omega0 + delta)
    return amp * _sinc(ctx.group_delay / 2 * nu + ctx.L / 2 * (ctx.beta_p * delta - kappa))


# ---------------------------------------------------------------- 3D: collinear

def _require_3d(ctx):
    if ctx.z_rp is None:
        raise ValueError("3D kernel requested but the geometry has no waists")


def _cp(ctx, z):
    return (np.asarray(z, float) + 1j * ctx.z_rp) / ctx.k_p0


def _cs(ctx, z):
    return (np.asarray(z, float) + 1j * ctx.z_rf) / ctx.k_s0


def beta_collinear(ctx, q, z):
    """Transverse correction factor for collinear fibre collection."""
    _require_3d(ctx)
    qx, qy = q
    qx, qy, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (qx, qy, z)))
    cp, cs = _cp(ctx, z), np.conj(_cs(ctx, z))
    den = cp - cs
    return np.exp(-1j * cp * cs / (2 * den) * (qx**2 + qy**2)) / den


def alpha_collinear(ctx, z):
    _require_3d(ctx)
    z = np.asarray(z, float)
    wp, wf = ctx.geometry.waist_p, ctx.geometry.waist_f
    s = (z**2 + ctx.z_rf**2) / (wf * ctx.k_s0) ** 2 + (z**2 + ctx.z_rp**2) / (wp * ctx.k_p0) ** 2
    return 8 * math.pi**3 / (wp**2 * wf**2) / s


# ---------------------------------------------------------------- 3D: off-axis

def log_beta_offaxis(ctx, q, z, phi):
    """Complex logarithm of the off-axis correction factor (three factors).

    The log form is the primary interface: the first factor contains the
    constant exp(w_p^2 k_s^2 sin^2(phi) / 4), which overflows double
    precision for realistic waists.  Principal branch for the square roots.
    At phi = 0 this reduces to the collinear factor up to a constant phase.
    """
    _require_3d(ctx)
    if not 0.0 <= phi <= math.pi:
        raise ValueError(f"phi={phi!r} outside [0, pi]")
    qx, qy = q
    qx, qy, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (qx, qy, z)))
    c, s = math.cos(phi), math.sin(phi)
    ks = ctx.k_s0
    cp = _cp(ctx, z)
    csp = np.conj((z * c + 1j * ctx.z_rf) / ks)
    first = 0.5j * cp * (qx**2 + qy**2 - ks**2 * s**2 - 2 * ks * qy * s)
    d2 = csp - cp * (2 * c * c - 1)
    d3 = csp - cp * c * c
    second = 1j * (cp * c * (qy - ks * s) + z * s) ** 2 / (2 * d2) - 0.5 * np.log(d2)
    third = 1j * (cp * qx) ** 2 / (2 * d3) - 0.5 * np.log(d3)
    return first + second + third


def beta_offaxis(ctx, q, z, phi):
    return np.exp(log_beta_offaxis(ctx, q, z, phi))


def log_alpha_offaxis(ctx, z, phi):
    """log of the off-axis apodization function (evaluated in logs to avoid underflow)."""
    _require_3d(ctx)
    if not 0.0 <= phi <= math.pi:
        raise ValueError(f"phi={phi!r} outside [0, pi]")
    z = np.asarray(z, float)
    wp, wf = ctx.geometry.waist_p, ctx.geometry.waist_f
    vf2 = (wf * z / ctx.z_rf) ** 2
    vp2 = (wp * z / ctx.z_rp) ** 2
    c2 = math.cos(phi) ** 2
    s2 = math.sin(phi) ** 2
    a = (vf2 + vp2 + wp**2) * c2 + wf**2
    b = vf2 * c2 + vp2 + wp**2 + wf**2
    return -2 * z**2 * s2 / a - 0.5 * np.log(a * b)


def alpha_offaxis(ctx, z, phi):
    return np.exp(log_alpha_offaxis(ctx, z, phi))


def offaxis_longitudinal_phase(ctx, omega_s, z, phi):
    omega_s, z = np.broadcast_arrays(np.asarray(omega_s, float), np.asarray(z, float))
    return np.exp(1j * wavevector(ctx.medium, omega_s) * (1 - math.cos(phi)) * z)


# ---------------------------------------------------------------- paraxial oracle

def log_mu_paraxial_oracle(ctx, omega_s, q_s, Omega, q, z, phi):
    """Log of the ten-factor paraxial kernel mu (without the 1D amplitude).

    Kept as an independent check of the off-axis correction factor: it is
    the kernel before projection onto the fibre mode.  Arguments broadcast;
    q_s may be complex (used for contour deformation).
    """
    qsx, qsy = q_s
    qx, qy = q
    omega_s, Omega = np.broadcast_arrays(np.asarray(omega_s, float), np.asarray(Omega, float))
    wp = ctx.geometry.waist_p
    c, s = math.cos(phi), math.sin(phi)
    ks = wavevector(ctx.medium, omega_s)
    kp = wavevector(ctx.medium, omega_s + Omega)
    qs2 = qsx**2 + qsy**2
    ux = qsx + qx
    uy = qsy * c + qy
    lon = ks**2 - qs2
    return (
        -wp**2 / 4 * ux**2
        - wp**2 / 4 * uy**2
        - wp**2 / 4 * lon * s**2
        + wp**2 / 2 * ks * uy * s
        - 1j * ux**2 / (2 * kp) * z
        - 1j * uy**2 / (2 * kp) * z
        - 1j * lon * s**2 / (2 * kp) * z
        + 1j * ks * uy * s / kp * z
        + 1j * (qs2 * c / (2 * ks) - qsy * s) * z
        + 1j * (ks - ks * c) * z
    )


def mu_paraxial_oracle(ctx, omega_s, q_s, Omega, q, z, phi):
    return np.exp(log_mu_paraxial_oracle(ctx, omega_s, q_s, Omega, q, z, phi))


_GL_U, _GL_W = np.polynomial.legendre.leggauss(64)
_U_MAX = 9.0


def _steepest_descent_log_integral(logf, h, shape=()):
    """log of the integral over the real line of exp(logf(x)).

    ``logf`` must be (numerically) a quadratic polynomial in x that can be
    evaluated at complex x, vectorised over a trailing axis.  Its saddle
    and curvature are read off three samples, the contour is moved to the
    steepest-descent line through the saddle, and Gauss-Legendre
    quadrature is applied on that line.  Valid for entire integrands that
    decay along the real axis (Re of the curvature negative).
    """
    for _ in range(2):
        zero = np.zeros(shape, complex)
        f0, fp, fm = logf(zero), logf(zero + h), logf(zero - h)
        a = (fp - 2 * f0 + fm) / (2 * h * h)
        b = (fp - fm) / (2 * h)
        h = 1.0 / np.sqrt(np.max(np.abs(a)))
    if np.any(np.real(a) >= 0):
        raise FloatingPointError("integrand does not decay along the real axis")
    x0 = -b / (2 * a)
    # rotation angle with a*exp(2i theta) = -|a| and |theta| < pi/4, i.e.
    # the deformation never leaves the sector where the integrand decays
    arg = np.angle(a)
    theta = 0.5 * (np.where(arg >= 0, np.pi, -np.pi) - arg)
    rot = np.exp(1j * theta) / np.sqrt(np.abs(a))
    u = _U_MAX * _GL_U
    x = x0[..., None] + rot[..., None] * u
    vals = logf(x)
    # reference at the saddle keeps the summed terms near the positive real
    # axis, so the principal log below stays continuous in the parameters
    m = logf(x0)
    s = np.sum(_U_MAX * _GL_W * np.exp(vals - m[..., None]), axis=-1)
    return m + np.log(s) + 1j * theta - 0.5 * np.log(np.abs(a))


def fiber_projection_oracle(ctx, q, z, phi, omega_s=None, Omega=None):
    """log of  int d^2 q_s exp(-w_f^2 |q_s|^2 / 4) mu(q_s, q, z)  by quadrature.

    Nested 1D quadratures (inner over q_s^x, outer over q_s^y), each taken
    along the steepest-descent line of its integrand.  The integrand is
    sampled only through :func:`log_mu_paraxial_oracle`; no closed form
    of the result is used.  Scalar q = (q_x, q_y) and z.
    """
    _require_3d(ctx)
    omega_s = ctx.omega_s0 if omega_s is None else omega_s
    Omega = ctx.Omega0 if Omega is None else Omega
    wf = ctx.geometry.waist_f
    q = (float(q[0]), float(q[1]))
    z = float(z)

    def ell(ax, ay):
        ax, ay = np.broadcast_arrays(np.asarray(ax, complex), np.asarray(ay, complex))
        mu = log_mu_paraxial_oracle(ctx, omega_s, (ax, ay), Omega, q, z, phi)
        return mu - wf**2 / 4 * (ax**2 + ay**2)

    def inner(ay):
        ay = np.asarray(ay, complex)

        def along_x(ax):
            return ell(ax, ay if np.ndim(ax) == ay.ndim else ay[..., None])

        return _steepest_descent_log_integral(along_x, 1.0 / wf, ay.shape)

    return complex(_steepest_descent_log_integral(inner, 1.0 / wf))


def transverse_norm_oracle(ctx, z, phi=None):
    """log of  int d^2 q |beta(q, z)|^2  by nested 1D quadrature.

    ``phi=None`` uses the collinear factor.  |beta|^2 is a Gaussian in q;
    its center and widths are read off samples and Gauss-Legendre nodes
    are placed over +-9 widths.  Returns +inf when the Gaussian does not
    decay in some direction.
    """
    _require_3d(ctx)
    z = float(z)

    def two_re(qx, qy):
        qx, qy = np.broadcast_arrays(np.real(qx), np.real(qy))
        if phi is None:
            lb = np.log(beta_collinear(ctx, (qx, qy), z))
        else:
            lb = log_beta_offaxis(ctx, (qx, qy), z, phi)
        return (2 * np.real(lb)).astype(complex)

    def inner(qy):
        qy = np.asarray(qy, complex)

        def along_x(qx):
            return two_re(qx, qy if np.ndim(qx) == qy.ndim else qy[..., None])

        return _steepest_descent_log_integral(along_x, 1.0 / ctx.geometry.waist_p, qy.shape)

    try:
        return float(np.real(_steepest_descent_log_integral(inner, 1.0 / ctx.geometry.waist_p)))
    except FloatingPointError:
        return math.inf


# ---------------------------------------------------------------- grid export

_MAGIC = b"RPGRID01"


@dataclass
class JointAmplitudeGrid:
    """A kernel sampled on a tensor grid.

    ``axes`` is a list of ``(name, unit, values)``; ``values`` has shape
    ``tuple(len(v) for v in axes)``.  ``weights`` are optional per-axis
    quadrature weights.
    """

    axes: list
    values: np.ndarray
    weights: list = None
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        shape = tuple(len(a[2]) for a in self.axes)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")

    def to_csv(self, path):
        names = [f"{n} [{u}]" for n, u, _ in self.axes]
        mesh = np.meshgrid(*[np.asarray(a[2], float) for a in self.axes], indexing="ij")
        v = self.values.astype(complex).ravel()
        cols = [m.ravel() for m in mesh] + [v.real, v.imag]
        with open(path, "w") as fh:
            fh.write(",".join(names + ["real", "imag"]) + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    def to_binary(self, path):
        """Header: 8-byte magic, uint32 LE header length, UTF-8 JSON header
        (label, axis names, units, dims, dtype).  Body: each axis as LE
        float64, then the values as LE float64 (real, imag) pairs in C order."""
        header = {
            "label": self.label,
            "axes": [{"name": n, "unit": u, "size": len(v)} for n, u, v in self.axes],
            "dims": list(self.values.shape),
            "dtype": "complex128 as interleaved little-endian float64 (re, im)",
        }
        hb = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            for _, _, v in self.axes:
                fh.write(np.asarray(v, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype=complex).view("<f8").tobytes())

    @classmethod
    def from_binary(cls, path):
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError(f"{path}: not a joint-amplitude grid file")
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n).decode())
            axes = []
            for a in header["axes"]:
                v = np.frombuffer(fh.read(8 * a["size"]), dtype="<f8").astype(float)
                axes.append((a["name"], a["unit"], v))
            dims = header["dims"]
            data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
            values = data.view(complex).reshape(dims)
        return cls(axes, values, label=header.get("label", ""))
