"""Discretised joint amplitudes, Schmidt decomposition and purity.

The Stokes photon reduced density matrix is

    rho(nu, nu') = int dOmega dz a(z) F(nu, Omega, z) F*(nu', Omega, z)

with a(z) = 1 in 1D and the apodization function in 3D.  Two solvers:

``svd``
    Build M[i, (j, k)] = sqrt(w_i c_j w_k a_k) F(nu_i, delta_j, z_k) on a
    Gauss-Legendre z grid and take its singular values (or accumulate
    M M^H when M is large).
``closed_form_z``
    Do the z integral exactly: rho = sum_j c_j (E_j E_j^T) o T(K_j(nu) - K_j(nu'))
    with T(q) = int a(z) exp(i q z) dz (L sinc(qL/2) in 1D, a Filon table
    otherwise).  delta is grouped into blocks sharing one phase profile;
    the block count is chosen from a bound on the neglected phase.
    Needed when the z phase varies by thousands of radians (backward
    collection), where a z grid is infeasible.

The delta axis uses lineshape-weighted cells: c_j is the exact integral
of |g|^2 over the cell around delta_j, so linewidths far below the grid
spacing are handled.  For Gamma >> h this is the trapezoid rule.
"""

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
import json
import math

import numpy as np
from scipy import linalg
from scipy.special import roots_legendre

from .dispersion import wavevector
from .fields import pump_amplitude
from .jointamp import (
    GeometryMode,
    alpha_collinear,
    f1d_backward,
    f1d_forward,
    f_momentum,
    log_alpha_offaxis,
    offaxis_longitudinal_phase,
)
from .fields import lineshape_g

__all__ = [
    "QuadratureGrid",
    "SchmidtReport",
    "schmidt_from_matrix",
    "schmidt_from_density",
    "purity_rho_oracle",
    "energy_matrix",
    "momentum_matrix",
    "total_matrix",
    "purity_energy",
    "purity_momentum",
    "purity_total",
    "refine_until_converged",
    "apodization_transform",
]

SVD_CUTOFF = 1e-14      # relative to the largest singular value
EIG_CUTOFF = 1e-13      # relative to the largest eigenvalue of rho
DIRECT_SVD_MAX = 4_000_000      # entries of M for a direct SVD
SVD_PATH_MAX = 60_000_000       # beyond this many M entries use the closed form in z
BLOCK_PHASE_TOL = 1e-2          # rad, neglected phase per delta block
NYQUIST_OVERSAMPLE = 1.25
MAX_DEFAULT_POINTS = 8192


# ---------------------------------------------------------------- grids

@lru_cache(maxsize=16)
def _gauss_legendre(n):
    # numpy's companion-matrix eigensolve is O(n^3); the banded solver in
    # scipy handles the thousands of nodes a backward crystal needs
    x, w = np.polynomial.legendre.leggauss(n) if n <= 256 else roots_legendre(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform nu, delta, kappa axes (trapezoid) and Gauss-Legendre z.

    Windows are half-widths in rad/s (nu, delta) or rad/m (kappa).
    """

    n_nu: int = 256
    n_delta: int = 256
    n_z: int = 48
    window_nu: float = None
    window_delta: float = None
    n_kappa: int = None
    window_kappa: float = None

    def __post_init__(self):
        for name in ("n_nu", "n_delta", "n_z"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("window_nu", "window_delta", "window_kappa"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def default_window(ctx):
        return 5.0 * (ctx.medium.linewidth + 2.0 * ctx.pump.sigma)

    def resolved(self, ctx):
        """Fill in default windows; counts are left as given."""
        w = self.default_window(ctx)
        return replace(
            self,
            window_nu=self.window_nu or w,
            window_delta=self.window_delta or w,
        )

    @classmethod
    def for_context(cls, ctx, kind="total", base=256, n_z=48):
        """Default grid: default windows, counts raised to resolve the pump
        (h <= sigma/2) and the nu coherence length of rho (Nyquist)."""
        g = cls(base, base, n_z).resolved(ctx)
        s = ctx.pump.sigma
        n_res = int(math.ceil(2 * g.window_nu / (s / 2))) + 1
        n_nu = max(base, min(n_res, MAX_DEFAULT_POINTS))
        n_delta = max(base, min(n_res, MAX_DEFAULT_POINTS))
        if kind == "total":
            tau = _max_delay(ctx, g.window_nu)
            if tau > 0:
                h = 2 * math.pi / (NYQUIST_OVERSAMPLE * tau)
                n_nu = max(n_nu, int(math.ceil(2 * g.window_nu / h)) + 1)
        g = replace(g, n_nu=n_nu, n_delta=n_delta)
        if kind == "momentum":
            g = _with_kappa(ctx, g)
        return g

    def nu_axis(self):
        return _trapezoid(self.window_nu, self.n_nu)

    def delta_axis(self):
        return _trapezoid(self.window_delta, self.n_delta)

    def kappa_axis(self):
        return _trapezoid(self.window_kappa, self.n_kappa)

    def z_axis(self, half_length, n=None):
        n = self.n_z if n is None else n
        x, w = _gauss_legendre(n)
        return x * half_length, w * half_length

    def refined(self, step):
        """Odd steps double the counts (z by 1.5x); even steps widen the
        windows by 1.5x at constant spacing."""
        if step % 2 == 1:
            return replace(
                self,
                n_nu=2 * self.n_nu - 1 if self.n_nu > 1 else 1,
                n_delta=2 * self.n_delta - 1 if self.n_delta > 1 else 1,
                n_z=int(math.ceil(1.5 * self.n_z)),
                n_kappa=None if self.n_kappa is None else 2 * self.n_kappa - 1,
            )
        grow = lambda n: n if n <= 1 else int(math.ceil((n - 1) * 1.5)) + 1
        return replace(
            self,
            window_nu=1.5 * self.window_nu,
            window_delta=1.5 * self.window_delta,
            n_nu=grow(self.n_nu),
            n_delta=grow(self.n_delta),
            window_kappa=None if self.window_kappa is None else 1.5 * self.window_kappa,
            n_kappa=None if self.n_kappa is None else grow(self.n_kappa),
        )

    def size(self):
        return self.n_nu * self.n_delta

    def to_dict(self):
        return asdict(self)


def _trapezoid(half_width, n):
    if n == 1:
        return np.zeros(1), np.array([2.0 * half_width])
    x = np.linspace(-half_width, half_width, n)
    h = x[1] - x[0]
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return x, w


def _with_kappa(ctx, g):
    """kappa window covers the phase-matching ridge plus a sinc tail of
    1000 zeros; spacing pi/L (half the zero spacing) makes the trapezoid
    sum of a product of two sincs exact up to truncation."""
    L = ctx.L
    nu, _ = g.nu_axis()
    phi = _momentum_mismatch(ctx, nu)
    win = float(np.max(np.abs(phi))) + 1000 * 2 * math.pi / L
    n = int(math.ceil(2 * win / (math.pi / L))) + 1
    return replace(g, n_kappa=g.n_kappa or n, window_kappa=g.window_kappa or win)


def _momentum_mismatch(ctx, nu):
    ws = ctx.omega_s0 + nu
    return wavevector(ctx.medium, ws + ctx.Omega0) - wavevector(ctx.medium, ws) - ctx.k_ce0


def _lineshape_cells(ctx, delta, weights):
    """Exact integral of |g|^2 over the quadrature cell around each delta."""
    gam = ctx.medium.linewidth
    if len(delta) == 1:
        lo, hi = np.array([-np.inf]), np.array([np.inf])
    else:
        h = delta[1] - delta[0]
        lo = delta - np.where(np.arange(len(delta)) == 0, 0.0, h / 2)
        hi = delta + np.where(np.arange(len(delta)) == len(delta) - 1, 0.0, h / 2)
    c = (np.arctan(2 * hi / gam) - np.arctan(2 * lo / gam)) / math.pi
    return c


# ---------------------------------------------------------------- reports

@dataclass
class SchmidtReport:
    schmidt_coefficients: np.ndarray
    purity: float
    grid: dict
    converged: bool = True
    refinement_history: list = field(default_factory=list)
    method: str = "svd"
    kind: str = "total"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.schmidt_coefficients, float)
        self.schmidt_coefficients = lam
        if lam.size == 0:
            raise ValueError("empty Schmidt spectrum")
        if np.any(lam < 0) or np.any(np.diff(lam) > 1e-15):
            raise ValueError("Schmidt coefficients must be non-negative and sorted descending")
        if abs(lam.sum() - 1) > 1e-10:
            raise ValueError(f"Schmidt coefficients sum to {lam.sum()!r}, not 1")
        if not 0 < self.purity <= 1 + 1e-12:
            raise ValueError(f"purity {self.purity!r} outside (0, 1]")
        self.purity = float(min(self.purity, 1.0))

    @property
    def mode_number(self):
        return 1.0 / self.purity

    @property
    def g2_predicted(self):
        return 1.0 + self.purity

    def to_dict(self):
        return {
            "kind": self.kind,
            "method": self.method,
            "purity": self.purity,
            "mode_number": self.mode_number,
            "g2_predicted": self.g2_predicted,
            "converged": bool(self.converged),
            "grid": self.grid,
            "refinement_history": [list(h) for h in self.refinement_history],
            "diagnostics": self.diagnostics,
            "schmidt_coefficients": [float(x) for x in self.schmidt_coefficients],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["schmidt_coefficients"], float),
            d["purity"],
            d["grid"],
            d.get("converged", True),
            [tuple(h) for h in d.get("refinement_history", [])],
            d.get("method", "svd"),
            d.get("kind", "total"),
            d.get("diagnostics", {}),
        )


# ---------------------------------------------------------------- decompositions

def _normalise(lam, cutoff):
    lam = np.asarray(lam, float)
    lam = np.sort(lam)[::-1]
    if lam.size == 0 or not lam[0] > 0:
        raise FloatingPointError("kernel is identically zero on the grid")
    lam = lam[lam > cutoff * lam[0]]
    return lam / lam.sum()


def schmidt_from_matrix(M):
    """Normalised Schmidt coefficients lambda_i = s_i^2 / sum s^2 of M."""
    s = linalg.svd(np.asarray(M), compute_uv=False, lapack_driver="gesdd", check_finite=True)
    s = s[s > SVD_CUTOFF * s[0]] if s.size and s[0] > 0 else s
    return _normalise(s * s, 0.0)


def schmidt_from_density(rho):
    """Normalised eigenvalues of a Hermitian (unnormalised) density matrix."""
    ev = linalg.eigvalsh(rho, check_finite=True)
    return _normalise(ev, EIG_CUTOFF)


def _purity_of_density(rho):
    # Tr rho^2 / (Tr rho)^2, valid for Hermitian rho
    return float(np.sum(np.abs(rho) ** 2) / np.real(np.trace(rho)) ** 2)


def purity_rho_oracle(M):
    """Tr(rho^2) with rho = M M^H formed explicitly (test oracle)."""
    M = np.asarray(M)
    rho = M @ M.conj().T
    return _purity_of_density(rho)


def _report(lam, grid, method, kind, diagnostics, purity=None):
    p = float(np.sum(lam * lam)) if purity is None else purity
    return SchmidtReport(lam, p, grid, True, [], method, kind, diagnostics)


# ---------------------------------------------------------------- energy / momentum

def energy_matrix(ctx, grid):
    """M[i, j] = sqrt(w_i c_j) E(omega_p0 + nu_i + delta_j).

    c_j is the lineshape mass of cell j, i.e. w_j |g(delta_j)|^2 in the
    trapezoid limit, so M = sqrt(w_i w_j) f_energy up to the cell weights.
    """
    grid = grid.resolved(ctx)
    nu, wn = grid.nu_axis()
    de, wd = grid.delta_axis()
    c = _lineshape_cells(ctx, de, wd)
    amp = pump_amplitude(ctx.pump, ctx.omega_p0 + nu[:, None] + de[None, :])
    return np.sqrt(wn)[:, None] * amp * np.sqrt(c)[None, :], c


def momentum_matrix(ctx, grid):
    """M[i, j] = sqrt(w_i w_j) f_momentum(nu_i, kappa_j)."""
    grid = _with_kappa(ctx, grid.resolved(ctx))
    nu, wn = grid.nu_axis()
    ka, wk = grid.kappa_axis()
    F = f_momentum(ctx, ctx.omega_s0 + nu[:, None], ctx.k_ce0 + ka[None, :])
    return np.sqrt(wn)[:, None] * F * np.sqrt(wk)[None, :], grid


def total_matrix(ctx, grid, n_z=None):
    """M[i, (j, k)] = sqrt(w_i c_j w_k a(z_k)) F(nu_i, delta_j, z_k) built from
    the public kernels (f1d_forward, f1d_backward, or f1d_forward times the
    off-axis longitudinal phase).  Dense; meant for small grids and tests.
    """
    grid = grid.resolved(ctx)
    nu, wn = grid.nu_axis()
    de, wd = grid.delta_axis()
    c = _lineshape_cells(ctx, de, wd)
    support = _z_support(ctx)
    z, wz = grid.z_axis(support, n_z)
    ws = ctx.omega_s0 + nu[:, None, None]
    Om = ctx.Omega0 + de[None, :, None]
    zz = z[None, None, :]
    mode = ctx.geometry.mode
    if mode is GeometryMode.ONE_D_BACKWARD:
        F = f1d_backward(ctx, ws, Om, zz)
    else:
        F = f1d_forward(ctx, ws, Om, zz)
        if mode is GeometryMode.THREE_D_OFFAXIS:
            F = F * offaxis_longitudinal_phase(ctx, ws, zz, ctx.geometry.phi)
    # g enters through the cell masses c_j instead of point values
    F = F / lineshape_g(ctx.lineshape, Om)
    a = np.exp(_log_apodization(ctx, z))
    w = np.sqrt(wn)[:, None, None] * np.sqrt(c)[None, :, None] * np.sqrt(wz * a)[None, None, :]
    return (F * w).reshape(len(nu), -1)


def purity_energy(ctx, grid=None):
    grid = (grid or QuadratureGrid.for_context(ctx, "energy")).resolved(ctx)
    M, c = energy_matrix(ctx, grid)
    lam = schmidt_from_matrix(M)
    return _report(lam, grid.to_dict(), "svd", "energy", {"lineshape_mass": float(c.sum())})


def purity_momentum(ctx, grid=None):
    grid = grid or QuadratureGrid.for_context(ctx, "momentum")
    M, grid = momentum_matrix(ctx, grid)
    lam = schmidt_from_matrix(M)
    return _report(lam, grid.to_dict(), "svd", "momentum", {})


# ---------------------------------------------------------------- total purity

def _phase_wavevector(ctx, nu, delta):
    """K with F ~ exp(i K z) for the geometry (pump argument omega_s + Omega)."""
    wp = ctx.omega_p0 + nu + delta
    ws = ctx.omega_s0 + nu
    kp = wavevector(ctx.medium, wp)
    ks = wavevector(ctx.medium, ws)
    mode = ctx.geometry.mode
    if mode in (GeometryMode.ONE_D_FORWARD, GeometryMode.THREE_D_COLLINEAR):
        return kp - ks
    if mode is GeometryMode.ONE_D_BACKWARD:
        return kp + ks
    return kp - math.cos(ctx.geometry.phi) * ks


def _max_delay(ctx, window):
    """max |dK/dnu| * (length of the apodized region), in seconds."""
    nu = np.linspace(-window, window, 257)
    K = _phase_wavevector(ctx, nu, 0.0)
    slope = float(np.max(np.abs(np.gradient(K, nu))))
    return slope * 2 * _z_support(ctx)


def _log_apodization(ctx, z):
    mode = ctx.geometry.mode
    z = np.asarray(z, float)
    if not mode.is_3d:
        return np.zeros_like(z)
    if mode is GeometryMode.THREE_D_COLLINEAR:
        return np.log(alpha_collinear(ctx, z) / alpha_collinear(ctx, 0.0))
    phi = ctx.geometry.phi
    return log_alpha_offaxis(ctx, z, phi) - log_alpha_offaxis(ctx, 0.0, phi)


APODIZATION_FLOOR = 1e-16


def _z_support(ctx):
    """Half-length beyond which a(z)/a(0) < 1e-16 (a is even and
    decreasing in |z|), capped at L/2."""
    half = ctx.L / 2
    if not ctx.geometry.mode.is_3d:
        return half
    target = math.log(APODIZATION_FLOOR)
    if _log_apodization(ctx, half) >= target:
        return half
    lo, hi = 0.0, half
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _log_apodization(ctx, mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * half:
            break
    return hi


def _apodization_fwhm(ctx, support):
    if not ctx.geometry.mode.is_3d:
        return math.inf
    target = math.log(0.5)
    if _log_apodization(ctx, support) >= target:
        return math.inf
    lo, hi = 0.0, support
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _log_apodization(ctx, mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo + hi


def apodization_transform(ctx, q_max, support=None):
    """Return a callable T(q) = int a(z) exp(i q z) dz for |q| <= q_max.

    1D: L sinc(qL/2) exactly.  3D: a(z) is sampled on a uniform grid and
    transformed with a cubic Filon (attenuation-factor) FFT, exact for the
    exponential and O(h^4) in the samples; the table is linearly
    interpolated on a q spacing of ~1/(1000 Z).  Returns (T, info).
    """
    Z = _z_support(ctx) if support is None else support
    if not ctx.geometry.mode.is_3d:
        L = ctx.L
        return (lambda q: L * np.sinc(np.asarray(q) * L / (2 * np.pi))), {"transform": "sinc"}
    fwhm = _apodization_fwhm(ctx, Z)
    h = min(math.pi / (1.2 * max(q_max, 1.0)), fwhm / 64 if math.isfinite(fwhm) else math.inf, 2 * Z / 1024)
    m = 1 << int(math.ceil(math.log2(2 * Z / h)))
    pad = 1 << int(math.ceil(math.log2(max(8.0, math.pi / (2.5e-3 * 1.0) / 1.0))))
    while pad * m > (1 << 23) and pad > 8:
        pad //= 2
    z = np.linspace(-Z, Z, m + 1)
    a = np.exp(_log_apodization(ctx, z))
    q, T = _filon_fft(a, -Z, Z, pad)
    keep = (q >= 0) & (q <= q_max * 1.0001 + 2 * (q[1] - q[0]))
    qt, Tt = q[keep], np.real(T[keep])
    info = {"transform": "filon_fft", "z_samples": m + 1, "fft_size": pad * m, "support": Z, "fwhm": fwhm}
    return (lambda x: np.interp(np.abs(x), qt, Tt)), info


def _filon_coefficients(th):
    th = np.asarray(th, float)
    small = np.abs(th) < 0.3
    t = np.where(small, 1.0, th)
    t2, t4 = t * t, t**4
    c, s, c2, s2 = np.cos(t), np.sin(t), np.cos(2 * t), np.sin(2 * t)
    W = (6 + t2) / (3 * t4) * (3 - 4 * c + c2)
    a0 = ((-42 + 5 * t2) + (6 + t2) * (8 * c - c2)) / (6 * t4) + 1j * ((-12 * t + 6 * t2 * t) + (6 + t2) * s2) / (6 * t4)
    a1 = (14 * (3 - t2) - 7 * (6 + t2) * c) / (6 * t4) + 1j * (30 * t - 5 * (6 + t2) * s) / (6 * t4)
    a2 = (-4 * (3 - t2) + 2 * (6 + t2) * c) / (3 * t4) + 1j * (-12 * t + 2 * (6 + t2) * s) / (3 * t4)
    a3 = (2 * (3 - t2) - (6 + t2) * c) / (6 * t4) + 1j * (6 * t - (6 + t2) * s) / (6 * t4)
    # series near theta = 0 where the closed forms cancel
    u = th
    u2, u4, u6 = u * u, u**4, u**6
    Ws = 1 - 11 * u4 / 720 + 23 * u6 / 15120
    a0s = (-2 / 3 + u2 / 45 + 103 * u4 / 15120 - 169 * u6 / 226800) + 1j * u * (2 / 45 + 2 * u2 / 105 - 8 * u4 / 2835 + 86 * u6 / 467775)
    a1s = (7 / 24 - 7 * u2 / 180 + 5 * u4 / 3456 - 7 * u6 / 259200) + 1j * u * (7 / 72 - u2 / 168 + 11 * u4 / 72576 - 13 * u6 / 5987520)
    a2s = (-1 / 6 + u2 / 45 - 5 * u4 / 6048 + u6 / 64800) + 1j * u * (-7 / 90 + u2 / 210 - 11 * u4 / 90720 + 13 * u6 / 7484400)
    a3s = (1 / 24 - u2 / 180 + 5 * u4 / 24192 - u6 / 259200) + 1j * u * (7 / 360 - u2 / 840 + 11 * u4 / 362880 - 13 * u6 / 29937600)
    pick = lambda a, b: np.where(small, a, b)
    return pick(Ws, W), pick(a0s, a0), pick(a1s, a1), pick(a2s, a2), pick(a3s, a3)


def _filon_fft(f, a, b, pad):
    """int_a^b f(t) exp(i q t) dt on the FFT q grid (cubic Filon weights)."""
    m = len(f) - 1
    h = (b - a) / m
    n = pad * m
    buf = np.zeros(n, complex)
    buf[: m + 1] = f
    F = np.fft.ifft(buf) * n
    k = np.arange(n)
    k = np.where(k < n // 2, k, k - n)
    q = 2 * np.pi * k / (n * h)
    W, a0, a1, a2, a3 = _filon_coefficients(q * h)
    end = np.exp(1j * q * (b - a))
    val = h * np.exp(1j * q * a) * (
        W * F + a0 * f[0] + a1 * f[1] + a2 * f[2] + a3 * f[3]
        + end * (np.conj(a0) * f[m] + np.conj(a1) * f[m - 1] + np.conj(a2) * f[m - 2] + np.conj(a3) * f[m - 3])
    )
    o = np.argsort(q)
    return q[o], val[o]


def _required_nz(ctx, K, support):
    """Gauss-Legendre count for exp(i (K_i - K_i') z) a(z) on [-Z, Z]."""
    spread = float(np.max(np.ptp(K, axis=0))) if K.size else 0.0
    n = 8 + 4 * spread * (2 * support) / (2 * math.pi)
    fwhm = _apodization_fwhm(ctx, support)
    if math.isfinite(fwhm):
        n += 16 * (2 * support) / fwhm
    return int(math.ceil(n)), spread


def _total_svd(ctx, grid, nu, wn, de, c, K, n_z, support):
    z, wz = grid.z_axis(support, n_z)
    a = np.exp(_log_apodization(ctx, z))
    colw = np.sqrt(wz * a)
    amp = pump_amplitude(ctx.pump, ctx.omega_p0 + nu[:, None] + de[None, :]) * np.sqrt(c)[None, :]
    amp *= np.sqrt(wn)[:, None]
    n_env = len(de) * len(z)
    if len(nu) * n_env <= DIRECT_SVD_MAX:
        M = amp[:, :, None] * np.exp(1j * K[:, :, None] * z[None, None, :]) * colw[None, None, :]
        lam = schmidt_from_matrix(M.reshape(len(nu), n_env))
        return lam, "svd", None
    rho = np.zeros((len(nu), len(nu)), complex)
    chunk = max(1, int(DIRECT_SVD_MAX // (len(nu) * len(z))))
    for j0 in range(0, len(de), chunk):
        sl = slice(j0, j0 + chunk)
        M = amp[:, sl, None] * np.exp(1j * K[:, sl, None] * z[None, None, :]) * colw[None, None, :]
        M = M.reshape(len(nu), -1)
        rho += M @ M.conj().T
    return schmidt_from_density(rho), "svd_gram", _purity_of_density(rho)


def _choose_blocks(K, nu, support, window_nu):
    """Smallest block count whose neglected cross phase stays below tol.

    Within a block every delta uses the phase profile of the block's
    middle delta.  The error entering rho(nu, nu') is the change of the
    discarded phase difference over the coherence range of rho times the
    z extent.
    """
    n_d = K.shape[1]
    slope = np.abs(np.gradient(K, nu, axis=0))
    tau = float(np.max(slope)) * 2 * support
    coh = min(2 * window_nu, 8 * 2 * math.pi / tau) if tau > 0 else 2 * window_nu
    b = 1
    while True:
        parts = np.array_split(np.arange(n_d), b)
        err = 0.0
        for idx in parts:
            ref = K[:, idx[len(idx) // 2]]
            d = K[:, idx] - ref[:, None]
            dd = np.gradient(d, nu, axis=0) if len(nu) > 1 else np.zeros_like(d)
            err = max(err, float(np.max(np.abs(dd))) * coh * support)
        if err <= BLOCK_PHASE_TOL or b >= n_d:
            return parts, err
        b = min(n_d, 2 * b)


def _total_closed_form(ctx, grid, nu, wn, de, c, K, support):
    parts, err = _choose_blocks(K, nu, support, grid.window_nu)
    spread = float(np.max(np.ptp(K, axis=0)))
    T, tinfo = apodization_transform(ctx, spread, support)
    amp = pump_amplitude(ctx.pump, ctx.omega_p0 + nu[:, None] + de[None, :]) * np.sqrt(c)[None, :]
    amp *= np.sqrt(wn)[:, None]
    n = len(nu)
    rho = np.zeros((n, n))
    rows = max(1, int(4_000_000 // n))
    for idx in parts:
        A = amp[:, idx]
        ph = K[:, idx[len(idx) // 2]]
        for r0 in range(0, n, rows):
            sl = slice(r0, r0 + rows)
            G = A[sl] @ A.T
            G *= T(ph[sl, None] - ph[None, :])
            rho[sl] += G
    info = {"blocks": len(parts), "block_phase_error": err, **tinfo}
    return rho, info


def purity_total(ctx, grid=None, method="auto", spectrum=True):
    """Purity of the Stokes photon with the environment index (delta, z).

    ``method``: "auto", "svd" (uses exactly grid.n_z nodes) or
    "closed_form_z".  With ``spectrum=False`` the closed-form path skips
    the eigen-decomposition and reports only the leading coefficient set
    implied by P (used inside refinement loops).
    """
    grid = (grid or QuadratureGrid.for_context(ctx, "total")).resolved(ctx)
    nu, wn = grid.nu_axis()
    de, wd = grid.delta_axis()
    c = _lineshape_cells(ctx, de, wd)
    K = _phase_wavevector(ctx, nu[:, None], de[None, :])
    support = _z_support(ctx)
    n_req, spread = _required_nz(ctx, K, support)
    diag = {"z_support": support, "nz_required": n_req, "phase_spread": spread * 2 * support}
    n_z = grid.n_z
    if method == "auto":
        n_z = max(grid.n_z, n_req)
        method = "svd" if len(nu) * len(de) * n_z <= SVD_PATH_MAX else "closed_form_z"
    if method == "svd":
        lam, used, p = _total_svd(ctx, grid, nu, wn, de, c, K, n_z, support)
        diag["n_z_used"] = n_z
        if n_z < n_req:
            diag["z_underresolved"] = True
        rep = _report(lam, grid.to_dict(), used, "total", diag, None)
    elif method == "closed_form_z":
        rho, info = _total_closed_form(ctx, grid, nu, wn, de, c, K, support)
        diag.update(info)
        p = _purity_of_density(rho)
        if spectrum:
            lam = schmidt_from_density(rho)
        else:
            lam = np.array([1.0])
        diag["spectrum"] = bool(spectrum)
        rep = SchmidtReport(lam, p, grid.to_dict(), True, [], "closed_form_z", "total", diag)
    else:
        raise ValueError(f"unknown method {method!r}")
    return rep


# ---------------------------------------------------------------- refinement

def refine_until_converged(ctx, grid=None, tol=1e-3, kind="total", max_refinements=4, method="auto"):
    """Refine the grid until successive purities differ by < tol (relative).

    Each step alternates between doubling the counts and widening the
    windows.  The final report carries the whole history; running out of
    refinements gives converged=False.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    solver = {
        "total": lambda g, last: purity_total(ctx, g, method=method, spectrum=last),
        "energy": lambda g, last: purity_energy(ctx, g),
        "momentum": lambda g, last: purity_momentum(ctx, g),
    }[kind]
    grid = (grid or QuadratureGrid.for_context(ctx, kind)).resolved(ctx)
    if kind == "momentum":
        grid = _with_kappa(ctx, grid)
    history = []
    rep = solver(grid, False)
    history.append((grid.size(), rep.purity))
    converged = False
    for step in range(1, max_refinements + 1):
        grid = grid.refined(step)
        new = solver(grid, False)
        history.append((grid.size(), new.purity))
        if abs(new.purity - rep.purity) <= tol * abs(new.purity):
            rep, converged = new, True
            break
        rep = new
    if kind == "total" and rep.method == "closed_form_z" and not rep.diagnostics.get("spectrum", True):
        rep = solver(grid, True)
    rep.converged = converged
    rep.refinement_history = history
    return rep
