"""Parameter sweeps, joint-intensity tables and coincidence (HBT) analysis."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import enum
import json
import math

import numpy as np
from scipy.optimize import brentq

from .dispersion import MediumSpec
from .fields import pump_amplitude
from .jointamp import (
    GeometryMode,
    GeometrySpec,
    JointAmplitudeGrid,
    f_energy,
    f_momentum,
    log_alpha_offaxis,
    waist_from_fresnel,
)
from .schmidt import QuadratureGrid, refine_until_converged
from .units import omega_to_wavelength, omega_to_wavenumber

__all__ = [
    "SweepKind",
    "SweepSpec",
    "SweepTable",
    "run_sweep",
    "joint_intensity_grid",
    "apodization_fwhm",
    "apodization_fwhm_curve",
    "CoincidenceRecord",
    "G2Estimate",
    "PurityEstimate",
    "UndefinedEstimateError",
    "g2_estimate",
    "purity_from_g2",
    "thermal_monte_carlo",
    "dispersionless",
]


class SweepKind(str, enum.Enum):
    BANDWIDTH = "Bandwidth"
    LENGTH = "Length"
    ANGLE = "Angle"
    FRESNEL = "Fresnel"
    APODIZATION_FWHM = "ApodizationFwhm"
    JOINT_INTENSITY_GRID = "JointIntensityGrid"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).replace("_", "").replace("-", "").lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown sweep kind {text!r}; expected one of {[m.value for m in cls]}")


# axis unit as written to the output tables (SI)
_AXIS = {
    SweepKind.BANDWIDTH: ("pump_fwhm", "rad/s"),
    SweepKind.LENGTH: ("length", "m"),
    SweepKind.ANGLE: ("phi", "rad"),
    SweepKind.FRESNEL: ("fresnel", "1"),
    SweepKind.APODIZATION_FWHM: ("phi", "rad"),
}


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter sweep over an otherwise fixed context.

    ``values`` are SI (rad/s, m, rad, or Fresnel numbers).  Fresnel sweeps
    additionally scan ``angles`` at each Fresnel number.  ``grid`` is the
    starting grid (None: default per context); ``max_refinements`` and
    ``tolerance`` control refine_until_converged.
    """

    kind: SweepKind
    values: tuple
    context: object
    angles: tuple = ()
    grid: QuadratureGrid = None
    tolerance: float = 1e-3
    max_refinements: int = 2
    purity_kind: str = "total"
    method: str = "auto"
    isolated_mechanisms: bool = True
    ji_kind: str = "energy"

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind.parse(self.kind))
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "angles", tuple(float(v) for v in self.angles))
        if self.kind is not SweepKind.JOINT_INTENSITY_GRID:
            if not vals:
                raise ValueError("sweep axis is empty")
            d = np.diff(vals)
            if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError("sweep axis must be strictly monotone")
        if self.kind is SweepKind.FRESNEL and not self.angles:
            raise ValueError("Fresnel sweeps need a non-empty 'angles' list")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class SweepTable:
    kind: str
    columns: list          # [(name, unit)]
    rows: list             # list of tuples, ordered by axis value
    meta: dict = field(default_factory=dict)

    def column(self, name):
        i = [c[0] for c in self.columns].index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{n} [{u}]" for n, u in self.columns])
            for r in self.rows:
                w.writerow([_fmt(x) for x in r])

    def to_dict(self):
        return {
            "kind": self.kind,
            "columns": [{"name": n, "unit": u} for n, u in self.columns],
            "rows": [[_jsonable(x) for x in r] for r in self.rows],
            "meta": self.meta,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["kind"], [(c["name"], c["unit"]) for c in d["columns"]], [tuple(r) for r in d["rows"]], d.get("meta", {}))


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _jsonable(x):
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def dispersionless(medium):
    """Same medium without dispersion (n = 1): no walk-off, energy effect only."""
    return MediumSpec(medium.label + "-dispersionless", (), (0.0, math.inf), medium.length,
                      medium.raman_shift, medium.linewidth, medium.reference)


def _point_context(spec, value, angle=None):
    ctx = spec.context
    k = spec.kind
    if k is SweepKind.BANDWIDTH:
        return ctx.replace(pump=replace(ctx.pump, intensity_fwhm=value))
    if k is SweepKind.LENGTH:
        return ctx.replace(medium=ctx.medium.replace(length=value))
    if k in (SweepKind.ANGLE, SweepKind.APODIZATION_FWHM):
        return ctx.replace(geometry=replace(ctx.geometry, phi=value))
    if k is SweepKind.FRESNEL:
        geo = ctx.geometry
        mode = geo.mode if geo.mode.is_3d else GeometryMode.THREE_D_OFFAXIS
        g = GeometrySpec(mode, angle if angle is not None else geo.phi,
                         waist_from_fresnel(value, ctx.k_p0, ctx.L),
                         waist_from_fresnel(value, ctx.k_s0, ctx.L))
        return ctx.replace(geometry=g)
    raise ValueError(f"no point context for sweep kind {k}")


def _solve(ctx, spec):
    grid = spec.grid
    rep = refine_until_converged(ctx, grid, spec.tolerance, spec.purity_kind, spec.max_refinements, spec.method)
    return rep.purity, rep.mode_number, rep.g2_predicted, rep.converged


def _sweep_point(args):
    spec, value, angle = args
    ctx = _point_context(spec, value, angle)
    row = [value] if angle is None else [value, angle]
    row += list(_solve(ctx, spec))
    if spec.kind is SweepKind.BANDWIDTH and spec.isolated_mechanisms:
        e_ctx = ctx.replace(medium=dispersionless(ctx.medium))
        m_ctx = ctx.replace(medium=ctx.medium.replace(linewidth=ctx.medium.linewidth / 1e3))
        pe = _solve(e_ctx, spec)
        pm = _solve(m_ctx, spec)
        row += [pe[0], pe[3], pm[0], pm[3]]
    return tuple(row)


def _apod_point(args):
    spec, value, _ = args
    ctx = _point_context(spec, value)
    return (value, apodization_fwhm(ctx, value))


def run_sweep(spec, threads=1):
    """Evaluate every axis point; rows come back ordered by axis value.

    Per-point convergence failures are flagged in the row (``converged``)
    and the sweep continues.
    """
    if spec.kind is SweepKind.JOINT_INTENSITY_GRID:
        raise ValueError("joint-intensity grids are produced by joint_intensity_grid, not run_sweep")
    name, unit = _AXIS[spec.kind]
    if spec.kind is SweepKind.APODIZATION_FWHM:
        tasks = [(spec, v, None) for v in spec.values]
        fn = _apod_point
        columns = [(name, unit), ("apodization_fwhm", "m")]
    else:
        if spec.kind is SweepKind.FRESNEL:
            tasks = [(spec, v, a) for v in spec.values for a in spec.angles]
            columns = [(name, unit), ("phi", "rad")]
        else:
            tasks = [(spec, v, None) for v in spec.values]
            columns = [(name, unit)]
        columns += [("purity", "1"), ("mode_number", "1"), ("g2", "1"), ("converged", "bool")]
        if spec.kind is SweepKind.BANDWIDTH and spec.isolated_mechanisms:
            columns += [("purity_energy_only", "1"), ("converged_energy_only", "bool"),
                        ("purity_momentum_only", "1"), ("converged_momentum_only", "bool")]
        fn = _sweep_point
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(fn, tasks))
    else:
        rows = [fn(t) for t in tasks]
    nkey = 2 if spec.kind is SweepKind.FRESNEL else 1
    order = sorted(range(len(rows)), key=lambda i: rows[i][:nkey])
    rows = [tuple(_jsonable(x) for x in rows[i]) for i in order]
    meta = {"tolerance": spec.tolerance, "max_refinements": spec.max_refinements, "purity_kind": spec.purity_kind}
    return SweepTable(spec.kind.value, columns, rows, meta)


# ---------------------------------------------------------------- joint intensity

def joint_intensity_grid(ctx, kind="energy", grid=None, n_kappa=257):
    """|f_energy|^2 over (lambda_s [nm], shift [cm^-1]) or |f_momentum|^2 over
    (lambda_s [nm], 2 pi / k_CE [um]); normalised to unit peak.

    Axes are listed in display units; the internal frequency grid is the
    uniform nu/delta (or kappa) grid of ``grid``.
    """
    grid = (grid or QuadratureGrid(129, 129, 1)).resolved(ctx)
    nu, _ = grid.nu_axis()
    ws = ctx.omega_s0 + nu
    lam_nm = omega_to_wavelength(ws) * 1e9
    if kind == "energy":
        de, _ = grid.delta_axis()
        Om = ctx.Omega0 + de
        I = np.abs(f_energy(ctx, ws[:, None], Om[None, :])) ** 2
        axes = [("stokes_wavelength", "nm", lam_nm), ("ce_shift", "cm^-1", omega_to_wavenumber(Om))]
    elif kind == "momentum":
        k0 = ctx.k_ce0
        from .schmidt import _momentum_mismatch
        phi = _momentum_mismatch(ctx, nu)
        win = grid.window_kappa or (float(np.max(np.abs(phi))) + 4 * 2 * math.pi / ctx.L)
        ka = np.linspace(-win, win, n_kappa)
        kce = k0 + ka
        I = np.abs(f_momentum(ctx, ws[:, None], kce[None, :])) ** 2
        axes = [("stokes_wavelength", "nm", lam_nm), ("ce_wavelength", "um", 2 * math.pi / kce * 1e6)]
    else:
        raise ValueError(f"joint intensity kind must be 'energy' or 'momentum', got {kind!r}")
    I = I / np.max(I)
    return JointAmplitudeGrid(axes, I.astype(complex), None, f"joint_intensity_{kind}")


# ---------------------------------------------------------------- apodization

def apodization_fwhm(ctx, phi):
    """FWHM in z of alpha(z, phi).

    alpha is even in z and decreasing in |z|, so the maximum is at z* = 0;
    the half point is bracketed by doubling and found with brentq.  The
    width is not truncated to the medium.
    """
    if not ctx.geometry.mode.is_3d:
        raise ValueError("apodization needs a 3D geometry with waists")
    ref = log_alpha_offaxis(ctx, 0.0, phi)
    f = lambda z: float(log_alpha_offaxis(ctx, z, phi) - ref - math.log(0.5))
    hi = min(ctx.z_rp, ctx.z_rf) * 1e-3
    while f(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise FloatingPointError("apodization half point not found")
    return 2 * brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def apodization_fwhm_curve(ctx, phis):
    return [(float(p), apodization_fwhm(ctx, float(p))) for p in phis]


# ---------------------------------------------------------------- HBT counting

class UndefinedEstimateError(ValueError):
    """g2 is undefined when a single-detector count is zero."""


@dataclass(frozen=True)
class CoincidenceRecord:
    N1: int
    N2: int
    N12: int
    R: int
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("N1", "N2", "N12", "R"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.R < 1:
            raise ValueError("R (pulse count) must be >= 1")
        if self.N12 > min(self.N1, self.N2):
            raise ValueError("N12 cannot exceed min(N1, N2)")


class G2Estimate(tuple):
    """(g2, stderr); ``flagged`` marks the N12 = 0 error-bar substitution."""

    def __new__(cls, g2, stderr, flagged=False):
        self = super().__new__(cls, (g2, stderr))
        self.flagged = flagged
        return self

    g2 = property(lambda self: self[0])
    stderr = property(lambda self: self[1])


class PurityEstimate(tuple):
    """(P, stderr); ``out_of_range`` when P falls outside [0, 1]."""

    def __new__(cls, P, stderr, out_of_range=False):
        self = super().__new__(cls, (P, stderr))
        self.out_of_range = out_of_range
        return self

    P = property(lambda self: self[0])
    stderr = property(lambda self: self[1])


def g2_estimate(rec):
    """g2 = N12 R / (N1 N2) with first-order Poisson error propagation."""
    if rec.N1 == 0 or rec.N2 == 0:
        raise UndefinedEstimateError("g2 undefined: a single-detector count is zero")
    g2 = rec.N12 * rec.R / (rec.N1 * rec.N2)
    flagged = rec.N12 == 0
    inv12 = 1.0 if flagged else 1.0 / rec.N12
    scale = g2 if not flagged else rec.R / (rec.N1 * rec.N2)
    err = scale * math.sqrt(inv12 + 1.0 / rec.N1 + 1.0 / rec.N2)
    return G2Estimate(g2, err, flagged)


def purity_from_g2(g2, stderr):
    P = g2 - 1.0
    return PurityEstimate(P, stderr, not (0.0 <= P <= 1.0))


def thermal_monte_carlo(n_pulses=1_000_000, mean_photons=1e-2, seed=0):
    """Counts from a single-mode thermal source on a 50/50 splitter.

    Photon number per pulse is geometric (Bose-Einstein) with the given
    mean; each photon goes to either detector with probability 1/2; the
    detectors resolve photon number with unit efficiency, so N1, N2 count
    photons and N12 counts photon pairs across the detectors.  Then
    E[N12] R / (E[N1] E[N2]) = 2 exactly.
    """
    rng = np.random.default_rng(seed)
    n = rng.geometric(1.0 / (1.0 + mean_photons), size=n_pulses) - 1
    n1 = rng.binomial(n, 0.5)
    n2 = n - n1
    N1, N2, N12 = int(n1.sum()), int(n2.sum()), int((n1 * n2).sum())
    return CoincidenceRecord(N1, N2, min(N12, N1, N2), n_pulses,
                             {"source": "thermal", "mean_photons": mean_photons, "seed": seed})
