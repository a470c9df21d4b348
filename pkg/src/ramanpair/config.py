"""TOML run configurations with unit-tagged quantities.

Every physical quantity is a string with a unit ("7 nm", "11.0 cm^-1",
"8 mm").  Bare numbers are accepted only for counts, tolerances, Fresnel
numbers and the dimensionless Sellmeier B coefficients.  Errors carry the
dotted path of the offending field.

Schema (all tables optional except medium and pump)::

    [medium]
    from = "sapphire"            # bundled medium config, fields below override
    label = "sapphire"
    sellmeier = [{B = 1.43, resonance = "0.0726631 um"}, ...]   # C = resonance^2
    window = ["200 nm", "5500 nm"]
    length = "8 mm"
    raman_shift = "746.6 cm^-1"
    linewidth = "11.0 cm^-1"
    reference = "free text"

    [pump]
    center_wavelength = "775 nm"
    fwhm = "7 nm"                # nm (at the center), rad/s or cm^-1
    waist = "9.5 um"             # 3D only; or geometry.fresnel

    [geometry]
    mode = "forward"             # forward | backward | collinear | offaxis
    phi = "0 deg"
    waist_f = "9 um"
    fresnel = 0.1                # sets both waists from F = 2 z_R / L

    [grid]
    n_nu = 256
    n_delta = 256
    n_z = 48
    window_nu = "2e14 rad/s"     # default 5 (Gamma + 2 sigma)
    window_delta = "2e14 rad/s"
    method = "auto"              # auto | svd | closed_form_z

    [run]
    kind = "total"               # total | energy | momentum
    tolerance = 1e-3
    max_refinements = 4

    [sweep]
    kind = "Bandwidth"           # Bandwidth | Length | Angle | Fresnel | ApodizationFwhm | JointIntensityGrid
    values = ["1 nm", "2 nm"]    # Fresnel: bare numbers
    angles = ["0 deg", "30 deg"] # Fresnel sweeps only
    isolated_mechanisms = true
    ji_kind = "energy"           # JointIntensityGrid only
"""

import copy
from importlib import resources
import math

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dispersion import MediumSpec
from .fields import PumpSpec
from .jointamp import GeometryMode, GeometrySpec, PairContext, waist_from_fresnel
from .dispersion import wavevector
from .schmidt import QuadratureGrid
from .units import UnitError, fwhm_nm_to_omega, parse_quantity, wavenumber_to_omega, wavelength_to_omega

__all__ = ["ConfigError", "RunConfig", "load_config", "load_config_text", "config_from_dict",
           "bundled_config_path", "bundled_configs", "merge_overrides"]


class ConfigError(ValueError):
    """Schema violation; ``path`` is the dotted field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


_ALLOWED = {
    "medium": {"from", "label", "sellmeier", "window", "length", "raman_shift", "linewidth", "reference"},
    "pump": {"center_wavelength", "fwhm", "waist"},
    "geometry": {"mode", "phi", "waist_f", "fresnel"},
    "grid": {"n_nu", "n_delta", "n_z", "window_nu", "window_delta", "n_kappa", "window_kappa", "method"},
    "run": {"kind", "tolerance", "max_refinements"},
    "sweep": {"kind", "values", "angles", "isolated_mechanisms", "ji_kind"},
}


def bundled_config_path(name):
    name = name if name.endswith(".toml") else name + ".toml"
    return resources.files("ramanpair") / "configs" / name


def bundled_configs():
    return sorted(p.name[:-5] for p in (resources.files("ramanpair") / "configs").iterdir() if p.name.endswith(".toml"))


class RunConfig:
    """Resolved configuration: the context, grid, run and sweep settings,
    plus the raw (unit-tagged) document it came from."""

    def __init__(self, raw, context, grid, method, kind, tolerance, max_refinements, sweep):
        self.raw = raw
        self.context = context
        self.grid = grid
        self.method = method
        self.kind = kind
        self.tolerance = tolerance
        self.max_refinements = max_refinements
        self.sweep = sweep


def _q(doc, path, dims):
    """Parse a unit-tagged quantity at ``path`` inside ``doc``."""
    try:
        return parse_quantity(doc, dims)
    except UnitError as e:
        raise ConfigError(path, str(e)) from None


def _bare(val, path, kind=float, positive=True):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(path, f"expected a bare number, got {val!r}")
    if kind is int and int(val) != val:
        raise ConfigError(path, f"expected an integer, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(path, f"must be positive, got {val!r}")
    return kind(val)


def _length(doc, path):
    return _q(doc, path, "length")[0]


def _omega(doc, path, center_nm=None):
    """Angular frequency from rad/s, cm^-1 or (with a center) nm FWHM."""
    dims = ("angular_frequency", "wavenumber") + (("length",) if center_nm is not None else ())
    v, unit, dim = _q(doc, path, dims)
    if dim == "wavenumber":
        return wavenumber_to_omega(v)
    if dim == "length":
        return fwhm_nm_to_omega(v * 1e9, center_nm)
    return v


def _angle(doc, path):
    return _q(doc, path, "angle")[0]


def _check_keys(table, name):
    if not isinstance(table, dict):
        raise ConfigError(name, "expected a table")
    extra = set(table) - _ALLOWED[name]
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")


def _medium_doc(raw):
    med = raw.get("medium")
    if med is None:
        raise ConfigError("medium", "missing table")
    _check_keys(med, "medium")
    if "from" in med:
        src = med["from"]
        try:
            base_text = bundled_config_path(src).read_text()
        except (FileNotFoundError, OSError):
            raise ConfigError("medium.from", f"no bundled medium {src!r}") from None
        base = tomllib.loads(base_text).get("medium", {})
        merged = dict(base)
        merged.update({k: v for k, v in med.items() if k != "from"})
        return merged
    return med


def _medium(med):
    for key in ("sellmeier", "window", "length", "raman_shift", "linewidth"):
        if key not in med:
            raise ConfigError(f"medium.{key}", "required field missing")
    terms = []
    if not isinstance(med["sellmeier"], list):
        raise ConfigError("medium.sellmeier", "expected a list of {B, resonance} tables")
    for i, t in enumerate(med["sellmeier"]):
        p = f"medium.sellmeier[{i}]"
        if not isinstance(t, dict) or set(t) != {"B", "resonance"}:
            raise ConfigError(p, "expected {B = <number>, resonance = '<wavelength>'}")
        B = _bare(t["B"], p + ".B", positive=False)
        lam_um = _length(t["resonance"], p + ".resonance") * 1e6
        terms.append((B, lam_um**2))
    win = med["window"]
    if not isinstance(win, list) or len(win) != 2:
        raise ConfigError("medium.window", "expected [low, high] wavelengths")
    lo, hi = (_length(w, f"medium.window[{i}]") * 1e9 for i, w in enumerate(win))
    try:
        return MediumSpec(
            str(med.get("label", "medium")), tuple(terms), (lo, hi),
            _length(med["length"], "medium.length"),
            _omega(med["raman_shift"], "medium.raman_shift"),
            _omega(med["linewidth"], "medium.linewidth"),
            str(med.get("reference", "")),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("medium", str(e)) from None


def config_from_dict(raw):
    """Resolve a parsed configuration document."""
    raw = copy.deepcopy(raw)
    extra = set(raw) - set(_ALLOWED)
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown table")
    med_doc = _medium_doc(raw)
    raw["medium"] = med_doc
    medium = _medium(med_doc)

    pump = raw.get("pump")
    if pump is None:
        raise ConfigError("pump", "missing table")
    _check_keys(pump, "pump")
    for key in ("center_wavelength", "fwhm"):
        if key not in pump:
            raise ConfigError(f"pump.{key}", "required field missing")
    lam0 = _length(pump["center_wavelength"], "pump.center_wavelength")
    fwhm = _omega(pump["fwhm"], "pump.fwhm", center_nm=lam0 * 1e9)
    waist_p = _length(pump["waist"], "pump.waist") if "waist" in pump else None

    geo = raw.get("geometry", {})
    _check_keys(geo, "geometry")
    try:
        mode = GeometryMode.parse(geo.get("mode", "forward"))
    except ValueError as e:
        raise ConfigError("geometry.mode", str(e)) from None
    phi = _angle(geo["phi"], "geometry.phi") if "phi" in geo else 0.0
    waist_f = _length(geo["waist_f"], "geometry.waist_f") if "waist_f" in geo else None
    if "fresnel" in geo:
        F = _bare(geo["fresnel"], "geometry.fresnel")
        wp0 = wavelength_to_omega(lam0)
        waist_p = waist_from_fresnel(F, wavevector(medium, wp0), medium.length)
        waist_f = waist_from_fresnel(F, wavevector(medium, wp0 - medium.raman_shift), medium.length)
    if mode.is_3d:
        if waist_p is None:
            raise ConfigError("pump.waist", f"required for geometry mode {mode.value} (or set geometry.fresnel)")
        if waist_f is None:
            raise ConfigError("geometry.waist_f", f"required for geometry mode {mode.value} (or set geometry.fresnel)")
    try:
        ctx = PairContext(medium, PumpSpec(lam0, fwhm, waist_p), GeometrySpec(mode, phi, waist_p, waist_f))
    except ValueError as e:
        raise ConfigError("geometry", str(e)) from None

    gdoc = raw.get("grid", {})
    _check_keys(gdoc, "grid")
    gkw = {}
    for key in ("n_nu", "n_delta", "n_z", "n_kappa"):
        if key in gdoc:
            gkw[key] = _bare(gdoc[key], f"grid.{key}", int)
    for key in ("window_nu", "window_delta"):
        if key in gdoc:
            gkw[key] = _omega(gdoc[key], f"grid.{key}")
    if "window_kappa" in gdoc:
        gkw["window_kappa"] = _q(gdoc["window_kappa"], "grid.window_kappa", "wavevector")[0]
    grid = QuadratureGrid(**gkw) if gkw else None
    method = gdoc.get("method", "auto")
    if method not in ("auto", "svd", "closed_form_z"):
        raise ConfigError("grid.method", f"expected auto, svd or closed_form_z, got {method!r}")

    run = raw.get("run", {})
    _check_keys(run, "run")
    kind = run.get("kind", "total")
    if kind not in ("total", "energy", "momentum"):
        raise ConfigError("run.kind", f"expected total, energy or momentum, got {kind!r}")
    tol = _bare(run.get("tolerance", 1e-3), "run.tolerance")
    max_ref = _bare(run.get("max_refinements", 4), "run.max_refinements", int, positive=False)
    if max_ref < 0:
        raise ConfigError("run.max_refinements", "must be >= 0")

    sweep = None
    if "sweep" in raw:
        sweep = _sweep(raw["sweep"], ctx, grid, tol, max_ref, kind, method)
    return RunConfig(raw, ctx, grid, method, kind, tol, max_ref, sweep)


def _sweep(doc, ctx, grid, tol, max_ref, kind, method):
    from .experiments import SweepKind, SweepSpec

    _check_keys(doc, "sweep")
    if "kind" not in doc:
        raise ConfigError("sweep.kind", "required field missing")
    try:
        skind = SweepKind.parse(doc["kind"])
    except ValueError as e:
        raise ConfigError("sweep.kind", str(e)) from None
    vals = doc.get("values", [])
    if not isinstance(vals, list):
        raise ConfigError("sweep.values", "expected a list")
    if skind is not SweepKind.JOINT_INTENSITY_GRID and not vals:
        raise ConfigError("sweep.values", "axis is empty")
    center_nm = ctx.pump.center_wavelength * 1e9
    parse = {
        SweepKind.BANDWIDTH: lambda v, p: _omega(v, p, center_nm),
        SweepKind.LENGTH: _length,
        SweepKind.ANGLE: _angle,
        SweepKind.APODIZATION_FWHM: _angle,
        SweepKind.FRESNEL: lambda v, p: _bare(v, p),
        SweepKind.JOINT_INTENSITY_GRID: lambda v, p: _bare(v, p),
    }[skind]
    values = [parse(v, f"sweep.values[{i}]") for i, v in enumerate(vals)]
    angles = [_angle(v, f"sweep.angles[{i}]") for i, v in enumerate(doc.get("angles", []))]
    if skind in (SweepKind.ANGLE, SweepKind.FRESNEL, SweepKind.APODIZATION_FWHM) and not ctx.geometry.mode.is_3d:
        raise ConfigError("geometry.mode", f"{skind.value} sweeps need a 3D geometry")
    ji_kind = doc.get("ji_kind", "energy")
    if ji_kind not in ("energy", "momentum"):
        raise ConfigError("sweep.ji_kind", f"expected energy or momentum, got {ji_kind!r}")
    try:
        return SweepSpec(skind, values, ctx, tuple(angles), grid, tol, max_ref, kind, method,
                         bool(doc.get("isolated_mechanisms", True)), ji_kind)
    except ValueError as e:
        raise ConfigError("sweep", str(e)) from None


def load_config_text(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<document>", f"TOML syntax error: {e}") from None
    return raw


def load_config(path):
    """Read a config file path or the name of a bundled config."""
    p = str(path)
    try:
        with open(p, "rb") as fh:
            text = fh.read().decode()
    except FileNotFoundError:
        try:
            text = bundled_config_path(p).read_text()
        except (FileNotFoundError, OSError):
            raise ConfigError("<config>", f"no such config file or bundled config: {p!r}") from None
    return load_config_text(text), text


def merge_overrides(raw, overrides):
    """Apply dotted-path overrides, e.g. {"geometry.mode": "backward"}."""
    raw = copy.deepcopy(raw)
    for key, val in overrides.items():
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return raw
