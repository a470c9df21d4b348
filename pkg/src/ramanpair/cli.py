"""Command-line front end.

    ramanpair purity  --config sapphire_fig3_baseline --output report.json
    ramanpair sweep   --config fig3_bandwidth --output fig3        (fig3.csv, fig3.json)
    ramanpair ji-grid --config fig2_joint_intensity --output ji.csv
    ramanpair g2      --n1 1000 --n2 1000 --n12 100 --pulses 10000
    ramanpair fit     spectrum.txt
    ramanpair purity  --manifest-from report.json.manifest.json --output again.json

Every output file gets a ``<output>.manifest.json`` next to it holding the
resolved configuration, version, timestamp and sha256 of inputs and
outputs.  Exit codes: 0 ok, 1 configuration/usage error, 2 unconverged.
"""

import argparse
import datetime
import hashlib
import json
import os
import sys


from . import __version__
from .config import ConfigError, config_from_dict, load_config, merge_overrides
from .experiments import (
    CoincidenceRecord,
    SweepKind,
    UndefinedEstimateError,
    g2_estimate,
    joint_intensity_grid,
    purity_from_g2,
    run_sweep,
)
from .fields import LorentzianFitError, fit_lorentzian, read_spectrum
from .schmidt import refine_until_converged
from .units import UnitError

EXIT_OK, EXIT_CONFIG, EXIT_UNCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _sha256_bytes(b):
    return hashlib.sha256(b).hexdigest()


def _sha256_file(path):
    with open(path, "rb") as fh:
        return _sha256_bytes(fh.read())


def _canonical(raw):
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))


def write_manifest(command, raw, outputs, args, extra=None):
    """Write <first output>.manifest.json; returns its path."""
    man = {
        "tool": "ramanpair",
        "version": __version__,
        "command": command,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "config": raw,
        "config_sha256": _sha256_bytes(_canonical(raw).encode()) if raw is not None else None,
        "options": {"threads": args.threads, "tolerance": args.tolerance, **(extra or {})},
        "outputs": {os.path.basename(p): _sha256_file(p) for p in outputs},
    }
    path = outputs[0] + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _load(args, command):
    """Raw config document and options, from --config or --manifest-from."""
    extra = {}
    if args.manifest_from:
        with open(args.manifest_from) as fh:
            man = json.load(fh)
        if man.get("command") != command:
            raise UsageError(f"manifest was written by '{man.get('command')}', not '{command}'")
        raw = man["config"]
        extra = man.get("options", {})
        if args.tolerance is None and extra.get("tolerance") is not None:
            args.tolerance = extra["tolerance"]
        return raw, extra
    if not args.config:
        raise UsageError("--config (or --manifest-from) is required")
    raw, _ = load_config(args.config)
    return raw, extra


def _apply_cli_overrides(raw, args):
    ov = {}
    if getattr(args, "geometry", None):
        ov["geometry.mode"] = args.geometry
    if getattr(args, "fwhm", None):
        ov["pump.fwhm"] = args.fwhm
    if getattr(args, "phi", None):
        ov["geometry.phi"] = args.phi
    if getattr(args, "kind", None):
        ov["run.kind"] = args.kind
    if args.tolerance is not None:
        ov["run.tolerance"] = args.tolerance
    return merge_overrides(raw, ov) if ov else raw


def cmd_purity(args):
    raw, _ = _load(args, "purity")
    raw = _apply_cli_overrides(raw, args)
    cfg = config_from_dict(raw)
    rep = refine_until_converged(cfg.context, cfg.grid, cfg.tolerance, cfg.kind, cfg.max_refinements, cfg.method)
    out = args.output or "purity_report.json"
    with open(out, "w") as fh:
        fh.write(rep.to_json())
        fh.write("\n")
    write_manifest("purity", cfg.raw, [out], args, {"geometry": cfg.context.geometry.mode.value})
    print(f"P = {rep.purity:.6g}  K = {rep.mode_number:.6g}  g2 = {rep.g2_predicted:.6g}  "
          f"method = {rep.method}  converged = {rep.converged}  -> {out}")
    return EXIT_OK if rep.converged else EXIT_UNCONVERGED


def cmd_sweep(args):
    raw, _ = _load(args, "sweep")
    raw = _apply_cli_overrides(raw, args)
    cfg = config_from_dict(raw)
    if cfg.sweep is None:
        raise ConfigError("sweep", "missing table")
    spec = cfg.sweep
    if spec.kind is SweepKind.JOINT_INTENSITY_GRID:
        raise ConfigError("sweep.kind", "use the ji-grid subcommand for joint-intensity grids")
    table = run_sweep(spec, threads=max(1, args.threads))
    base = args.output or "sweep"
    base = os.path.splitext(base)[0] if base.endswith((".csv", ".json")) else base
    csv_path, json_path = base + ".csv", base + ".json"
    table.to_csv(csv_path)
    table.to_json(json_path)
    write_manifest("sweep", cfg.raw, [csv_path, json_path], args)
    ok = all(r[i] for r in table.rows for i, (n, _) in enumerate(table.columns) if n.startswith("converged"))
    print(f"{len(table.rows)} rows -> {csv_path}, {json_path}")
    return EXIT_OK if ok else EXIT_UNCONVERGED


def cmd_ji_grid(args):
    raw, _ = _load(args, "ji-grid")
    raw = _apply_cli_overrides(raw, args)
    cfg = config_from_dict(raw)
    ji_kind = args.ji_kind or (cfg.sweep.ji_kind if cfg.sweep is not None else "energy")
    g = joint_intensity_grid(cfg.context, ji_kind, cfg.grid)
    out = args.output or f"joint_intensity_{ji_kind}.csv"
    if out.endswith(".bin"):
        g.to_binary(out)
    else:
        g.to_csv(out)
    write_manifest("ji-grid", cfg.raw, [out], args, {"ji_kind": ji_kind})
    print(f"{ji_kind} joint intensity {g.values.shape} -> {out}")
    return EXIT_OK


def _read_counts(path):
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if i == 0 and not parts[0].lstrip("-").isdigit():
                continue  # header
            if len(parts) != 4:
                raise UsageError(f"{path}:{i + 1}: expected N1,N2,N12,R")
            rows.append(CoincidenceRecord(*(int(p) for p in parts)))
    return rows


def cmd_g2(args):
    if args.manifest_from:
        with open(args.manifest_from) as fh:
            recs = [CoincidenceRecord(*r) for r in json.load(fh)["config"]["counts"]]
    elif args.counts:
        recs = _read_counts(args.counts)
    else:
        if None in (args.n1, args.n2, args.n12, args.pulses):
            raise UsageError("give --counts FILE or all of --n1 --n2 --n12 --pulses")
        recs = [CoincidenceRecord(args.n1, args.n2, args.n12, args.pulses)]
    results = []
    for rec in recs:
        g = g2_estimate(rec)
        p = purity_from_g2(*g)
        results.append({
            "N1": rec.N1, "N2": rec.N2, "N12": rec.N12, "R": rec.R,
            "g2": g.g2, "g2_stderr": g.stderr, "stderr_flagged": g.flagged,
            "purity": p.P, "purity_stderr": p.stderr, "out_of_physical_range": p.out_of_range,
        })
        flag = " (N12 = 0: error bar uses N12 -> 1)" if g.flagged else ""
        rng = " (outside [0, 1])" if p.out_of_range else ""
        print(f"g2 = {g.g2:.6g} +/- {g.stderr:.3g}{flag}   P = {p.P:.6g} +/- {p.stderr:.3g}{rng}")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
            fh.write("\n")
        raw = {"counts": [[r["N1"], r["N2"], r["N12"], r["R"]] for r in results]}
        write_manifest("g2", raw, [args.output], args)
    return EXIT_OK


def cmd_fit(args):
    x, y = read_spectrum(args.spectrum)
    try:
        fit = fit_lorentzian(x, y)
    except LorentzianFitError as e:
        print(f"fit failed: {e}; best so far {e.best}", file=sys.stderr)
        return EXIT_UNCONVERGED
    res = {"shift_cm^-1": fit.shift0_cm, "linewidth_fwhm_cm^-1": fit.gamma_cm, "amplitude": fit.amplitude,
           "baseline": fit.baseline, "relative_rms_residual": fit.residual, "degenerate": bool(fit.degenerate)}
    print(f"shift = {fit.shift0_cm:.4f} cm^-1  FWHM = {fit.gamma_cm:.4f} cm^-1  "
          f"rms = {fit.residual:.3g}{'  (degenerate: width exceeds window)' if fit.degenerate else ''}")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(res, fh, indent=1, sort_keys=True)
            fh.write("\n")
        write_manifest("fit", {"spectrum_sha256": _sha256_file(args.spectrum)}, [args.output], args)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="config file or bundled config name")
    common.add_argument("--output", default=argparse.SUPPRESS, help="output path (sweep: base name)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="parallel sweep points")
    common.add_argument("--tolerance", type=float, default=argparse.SUPPRESS, help="relative refinement tolerance")
    common.add_argument("--manifest-from", default=argparse.SUPPRESS, help="re-run from a manifest")

    p = argparse.ArgumentParser(prog="ramanpair", parents=[common],
                                description="Photon-collective-excitation pair purity in spontaneous Raman scattering")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("purity", parents=[common], help="purity / Schmidt report for one configuration")
    sp.add_argument("--geometry", help="override geometry mode (forward, backward, collinear, offaxis)")
    sp.add_argument("--fwhm", help="override pump FWHM, e.g. '7 nm'")
    sp.add_argument("--phi", help="override collection angle, e.g. '30 deg'")
    sp.add_argument("--kind", choices=("total", "energy", "momentum"))
    sp.set_defaults(func=cmd_purity)

    sp = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV + JSON")
    sp.add_argument("--geometry")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ji-grid", parents=[common], help="joint intensity table (CSV or .bin)")
    sp.add_argument("--ji-kind", choices=("energy", "momentum"))
    sp.add_argument("--fwhm")
    sp.set_defaults(func=cmd_ji_grid)

    sp = sub.add_parser("g2", parents=[common], help="g2 and purity from coincidence counts")
    sp.add_argument("--n1", type=int)
    sp.add_argument("--n2", type=int)
    sp.add_argument("--n12", type=int)
    sp.add_argument("--pulses", type=int, help="pulse count R")
    sp.add_argument("--counts", help="CSV with rows N1,N2,N12,R")
    sp.set_defaults(func=cmd_g2)

    sp = sub.add_parser("fit", parents=[common], help="Lorentzian fit of a measured gain spectrum")
    sp.add_argument("spectrum")
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    for name, default in (("config", None), ("output", None), ("threads", 1), ("tolerance", None), ("manifest_from", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except (ConfigError, UnitError, UsageError, UndefinedEstimateError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
