"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .calibration import CalibrationDataset, fit_coefficients, generate_dataset
from .config import load_scenario, scenario_hash
from .errors import CalibrationError, ConfigurationError, NearfieldError, SingularityError
from .io import write_csv, write_json
from .metrics import REPORT_COLUMNS, observation_grid, psf_cuts
from .optimizer import inject_imperfections, optimize_stack, save_stack
from .unfd import evaluate_at, resolve_threads, unfd_for_layers
from .validate import run_checks
from .wavefront import rayleigh_distance

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4

R_RAY_NOTE = ("R_ray = 2 D^2 / lambda; for D = 0.3 m and lambda = 10.714 mm this is 16.80 m, "
              "ten times the 1.68 m figure sometimes quoted for that geometry")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nearfield-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nearfield_sim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, repeatable")
        sp.add_argument("--threads", default=None, help="worker count or 'auto' "
                        "(falls back to NEARFIELD_SIM_THREADS)")
        sp.add_argument("--seed", type=int, default=None, help="imperfection RNG seed")

    sp = sub.add_parser("run", help="evaluate one (L, r) design point")
    common(sp)
    sp.add_argument("--layers", type=int, default=None)
    sp.add_argument("--distance", type=float, default=None, help="focal distance in m "
                    "(default 0.1 R_ray)")
    sp = sub.add_parser("sweep-unfd", help="distance sweep and usable boundaries per layer count")
    common(sp)
    sp.add_argument("--layers", type=int, nargs="+", default=None)
    sp = sub.add_parser("psf", help="write lateral and axial PSF cuts")
    common(sp)
    sp.add_argument("--layers", type=int, nargs="+", default=None)
    sp.add_argument("--distance", type=float, nargs="+", default=None)
    sp = sub.add_parser("calibrate", help="generate a dataset and fit model coefficients")
    common(sp)
    sp.add_argument("--settings", required=True, help="JSON settings grid with a 'fit' list")
    sp.add_argument("--dataset", default=None, help="fit an existing dataset CSV instead")
    sp = sub.add_parser("validate", help="run the built-in property checks")
    common(sp, scenario_required=False)
    sp.add_argument("--tolerance-scale", type=float, default=1.0)
    sp.add_argument("--dump", default=None, help="operator dump to verify")
    return p


def _load(args):
    config, doc = load_scenario(args.scenario, args.override)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        config = replace(config, imperfections=replace(config.imperfections, rng_seed=args.seed))
    return config, doc


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_run(args) -> int:
    config, _ = _load(args)
    h = scenario_hash(config)
    L = args.layers or config.layer_count
    r_ray = rayleigh_distance(config.aperture_diameter, config.wavelength)
    r = args.distance if args.distance is not None else 0.1 * r_ray
    if not 0 < r <= r_ray:
        raise ConfigurationError(f"distance {r:g} m must lie in (0, R_ray = {r_ray:.6g} m]")
    rep = evaluate_at(config, L, r)
    out = _outdir(args)
    write_csv(out / "focus_report.csv", REPORT_COLUMNS, [rep.row()], h)
    write_json(out / "focus_report.json", {"version": __version__, "scenario": h, "L": L,
                                           "R_ray": r_ray, "report": rep.to_dict()})
    print(f"L={L} r={r:.6g} m coherence={rep.coherence:.6f} gain_loss={rep.gain_loss_db:.4f} dB "
          f"retention_lat={rep.retention_lat:.4f} retention_ax={rep.retention_ax:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, doc = _load(args)
    if "sweep" not in doc:
        raise ConfigurationError("scenario has no 'sweep' section")
    h = scenario_hash(config)
    threads = resolve_threads(args.threads)
    counts = args.layers or list(config.sweep.layer_counts)
    reports = unfd_for_layers(config, counts, threads=threads)
    out = _outdir(args)
    for u in reports:
        write_csv(out / f"unfd_L{u.layer_count}.csv", REPORT_COLUMNS,
                  [rep.row() for rep in u.reports], h)
    write_json(out / "unfd_summary.json", {"version": __version__, "scenario": h,
                                           "results": [u.summary() for u in reports],
                                           "notes": [R_RAY_NOTE]})
    print(f"{'L':>3} {'R_gain':>10} {'R_res':>10} {'R_phi':>10} {'R_unfd':>10}  binding")
    for u in reports:
        print(f"{u.layer_count:>3} {u.R_gain:>10.4f} {u.R_res:>10.4f} {u.R_phi:>10.4f} "
              f"{u.R_unfd:>10.4f}  {u.binding_criterion}")
    print(f"R_ray = {reports[0].R_ray:.4f} m")
    return EXIT_OK


def cmd_psf(args) -> int:
    config, _ = _load(args)
    h = scenario_hash(config)
    r_ray = rayleigh_distance(config.aperture_diameter, config.wavelength)
    out = _outdir(args)
    for L in args.layers or [config.layer_count]:
        cfg = config.with_layers(L)
        for r in args.distance or [0.1 * r_ray]:
            if not 0 < r <= r_ray:
                raise ConfigurationError(f"distance {r:g} m must lie in (0, R_ray = {r_ray:.6g} m]")
            stack, _ = optimize_stack(cfg, r)
            stack = inject_imperfections(stack, cfg.imperfections, cfg.aperture_diameter)
            cuts = psf_cuts(stack, cfg, r, obs=observation_grid(cfg, r))
            for axis, cut in cuts.items():
                name = f"psf_L{L}_r{r:.6g}_{axis}.csv"
                col = "x" if axis == "lateral" else "z"
                write_csv(out / name, (col, "intensity"),
                          zip(cut.coordinates.tolist(), cut.intensity.tolist()), h)
            save_stack(stack, out / f"stack_L{L}_r{r:.6g}.json")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config, _ = _load(args)
    h = scenario_hash(config)
    try:
        settings = json.loads(Path(args.settings).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read settings {args.settings}: {exc}") from exc
    which = settings.pop("fit", None)
    if not which:
        raise ConfigurationError("settings need a non-empty 'fit' list")
    out = _outdir(args)
    if args.dataset:
        data = CalibrationDataset.from_csv(args.dataset)
    else:
        data = generate_dataset(config, settings, threads=resolve_threads(args.threads))
    cols = list(data.columns)
    write_csv(out / "calibration_dataset.csv", cols,
              ([float(data.columns[c][i]) for c in cols] for i in range(len(data))), h)
    fit = fit_coefficients(data, which, base=config.calibration)
    write_json(out / "coefficients.json", {"version": __version__, "scenario": h,
                                           "coefficients": fit.coefficients.to_dict(),
                                           "residuals": fit.residuals})
    for name in which:
        print(f"{name:>12} = {getattr(fit.coefficients, name):.6g}  (residual {fit.residuals.get(name, 0):.3g})")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.scenario:
        config, _ = _load(args)
        from .geometry import build_aperture, feed_field
        grid = build_aperture(config)
        power = feed_field(config.feed, grid, config.wavelength).power
        scenario_ok = abs(power - config.feed.power) <= 1e-12 * config.feed.power * max(args.tolerance_scale, 0)
        print(f"{'PASS' if scenario_ok else 'FAIL'} scenario_feed_power: N={grid.size} power={power!r}")
    else:
        scenario_ok = True
    out = _outdir(args)
    results = run_checks(args.tolerance_scale, args.dump, out)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail}")
    failed = [r.name for r in results if not r.passed] + ([] if scenario_ok else ["scenario_feed_power"])
    if failed:
        print(f"validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-unfd": cmd_sweep, "psf": cmd_psf,
            "calibrate": cmd_calibrate, "validate": cmd_validate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, CalibrationError, SingularityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NearfieldError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
