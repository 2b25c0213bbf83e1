"""Command-line entry point: simulate, process, calibrate and evaluate.

Every processing error maps to its own exit code (``L1ChainError.exit_code``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationSet, SmearParams, calibrate_bbr
from .config import RunConfig, load_config
from .errors import CalibrationMissingError, DomainError, L1ChainError
from .evaluation import measure_snr, multitemporal_accuracy, power_spectrum_ratio, snr_table
from .geocal import (calibrate_geolocation, estimate_geolocation_error,
                     fit_tilt_drift)
from .geom.model import TiltSchedule
from .geom.sensor import Mode
from .products import (read_calibration, read_frames, read_product, read_scene, write_calibration,
                       write_frames, write_product, write_scene)
from .radiometry import CalibCoeffs, BandCoeffs
from .sim import (generate_scene, lab_coefficients, plan_extent, simulate_acquisition,
                  simulate_night_session, truth_on_grid)
from .tdi import TDIConfig, run_tdi

log = logging.getLogger("l1chain")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "mode", None):
        cfg = dataclasses.replace(cfg, mode=Mode.parse(args.mode).value)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _tdi_config(cfg: RunConfig, args) -> TDIConfig:
    kw = {}
    if getattr(args, "level", None):
        kw["level"] = args.level
    if getattr(args, "kernel", None):
        kw["kernel"] = args.kernel
    if getattr(args, "sigma", None) is not None:
        kw["sigma"] = args.sigma
    return dataclasses.replace(cfg.tdi, **kw)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    plan = cfg.scene
    out = _out_dir(args)
    tilt = TiltSchedule.constant(plan.tilt_deg)
    extent = plan_extent(cfg.orbit, cfg.sensor, cfg.mode, plan.frames, t0=plan.t0, tilt=tilt,
                         margin_km=plan.margin_km)
    scene = generate_scene(cfg.seed, extent, plan.bands, cell_m=plan.cell_m, slope=plan.slope,
                           contrast=plan.contrast, band_correlation=plan.band_correlation,
                           smoothing_m=plan.smoothing_m)
    stack, truth = simulate_acquisition(scene, cfg.orbit, cfg.sensor, cfg.mode, cfg.effects,
                                        n_frames=plan.frames, bands=plan.bands, t0=plan.t0,
                                        tilt=tilt, seed=cfg.seed)
    cal = CalibrationSet(version=f"lab-{cfg.seed}", sensor=cfg.sensor,
                         coeffs=lab_coefficients(plan.bands, cfg.mode),
                         provenance={"source": "simulate", "seed": cfg.seed})
    if cfg.effects.dark:
        cal.dark = simulate_night_session(cfg.sensor, cfg.mode, cfg.effects, plan.bands, cfg.orbit,
                                          seed=cfg.seed)
    if cfg.effects.smear:
        cal.smear = SmearParams(cfg.effects.integration_ms, cfg.effects.row_transfer_us)
    write_frames(out / "frames.l1x", stack)
    write_scene(out / "scene.l1x", scene)
    write_calibration(out / "calibration.l1x", cal)
    truth.save(out / "truth.json")
    print(f"simulated {len(stack)} frames x {len(stack.bands)} bands -> {out}")
    return 0


def _load_calibration(args, stack) -> CalibrationSet:
    if args.calibration:
        return read_calibration(args.calibration)
    if args.require_calibration:
        raise CalibrationMissingError("no calibration set given and --require-calibration is set")
    log.warning("no calibration set: counts are passed through as radiance")
    return CalibrationSet(version="none", sensor=stack.sensor,
                          coeffs=CalibCoeffs({b: BandCoeffs(1.0, 0.0) for b in stack.bands}))


def cmd_process(args) -> int:
    cfg = _config(args)
    stack = read_frames(args.frames)
    if args.mode and Mode.parse(args.mode) != stack.mode:
        raise DomainError(f"frames are {stack.mode.value}, not {Mode.parse(args.mode).value}")
    cal = _load_calibration(args, stack)
    tdi = _tdi_config(cfg, args)
    projection = grid = None
    if tdi.level == "L1C" and args.like:
        ref = read_product(args.like)
        grid = ref.map_grid()
        projection = grid.projection
    product = run_tdi(stack, cal, tdi, projection=projection, grid=grid,
                      strict=args.require_calibration)
    path = write_product(args.out, product, geo_decimation=args.geo_decimation)
    filled = float(np.mean(product.quality == 0))
    print(f"{product.level} {product.mode.value} {product.shape[0]}x{product.shape[1]} "
          f"bands={product.bands} filled={filled:.3f} calibration={cal.version} -> {path}")
    return 0


def cmd_calibrate_bbr(args) -> int:
    stack = read_frames(args.frames)
    cal = read_calibration(args.calibration)
    product = read_product(args.product)
    new, history = calibrate_bbr(stack, cal, product, passes=args.passes, degree=args.degree,
                                 reference_band=args.reference_band)
    print(f"{'pass':>4} {'band':>4} {'along@u=0':>10} {'across@u=0':>11} {'rms':>7} {'n':>5} flagged")
    for k, profiles in enumerate(history):
        for b, p in sorted(profiles.items()):
            if b == args.reference_band:
                continue
            a, c = p.offsets(0.0)
            print(f"{k:>4} {b:>4} {float(a):>10.3f} {float(c):>11.3f} {p.residual_rms:>7.3f} "
                  f"{p.n_points:>5} {list(p.flagged_bins)}")
    new = new.with_(version=args.version or f"{cal.version}+bbr",
                    provenance={**cal.provenance, "bbr_product": str(args.product),
                                "bbr_passes": args.passes})
    write_calibration(args.out, new)
    return 0


def cmd_calibrate_geo(args) -> int:
    stack = read_frames(args.frames)
    cal = read_calibration(args.calibration)
    product = read_product(args.product)
    scene = read_scene(args.scene)
    ref = truth_on_grid(scene, args.band, product.lat, product.lon)
    stats, residuals = estimate_geolocation_error(product, ref, band=args.band)
    print(stats.as_table())
    corr = calibrate_geolocation(residuals, cal.camera(stack, None), degree=args.degree)
    print(f"roll {corr.roll:.6e} rad  pitch {corr.pitch:.6e} rad")
    new = cal.apply_attitude(corr).with_(
        version=args.version or f"{cal.version}+geo",
        provenance={**cal.provenance, "geo_product": str(args.product)})
    write_calibration(args.out, new)
    return 0


def cmd_calibrate_tilt(args) -> int:
    cal = read_calibration(args.calibration)
    samples = np.loadtxt(args.samples, delimiter=",", ndmin=2)
    model = fit_tilt_drift(samples[:, :2])
    print(f"slope {model.slope:.6e} rad/deg  intercept {model.intercept:.6e} rad  "
          f"rms {model.residual_rms:.3e}  n={model.n}")
    new = cal.with_(tilt_drift=model, version=args.version or f"{cal.version}+tilt")
    write_calibration(args.out, new)
    return 0


def cmd_evaluate(args) -> int:
    product = read_product(args.product)
    report = {}
    if args.snr is not None:
        region = tuple(int(v) for v in args.snr.split(",")) if args.snr else None
        reps = [measure_snr(product, region, b) for b in (args.band or product.bands)]
        print(snr_table(reps))
        report["snr"] = [dataclasses.asdict(r) for r in reps]
    if args.spectrum or args.geolocation:
        if not args.scene:
            raise DomainError("--spectrum/--geolocation need --scene")
        scene = read_scene(args.scene)
        for b in (args.band or [10 if 10 in product.bands else product.bands[0]]):
            truth = truth_on_grid(scene, b, product.lat, product.lon)
            if args.spectrum:
                valid = product.valid(b) & np.isfinite(truth)
                rows = np.nonzero(valid.all(axis=1))[0]
                if rows.size < 16:
                    raise DomainError("too few fully valid lines for a spectrum")
                sel = slice(rows[0], rows[-1] + 1)
                rep = power_spectrum_ratio(product.band(b)[sel], truth[sel])
                print(f"band {b} spectrum ratios " + " ".join(f"{k}={v:.3f}" for k, v in rep.ratios.items()))
                report.setdefault("spectrum", {})[b] = rep.ratios
            if args.geolocation:
                stats, _ = estimate_geolocation_error(product, truth, band=b)
                print(stats.as_table())
                report.setdefault("geolocation", {})[b] = dataclasses.asdict(stats)
    if args.multitemporal:
        other = read_product(args.multitemporal)
        res = multitemporal_accuracy(product, other, band=(args.band or [10])[0])
        print(res.pixels.as_table())
        report["multitemporal"] = dataclasses.asdict(res.pixels)
    if not report:
        raise DomainError("nothing to evaluate: give --snr, --spectrum, --geolocation or --multitemporal")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True, default=float))
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l1chain", description="Frame-camera Level-1 processing chain")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--mode", type=str.lower, choices=("lac", "gac"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)

    s = sub.add_parser("simulate", help="synthetic scene, raw frames, truth and lab calibration")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", help="radiometric correction and ground TDI")
    common(s)
    s.add_argument("--frames", required=True)
    s.add_argument("--calibration")
    s.add_argument("--require-calibration", action="store_true")
    s.add_argument("--level", type=str.upper, choices=("L1B", "L1C"))
    s.add_argument("--kernel", type=str.lower, choices=("exp", "nn", "nnbin"))
    s.add_argument("--sigma", type=float)
    s.add_argument("--like", help="L1C product whose map grid is reused")
    s.add_argument("--geo-decimation", type=int, default=1)
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("calibrate-bbr", help="band-to-band registration against band 7")
    common(s)
    s.add_argument("--frames", required=True)
    s.add_argument("--calibration", required=True)
    s.add_argument("--product", required=True)
    s.add_argument("--reference-band", type=int, default=7)
    s.add_argument("--passes", type=int, default=1, help="estimate/reprocess iterations")
    s.add_argument("--degree", type=int, default=3, help="profile polynomial degree")
    s.add_argument("--cal-version", dest="version", help="version tag of the new set")
    s.set_defaults(func=cmd_calibrate_bbr)

    s = sub.add_parser("calibrate-geo", help="roll/pitch and interior correction from a reference scene")
    common(s)
    s.add_argument("--frames", required=True)
    s.add_argument("--calibration", required=True)
    s.add_argument("--product", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--band", type=int, default=10)
    s.add_argument("--degree", type=int, default=3)
    s.add_argument("--cal-version", dest="version", help="version tag of the new set")
    s.set_defaults(func=cmd_calibrate_geo)

    s = sub.add_parser("calibrate-tilt", help="pitch-vs-tilt drift line from tilt,pitch samples")
    common(s)
    s.add_argument("--calibration", required=True)
    s.add_argument("--samples", required=True, help="CSV of tilt_deg,pitch_residual_rad")
    s.add_argument("--cal-version", dest="version", help="version tag of the new set")
    s.set_defaults(func=cmd_calibrate_tilt)

    s = sub.add_parser("evaluate", help="SNR, spectra, geolocation and multi-temporal reports")
    common(s, out_required=False)
    s.add_argument("--product", required=True)
    s.add_argument("--band", type=int, action="append")
    s.add_argument("--snr", nargs="?", const="", default=None, help="region r0,r1,c0,c1")
    s.add_argument("--spectrum", action="store_true")
    s.add_argument("--geolocation", action="store_true")
    s.add_argument("--scene")
    s.add_argument("--multitemporal", metavar="PRODUCT_B")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except L1ChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
