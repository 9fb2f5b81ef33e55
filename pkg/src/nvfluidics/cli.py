"""Command-line runner: ``nvf <recipe> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 the experiment
itself failed (tracking lost, fit failure, unwritable output).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dynamics, odmr
from .config import SEED_LIMIT, ConfigError, ExperimentConfig, load_config
from .recipes import RECIPES, run_recipe

log = logging.getLogger("nvfluidics")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < SEED_LIMIT:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def _vec2_um(text: str) -> np.ndarray:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y in um, got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y in um, got {text!r}")
    return np.array(parts) * 1e-6


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--seed", type=_seed, help="RNG seed (unsigned 64-bit); overrides the config")
    common.add_argument("--out", type=Path, help="output directory (default ./out/<recipe>-<seed>/)")
    common.add_argument("--force", action="store_true", help="overwrite files in an existing output directory")
    common.add_argument("--current-ma", type=float, help="coil current (mA)")

    p = argparse.ArgumentParser(prog="nvf", description="Digital twin of a microfluidic NV magnetometry experiment.")
    sub = p.add_subparsers(dest="command", required=True)

    h = sub.add_parser("hold", parents=[common], help="hold the bead in place and report positioning accuracy")
    h.add_argument("--duration", type=float, help="hold duration (s)")
    h.add_argument("--offset-um", type=_vec2_um, help="hold target x,y (um)")

    sub.add_parser("spiral", parents=[common], help="steer the bead along a square spiral")
    sub.add_parser("height-curve", parents=[common], help="equilibrium height vs coil current")

    e = sub.add_parser("esr", parents=[common], help="ESR spectrum with the bead at one offset")
    e.add_argument("--offset-um", type=_vec2_um, help="bead offset x,y from the NV (um)")
    e.add_argument("--dwell-s", type=float, help="dwell per frequency point (s)")

    m = sub.add_parser("map", parents=[common], help="acquire a field map and fit the dipole model")
    m.add_argument("--dwell-s", type=float, help="dwell per frequency point (s)")

    s = sub.add_parser("sensitivity", help="shot-noise-limited field sensitivity")
    s.add_argument("--config", type=Path, help="JSON experiment configuration (NV defaults)")
    s.add_argument("--contrast", type=float, help="ESR contrast C")
    s.add_argument("--fwhm-mhz", type=float, help="linewidth FWHM (MHz)")
    s.add_argument("--rate", type=float, help="photon count rate (counts/s)")
    s.add_argument("--spectrum", type=Path, help="spectrum CSV to fit for C and FWHM")

    sub.add_parser("selftest", help="run the acceptance checks")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    world = cfg.world
    if getattr(args, "current_ma", None) is not None:
        if args.current_ma < 0:
            raise UsageError("--current-ma must be >= 0")
        world = world.with_current(args.current_ma * 1e-3)
        z0 = dynamics.equilibrium_height(world.coil.current, world)
        cfg = cfg.replace(world=world, scan=dataclasses.replace(cfg.scan, z0=z0))
    recipes = cfg.recipes
    try:
        if getattr(args, "duration", None) is not None:
            recipes = dataclasses.replace(recipes, hold=dataclasses.replace(recipes.hold, duration=args.duration))
        if getattr(args, "offset_um", None) is not None:
            if args.command == "hold":
                recipes = dataclasses.replace(recipes, hold=dataclasses.replace(recipes.hold, target=args.offset_um))
            else:
                recipes = dataclasses.replace(recipes, esr=dataclasses.replace(recipes.esr, offset=args.offset_um))
        odmr_cfg = cfg.odmr
        if getattr(args, "dwell_s", None) is not None:
            odmr_cfg = dataclasses.replace(odmr_cfg, dwell_per_point=args.dwell_s)
    except ValueError as exc:
        raise UsageError(f"invalid option: {exc}") from None
    return cfg.replace(recipes=recipes, odmr=odmr_cfg)


def _check_hold_duration(cfg: ExperimentConfig) -> None:
    frames = round(cfg.recipes.hold.duration * cfg.world.camera.frame_rate)
    if frames < 10:
        raise UsageError(f"hold duration {cfg.recipes.hold.duration:g} s is shorter than 10 camera frames")


def _prepare_out(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        out = args.out
    elif cfg.output_dir is not None:
        out = Path(cfg.output_dir) / f"{args.command}-{cfg.seed}"
    else:
        out = Path("out") / f"{args.command}-{cfg.seed}"
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sensitivity(args) -> int:
    nv = load_config(args.config).world.nv if args.config else ExperimentConfig().world.nv
    contrast, fwhm, rate = nv.contrast_amplitude, nv.linewidth_fwhm, nv.count_rate
    if args.spectrum is not None:
        fit = odmr.fit_esr(odmr.ESRSpectrum.from_csv(args.spectrum))
        contrast, fwhm = fit.contrast_amplitude, fit.fwhm
    if args.contrast is not None:
        contrast = args.contrast
    if args.fwhm_mhz is not None:
        fwhm = args.fwhm_mhz * 1e6
    if args.rate is not None:
        rate = args.rate
    eta = odmr.sensitivity(contrast, fwhm, rate)
    print(f"C = {contrast:g}, FWHM = {fwhm / 1e6:g} MHz, R = {rate:g} counts/s")
    print(f"eta_B = {eta * 1e6:.1f} uT/sqrt(Hz) ({eta * 1e6:.3f} before rounding; "
          "the 0.77 lineshape factor and rounded inputs make the last digit uncertain at the ~3% level)")
    return EXIT_OK


def _selftest() -> int:
    from .acceptance import run_all

    results = run_all(sys.stdout)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return EXIT_OK if n_fail == 0 else EXIT_RUNTIME


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NVF_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        if args.command == "sensitivity":
            return _sensitivity(args)
        if args.command == "selftest":
            return _selftest()
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _apply_overrides(cfg, args)
        if args.command == "hold":
            _check_hold_duration(cfg)
        out = _prepare_out(args, cfg)
        log.info("running %s with seed %d into %s", args.command, cfg.seed, out)
        summary = run_recipe(args.command, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, OSError) as exc:
        print(f"error: experiment failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary.format())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
