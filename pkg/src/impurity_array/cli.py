"""Command-line front end.

Every command writes into ``<out-dir>/<command>/<config-hash-prefix>/`` and
refuses to overwrite an existing run there unless ``--force`` is given.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import exit_time_map, position_density_sweep
from .config import (
    DIPOLE_PRESETS,
    ConfigError,
    SimulationConfig,
    apply_overrides,
    config_hash,
    load_config,
    to_dict,
)
from .dynamics import run_trajectory, run_trajectory_mobile
from .elimination import NearSingularError, plaquette_field
from . import output

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
HASH_PREFIX = 12
#: Fraction of sweep cells that must succeed for exit code 0.
SWEEP_SUCCESS_FRACTION = 0.99

log = logging.getLogger("impurity_array")


class RuntimeFailure(RuntimeError):
    """A run finished but with failed trajectories; outputs are kept."""


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (defaults if omitted)")
    p.add_argument("--out-dir", type=Path, default=Path("runs"), help="output root")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impurity-array",
        description="Semiclassical impurity motion in a subwavelength emitter array.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trajectory", help="integrate one trajectory")
    _common(p)
    p.add_argument("--mobile", action="store_true",
                   help="mobile lattice, plus a pinned-lattice reference run")

    p = sub.add_parser("sweep", help="density or exit-time sweep over initial positions")
    _common(p)
    p.add_argument("--mode", choices=["density", "exit-times"], required=True)
    p.add_argument("--grid", type=int, default=None,
                   help="starts per axis (default 25 for density, 11 for exit-times)")
    p.add_argument("--criterion", choices=["geometric", "population"], default="geometric",
                   help="exit-time criterion reported in the map")

    p = sub.add_parser("fieldmap", help="self-energy and eliminated force over the plaquette")
    _common(p)
    p.add_argument("--polarization", default="circular",
                   help=f"preset ({', '.join(DIPOLE_PRESETS)}) or a complex 3-vector "
                        "such as '1,1j,0' (normalized)")
    p.add_argument("--resolution", type=int, default=41, help="grid points per axis")
    p.add_argument("--omega", type=float, default=None,
                   help="frequency parameter (default: elimination_frequency_gamma0)")

    p = sub.add_parser("validate-config", help="check a config and print its resolved form")
    _common(p)
    return parser


def resolve_config(args) -> SimulationConfig:
    cfg = load_config(args.config) if args.config is not None else SimulationConfig()
    return apply_overrides(cfg, args.overrides)


def parse_polarization(text: str) -> tuple[str, np.ndarray]:
    if text in DIPOLE_PRESETS:
        return text, DIPOLE_PRESETS[text]
    try:
        vec = np.array([complex(s.strip().replace(" ", "")) for s in text.split(",")])
    except ValueError:
        vec = None
    if vec is None or vec.shape != (3,):
        raise ConfigError(
            f"unknown polarization {text!r}: use one of {sorted(DIPOLE_PRESETS)} "
            "or three comma-separated complex numbers"
        )
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ConfigError("polarization vector is zero")
    return "custom", vec / norm


def run_dir(args, cfg: SimulationConfig) -> Path:
    d = Path(args.out_dir) / args.command / config_hash(cfg)[:HASH_PREFIX]
    if (d / "manifest.json").exists() and not args.force:
        raise FileExistsError(f"{d} already holds a run; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_manifest(d: Path, args, cfg, files, terminations, started: float, extra=None) -> Path:
    payload = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": to_dict(cfg),
        "config_hash": config_hash(cfg),
        "version": __version__,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "duration_s": time.time() - started,
        "files": sorted({Path(f).name for f in files} | {"manifest.json"}),
        "terminations": terminations,
    }
    if extra:
        payload.update(extra)
    return output.write_json(d / "manifest.json", payload)


def cmd_trajectory(args, cfg: SimulationConfig, started: float) -> int:
    if args.mobile and not cfg.mobile_lattice:
        cfg = apply_overrides(cfg, ["mobile_lattice=true"])
    d = run_dir(args, cfg)
    if cfg.mobile_lattice:
        rec, pinned = run_trajectory_mobile(cfg)
        runs = {"trajectory": rec, "pinned": pinned}
    else:
        runs = {"trajectory": run_trajectory(cfg)}
    files = []
    for name, r in runs.items():
        files.append(output.write_trajectory_csv(r, d / f"{name}.csv"))
        files.append(output.write_trajectory_json(r, cfg, d / f"{name}.json", f"{name}.csv", name))
    summary = {name: output.trajectory_summary(r) for name, r in runs.items()}
    write_manifest(d, args, cfg, files, summary, started)
    print(d)
    errors = [f"{name}: {r.error}" for name, r in runs.items() if r.error]
    if errors:
        raise RuntimeFailure("; ".join(errors))
    return EXIT_OK


def cmd_sweep(args, cfg: SimulationConfig, started: float) -> int:
    grid = args.grid if args.grid is not None else (25 if args.mode == "density" else 11)
    if grid < 2:
        raise ConfigError(f"--grid must be >= 2, got {grid}")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    d = run_dir(args, cfg)
    if args.mode == "density":
        res = position_density_sweep(cfg, grid, grid, jobs=args.jobs)
        files = output.write_density(res, cfg, d, grid)
    else:
        res = exit_time_map(cfg, grid, jobs=args.jobs, criterion=args.criterion)
        files = output.write_exit_map(res, cfg, d)
    n_cells = grid * grid
    failed = len(res.failures)
    write_manifest(d, args, cfg, files, res.terminations, started,
                   {"mode": args.mode, "grid": grid, "jobs": args.jobs,
                    "failed_cells": failed, "cells": n_cells})
    print(d)
    if failed > (1 - SWEEP_SUCCESS_FRACTION) * n_cells:
        raise RuntimeFailure(f"{failed} of {n_cells} sweep cells failed")
    return EXIT_OK


def cmd_fieldmap(args, cfg: SimulationConfig, started: float) -> int:
    label, dipole = parse_polarization(args.polarization)
    if args.resolution < 2:
        raise ConfigError(f"--resolution must be >= 2, got {args.resolution}")
    d = run_dir(args, cfg)
    fm = plaquette_field(cfg, args.resolution, args.omega, dipole)
    stem = f"fieldmap_{label}"
    files = [output.write_fieldmap_csv(fm, d / f"{stem}.csv")]
    files.append(output.write_fieldmap_json(fm, cfg, d / f"{stem}.json", dipole, label,
                                            f"{stem}.csv"))
    write_manifest(d, args, cfg, files, {}, started,
                   {"polarization": label, "resolution": args.resolution})
    print(d)
    return EXIT_OK


def cmd_validate(args, cfg: SimulationConfig, started: float) -> int:
    print(json.dumps(to_dict(cfg), indent=2, sort_keys=True))
    print(f"config_hash {config_hash(cfg)}")
    return EXIT_OK


COMMANDS = {
    "trajectory": cmd_trajectory,
    "sweep": cmd_sweep,
    "fieldmap": cmd_fieldmap,
    "validate-config": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg, started)
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, NearSingularError, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
