"""
Command-line front end.

Subcommands: ``simulate``, ``reconstruct``, ``sweep``, ``evaluate``,
``validate-frames`` and ``export-vtk``.  Lengths and conductivities accept
explicit unit suffixes (``17cm``, ``24mS/m``); bare numbers are SI.  Exit
codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dn import frame_diagnostics, load_frames
from .errors import ConfigError, DataError, EITError
from .forward import save_patterns
from .geometry import ElectrodeLayout
from .metrics import DEFAULT_THRESHOLD, evaluate_recon
from .phantoms import (MISMODEL_DIMS, Phantom, Scenario, Sphere, mismodel_scenario, simulate_scenario,
                       standard_scenario)
from .pipeline import (SCHEMA_VERSION, MethodParams, ModelMeshSpec, RunConfig, check_outputs, prepare,
                       reconstruct, run_sweep, write_result, write_sweep)
from .voxel import VoxelGrid

log = logging.getLogger("cgo_eit")

_LENGTH_UNITS = {"m": 1.0, "cm": 1e-2, "mm": 1e-3}
_CONDUCTIVITY_UNITS = {"s/m": 1.0, "ms/m": 1e-3, "us/m": 1e-6}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ/]*)\s*$")


def _parse_quantity(text: str, units: dict, kind: str) -> float:
    m = _QUANTITY.match(str(text))
    if not m:
        raise ConfigError(f"cannot read {kind} {text!r}")
    value, unit = float(m.group(1)), m.group(2).lower().replace("µ", "u")
    if unit == "":
        return value
    if unit not in units:
        raise ConfigError(f"unknown {kind} unit {m.group(2)!r}; use one of {sorted(units)}")
    return value * units[unit]


def parse_length(text: str) -> float:
    """``"17cm"`` -> 0.17.  Bare numbers are metres."""
    return _parse_quantity(text, _LENGTH_UNITS, "length")


def parse_conductivity(text: str) -> float:
    """``"24mS/m"`` -> 0.024.  Bare numbers are S/m."""
    return _parse_quantity(text, _CONDUCTIVITY_UNITS, "conductivity")


def parse_point(text: str) -> tuple[float, float, float]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != 3:
        raise ConfigError(f"expected three coordinates, got {text!r}")
    return tuple(parse_length(p) for p in parts)


def parse_sphere(text: str) -> Sphere:
    """``"x,y,z,radius,sigma"`` with optional unit suffixes."""
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != 5:
        raise ConfigError(f"sphere needs x,y,z,radius,sigma; got {text!r}")
    return Sphere(tuple(parse_length(p) for p in parts[:3]), parse_length(parts[3]), parse_conductivity(parts[4]))


def parse_index(text: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"lattice target must look like 'i,j'; got {text!r}") from exc
    return i, j


def parse_values(text: str) -> list[float]:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _jobs(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("CGO_EIT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"CGO_EIT_JOBS must be an integer, got {env!r}") from exc
    return 1


# ----------------------------------------------------------------------------
# argument groups
# ----------------------------------------------------------------------------

def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic scenario")
    g.add_argument("--scenario", help="scenario JSON; omitted means the standard desk tank")
    g.add_argument("--target", action="append", type=str, metavar="I,J",
                   help="sphere at electrode-lattice position (repeatable; default 0,1)")
    g.add_argument("--sphere", action="append", type=str, metavar="X,Y,Z,R,SIGMA",
                   help="sphere by centre, radius and conductivity (repeatable)")
    g.add_argument("--background", default=None, help="background conductivity, e.g. 24mS/m")
    g.add_argument("--mismodel", choices=sorted(MISMODEL_DIMS), default=None,
                   help="reconstruct on a deliberately wrong box")
    g.add_argument("--snr", type=float, default=None, help="noise SNR in dB (default 96)")
    g.add_argument("--no-noise", action="store_true")
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--seed", type=int, default=None, help="noise RNG seed, recorded in the report")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("measured or saved data")
    g.add_argument("--data", "--frames2", dest="data", help="frame directory (I.csv, V.csv, meta.json)")
    g.add_argument("--reference", "--frames1", dest="reference", help="reference frame directory")
    g.add_argument("--layout", help="electrode layout JSON for --data")
    g.add_argument("--truth", action="append", metavar="X,Y,Z", help="true target centre (repeatable)")


def _add_method_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("calderon", "texp", "t0", "lindiff"), default="texp")
    p.add_argument("--mode", choices=("absolute", "difference"), default="absolute")
    g = p.add_argument_group("method parameters")
    g.add_argument("--tz1", type=float)
    g.add_argument("--tz2", type=float)
    g.add_argument("--mollifier-t", dest="mollifier", type=float)
    g.add_argument("--nz", type=int, help="radial Fourier nodes (Calderón)")
    g.add_argument("--ntheta", type=int)
    g.add_argument("--nphi", type=int)
    g.add_argument("--xgrid", dest="out_n", type=int, help="output voxel grid size per axis")
    g.add_argument("--txi", type=float)
    g.add_argument("--cap", type=float)
    g.add_argument("--xi-nodes", dest="xi_nodes", type=int)
    g.add_argument("--q-grid", dest="q_nodes", type=int)
    g.add_argument("--schrodinger-mesh-elems", dest="schrodinger_elements", type=int)
    g.add_argument("--std-mult", dest="std_mult", type=float)
    g.add_argument("--corr-frac", dest="corr_frac", type=float)
    g.add_argument("--cov-pct", dest="cov_pct", type=float, help="prior correlation at the given distance, percent")
    g.add_argument("--noise-snr", dest="noise_snr_db", type=float, help="SNR assumed by the linear noise model")
    g.add_argument("--threshold", type=float, help=f"segmentation fraction of the maximum (default {DEFAULT_THRESHOLD})")
    g.add_argument("--model-h", dest="model_h", default=None, help="reconstruction mesh size away from electrodes")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


# ----------------------------------------------------------------------------
# building configurations
# ----------------------------------------------------------------------------

def scenario_from_args(args) -> Scenario:
    if args.scenario:
        sc = Scenario.load_json(args.scenario)
    else:
        targets = tuple(parse_index(t) for t in (args.target or ["0,1"])) if not args.sphere else ()
        sc = standard_scenario(targets)
    if args.sphere or args.background:
        spheres = tuple(parse_sphere(s) for s in args.sphere) if args.sphere else sc.phantom.spheres
        bg = parse_conductivity(args.background) if args.background else sc.phantom.background
        sc = replace(sc, phantom=Phantom(bg, spheres))
    changes = {}
    if args.no_noise:
        changes["snr_db"] = None
    elif args.snr is not None:
        changes["snr_db"] = args.snr
    if args.frames is not None:
        changes["frames"] = args.frames
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        sc = replace(sc, **changes)
    if args.mismodel:
        sc = mismodel_scenario(args.mismodel, sc)
    return sc


def params_from_args(args) -> MethodParams:
    p = MethodParams()
    for name in ("tz1", "tz2", "mollifier", "txi", "cap", "xi_nodes", "q_nodes", "schrodinger_elements",
                 "std_mult", "corr_frac", "noise_snr_db", "threshold", "out_n"):
        v = getattr(args, name, None)
        if v is not None:
            p = p.with_value(name, v)
    if getattr(args, "cov_pct", None) is not None:
        p = p.with_value("cov_at_d", args.cov_pct / 100.0)
    nodes = [getattr(args, k, None) for k in ("nz", "ntheta", "nphi")]
    if any(v is not None for v in nodes):
        p = p.with_value("calderon_nodes", [v if v is not None else d for v, d in zip(nodes, p.calderon_nodes)])
    return p


def config_from_args(args) -> RunConfig:
    params = params_from_args(args)
    mesh = ModelMeshSpec()
    if args.model_h:
        mesh = replace(mesh, h_far=parse_length(args.model_h))
    common = dict(method=args.method, mode=args.mode, params=params, model_mesh=mesh,
                  out_dir=args.out, force=args.force, seed=args.seed)
    if args.data:
        layout = ElectrodeLayout.load_json(args.layout) if args.layout else None
        truth = tuple(parse_point(t) for t in args.truth) if args.truth else None
        return RunConfig(data_dir=args.data, reference_dir=args.reference, layout=layout, truth_centers=truth,
                         **common)
    return RunConfig(scenario=scenario_from_args(args), **common)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = scenario_from_args(args)
    out = check_outputs(args.out, ("scenario.json", "data", "reference", "layout.json"), args.force)
    sim = simulate_scenario(sc)
    meta = {"background_mS_per_m": sc.phantom.background * 1e3, "seed": sc.seed, "snr_db": sc.snr_db,
            "schema_version": SCHEMA_VERSION}
    save_patterns(out / "data", sim.data, meta, frames=sim.data_frames)
    save_patterns(out / "reference", sim.reference, meta, frames=sim.reference_frames)
    sc.save_json(out / "scenario.json")
    sc.model_layout.save_json(out / "layout.json")
    truth = sc.truth_centers().tolist() if sc.phantom.spheres else []
    print(json.dumps({"out": str(out), "frames": sc.frames, "seed": sc.seed, "truth_centers_m": truth}))
    return 0


def cmd_reconstruct(args) -> int:
    config = config_from_args(args)
    check_outputs(args.out, ("recon.vtk", "recon.csv", "report.json", "timing.json"), args.force)
    result = reconstruct(prepare(config), config)
    write_result(result, args.out, force=True)
    summary = {"out": args.out, "method": config.method, "mode": config.mode,
               "sigma_best_S_per_m": result.report["sigma_best_S_per_m"]}
    if result.metrics is not None:
        summary["metrics"] = result.metrics.to_dict()
    print(json.dumps(summary, indent=2))
    return 0


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    out = check_outputs(args.out, ("sweep.csv",), args.force)
    values = parse_values(args.values) if args.values else []
    if args.param not in MethodParams.names():
        raise ConfigError(f"unknown sweep parameter {args.param!r}; expected one of {MethodParams.names()}")
    rows = run_sweep(config, args.param, values, jobs=_jobs(args.jobs)) if values else []
    write_sweep(rows, out / "sweep.csv")
    print(f"{len(rows)} rows written to {out / 'sweep.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    recon = _load_grid(args.recon)
    truth = [parse_point(t) for t in args.truth]
    report = evaluate_recon(recon, truth, args.threshold)
    text = report.to_json()
    if args.out:
        out = check_outputs(args.out, ("metrics.json", "metrics.csv"), args.force)
        (out / "metrics.json").write_text(text)
        (out / "metrics.csv").write_text(report.to_csv())
    print(text)
    return 0


def cmd_validate_frames(args) -> int:
    patterns, meta = load_frames(args.path)
    diag = frame_diagnostics(patterns)
    diag["frame_count"] = int(meta.get("frame_count", 1) or 1)
    print(json.dumps(diag, indent=2))
    return 3 if "error" in diag else 0


def cmd_export_vtk(args) -> int:
    grid = _load_grid(args.input)
    out = Path(args.output)
    if out.exists() and not args.force:
        raise ConfigError(f"refusing to overwrite {out}; pass --force")
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.save_vtk(out)
    print(str(out))
    return 0


def _load_grid(path) -> VoxelGrid:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return VoxelGrid.load_vtk(path) if path.suffix.lower() == ".vtk" else VoxelGrid.load_csv(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgo-eit", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize noisy tank frames")
    _add_scenario_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, hlp in (("reconstruct", cmd_reconstruct, "reconstruct one conductivity image"),
                            ("sweep", cmd_sweep, "reconstruct over a list of parameter values")):
        p = sub.add_parser(name, help=hlp)
        _add_method_args(p)
        _add_scenario_args(p)
        _add_data_args(p)
        _add_output_args(p)
        if name == "sweep":
            p.add_argument("--param", required=True, help="method parameter to vary, e.g. txi")
            p.add_argument("--values", default="", help="comma-separated values")
            p.add_argument("--jobs", type=int, default=None, help="worker count (fallback: CGO_EIT_JOBS)")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="segmentation metrics of a saved reconstruction")
    p.add_argument("recon", help="recon.vtk or recon.csv")
    p.add_argument("--truth", action="append", required=True, metavar="X,Y,Z")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate-frames", help="data-quality diagnostics of a frame directory")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_frames)

    p = sub.add_parser("export-vtk", help="convert a voxel CSV to legacy VTK")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export_vtk)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EITError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
