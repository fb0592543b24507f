"""
End-to-end runs: data (simulated or loaded) -> DN matrices -> chosen method
-> metrics -> files.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import calderon, lindiff, tmethods
from .boundary import boundary_data
from .dn import assemble_nd_dn, build_basis, load_frames, sigma_best
from .errors import ConfigError, EITError
from .forward import CEMModel, PatternSet
from .geometry import ElectrodeLayout, interpolate_nodal, mesh_box
from .metrics import DEFAULT_THRESHOLD, TRUE_LONGEST_SIDE, MetricsReport, evaluate_recon
from .phantoms import Scenario, simulate_scenario
from .voxel import VoxelGrid

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
METHODS = ("calderon", "texp", "t0", "lindiff")
MODES = ("absolute", "difference")
OUTPUT_FILES = ("recon.vtk", "recon.csv", "report.json", "timing.json")


@dataclass(frozen=True)
class MethodParams:
    tz1: float = calderon.DEFAULT_TZ1
    tz2: float = calderon.DEFAULT_TZ2
    mollifier: float = calderon.DEFAULT_MOLLIFIER
    calderon_nodes: tuple = calderon.DEFAULT_NODES
    txi: float = tmethods.DEFAULT_TXI
    cap: float = tmethods.DEFAULT_CAP
    xi_nodes: int = tmethods.DEFAULT_XI_NODES
    q_nodes: int = tmethods.DEFAULT_Q_NODES
    schrodinger_elements: int = tmethods.DEFAULT_SCHRODINGER_ELEMENTS
    std_mult: float = lindiff.DEFAULT_STD_MULT
    corr_frac: float = lindiff.DEFAULT_CORR_FRAC
    cov_at_d: float = lindiff.DEFAULT_COV_AT_D
    noise_snr_db: float = 96.0
    threshold: float = DEFAULT_THRESHOLD
    out_n: int = 64

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def with_value(self, name: str, value) -> "MethodParams":
        if name not in self.names():
            raise ConfigError(f"unknown parameter {name!r}; expected one of {self.names()}")
        current = getattr(self, name)
        if isinstance(current, tuple):
            value = tuple(int(v) for v in value)
        else:
            value = type(current)(value)
        return replace(self, **{name: value})


@dataclass(frozen=True)
class ModelMeshSpec:
    """Reconstruction-side meshes: the unit-conductivity simulation and the
    coarse Jacobian mesh for linear difference imaging."""

    h_far: float = 0.017
    h_electrode: float = 0.01
    h_jacobian: float = 0.015


@dataclass(frozen=True)
class RunConfig:
    method: str = "texp"
    mode: str = "absolute"
    scenario: Scenario | None = None
    data_dir: str | None = None
    reference_dir: str | None = None
    layout: ElectrodeLayout | None = None
    truth_centers: tuple | None = None
    params: MethodParams = field(default_factory=MethodParams)
    model_mesh: ModelMeshSpec = field(default_factory=ModelMeshSpec)
    out_dir: str | None = None
    force: bool = False
    seed: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.method == "lindiff" and self.mode != "difference":
            raise ConfigError("linear difference imaging supports difference mode only")
        if self.scenario is None and self.data_dir is None:
            raise ConfigError("either a scenario or a data directory is required")
        if self.scenario is None and self.layout is None:
            raise ConfigError("measured data needs an electrode layout")
        if self.scenario is None and self.mode == "difference" and self.reference_dir is None:
            raise ConfigError("difference mode needs reference frames")


@dataclass
class Prepared:
    """Inputs shared by every reconstruction of one data set."""

    data: PatternSet
    reference: PatternSet | None
    unit: PatternSet                 # modeled box at 1 S/m, same currents
    layout: ElectrodeLayout          # modeled layout
    truth: np.ndarray | None
    seed: int | None
    timing: dict


@dataclass
class RunResult:
    recon: VoxelGrid
    metrics: MetricsReport | None
    timing: dict
    report: dict


@contextlib.contextmanager
def _stage(name: str, timing: dict):
    t = time.perf_counter()
    try:
        yield
    except EITError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    finally:
        timing[name] = timing.get(name, 0.0) + time.perf_counter() - t


def prepare(config: RunConfig) -> Prepared:
    timing: dict = {}
    seed = config.seed
    if config.scenario is not None:
        sc = config.scenario if seed is None else replace(config.scenario, seed=seed)
        seed = sc.seed
        with _stage("simulate", timing):
            sim = simulate_scenario(sc)
        data, reference, layout = sim.data, sim.reference, sc.model_layout
        truth = sc.truth_centers() if sc.phantom.spheres else None
    else:
        with _stage("load", timing):
            data, _ = load_frames(config.data_dir)
            reference = load_frames(config.reference_dir)[0] if config.reference_dir else None
        layout = config.layout
        truth = None if config.truth_centers is None else np.asarray(config.truth_centers, float).reshape(-1, 3)
        if data.n_electrodes != layout.n_electrodes:
            raise ConfigError(f"data have {data.n_electrodes} electrodes, layout has {layout.n_electrodes}")
    with _stage("unit_simulation", timing):
        spec = config.model_mesh
        mesh = mesh_box(layout.domain, layout, spec.h_far, spec.h_electrode)
        unit = CEMModel(mesh, layout).solve(np.ones(mesh.n_nodes), data.I)
    return Prepared(data, reference, unit, layout, truth, seed, timing)


def reconstruct(prep: Prepared, config: RunConfig) -> RunResult:
    timing = dict(prep.timing)
    p = config.params
    domain = prep.layout.domain
    diag: dict = {}
    with _stage("dn_algebra", timing):
        basis = build_basis(prep.data.I)
        sb = sigma_best(prep.unit.V, prep.data.V)
        if config.mode == "difference":
            if prep.reference is None:
                raise ConfigError("difference mode needs reference data")
            sb = sigma_best(prep.unit.V, prep.reference.V)
        _, L_data = assemble_nd_dn(prep.data, basis)
        ref_set = prep.reference if config.mode == "difference" else prep.unit
        _, L_ref = assemble_nd_dn(ref_set, basis)
        ref_scale = sb if config.mode == "difference" else 1.0
        bd = boundary_data(prep.layout, basis.Q, L_data.L, L_ref.L, sigma_scale=sb, ref_scale=ref_scale)
    with _stage(config.method, timing):
        if config.method == "calderon":
            grid = calderon.SphericalFourierGrid(p.tz1, p.tz2, p.mollifier, *p.calderon_nodes)
            recon, diag = calderon.calderon_from_boundary(bd, domain, grid, config.mode, sb, out_n=p.out_n)
        elif config.method in ("texp", "t0"):
            method = "exp" if config.method == "texp" else "zero"
            mesh = tmethods.schrodinger_mesh(domain, p.schrodinger_elements)
            recon, diag = tmethods.tmethod_from_boundary(
                bd, domain, method, tmethods.XiGrid(p.txi, p.xi_nodes), p.cap, p.q_nodes, mesh, sb,
                config.mode, p.out_n)
        else:
            recon, diag = _lindiff(prep, config, sb)
    metrics = None
    if prep.truth is not None:
        with _stage("evaluate", timing):
            metrics = evaluate_recon(recon, prep.truth, p.threshold, TRUE_LONGEST_SIDE)
    report = {
        "schema_version": SCHEMA_VERSION,
        "method": config.method,
        "mode": config.mode,
        "seed": prep.seed,
        "params": _jsonable(asdict(p)),
        "model_dims_m": [float(v) for v in domain.dims],
        "sigma_best_S_per_m": sb,
        "diagnostics": _jsonable(diag),
        "metrics": None if metrics is None else metrics.to_dict(),
    }
    return RunResult(recon, metrics, timing, report)


def _lindiff(prep: Prepared, config: RunConfig, sigma0: float):
    p = config.params
    layout = prep.layout
    mesh = mesh_box(layout.domain, layout, config.model_mesh.h_jacobian)
    J = CEMModel(mesh, layout).jacobian(np.full(mesh.n_nodes, sigma0), prep.data.I)
    dV = prep.data.stacked() - prep.reference.stacked()
    noise = lindiff.NoiseModel.from_snr(prep.reference.V, prep.data.V, p.noise_snr_db)
    d = p.corr_frac * float(layout.domain.dims.max())
    prior = lindiff.build_prior(mesh.nodes, p.std_mult * sigma0, d, p.cov_at_d)
    ds = lindiff.reconstruct_linear_diff(J, dV, noise, prior)
    out = VoxelGrid.for_box(layout.domain, np.zeros((p.out_n,) * 3))
    vals = interpolate_nodal(mesh, ds, out.points()).reshape(out.shape)
    return VoxelGrid(vals, out.origin, out.extent), {"jacobian_nodes": mesh.n_nodes, "correlation_length_m": prior.a}


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, (np.floating, float)):
        v = float(d)
        return v if np.isfinite(v) else None
    if isinstance(d, np.integer):
        return int(d)
    return d


def check_outputs(out_dir, names, force: bool) -> Path:
    out = Path(out_dir)
    if not force:
        clash = [n for n in names if (out / n).exists()]
        if clash:
            raise ConfigError(f"refusing to overwrite {', '.join(clash)} in {out}; pass --force")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_result(result: RunResult, out_dir, force: bool = False) -> Path:
    out = check_outputs(out_dir, OUTPUT_FILES, force)
    result.recon.save_vtk(out / "recon.vtk")
    result.recon.save_csv(out / "recon.csv")
    with open(out / "report.json", "w") as fh:
        json.dump(result.report, fh, indent=2)
    with open(out / "timing.json", "w") as fh:
        json.dump({k: round(v, 6) for k, v in result.timing.items()}, fh, indent=2)
    return out


def run_reconstruct(config: RunConfig) -> tuple[VoxelGrid, MetricsReport | None, dict]:
    if config.out_dir is not None:
        check_outputs(config.out_dir, OUTPUT_FILES, config.force)
    t = time.perf_counter()
    result = reconstruct(prepare(config), config)
    result.timing["total"] = time.perf_counter() - t
    if config.out_dir is not None:
        write_result(result, config.out_dir, force=True)
    return result.recon, result.metrics, result.timing


def run_sweep(config: RunConfig, param: str, values, jobs: int = 1, prep: Prepared | None = None) -> list[dict]:
    """One reconstruction per value; failures become rows with an error
    label instead of aborting the sweep."""
    values = list(values)
    if not values:
        return []
    configs = [replace(config, params=config.params.with_value(param, v)) for v in values]
    prep = prep or prepare(config)

    def one(args):
        value, cfg = args
        t = time.perf_counter()
        row = {"param": param, "value": value}
        try:
            res = reconstruct(prep, cfg)
            row["max_sigma"] = float(res.recon.values.max())
            if res.metrics is not None:
                row.update(res.metrics.csv_row())
        except EITError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["runtime_s"] = time.perf_counter() - t
        return row

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, zip(values, configs)))


def write_sweep(rows: list[dict], path) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys or ["param", "value"])
        w.writeheader()
        for r in rows:
            w.writerow(r)


def load_report(path) -> dict:
    with open(path) as fh:
        rep = json.load(fh)
    ver = str(rep.get("schema_version", ""))
    if ver.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ConfigError(f"unsupported report schema version {ver!r}")
    return rep
