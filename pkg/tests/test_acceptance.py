"""End-to-end acceptance criteria, one test per criterion.

Every test records a single PASS/FAIL line (shown in the terminal summary)
before asserting, so a failing criterion still reports its measured values.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from cgo_eit.boundary import to_fourier_frame
from cgo_eit.calderon import FhatData, SphericalFourierGrid, inverse_transform
from cgo_eit.dn import assemble_nd_dn, build_basis, sigma_best
from cgo_eit.forward import CEMModel, mean_free_basis
from cgo_eit.geometry import BoxDomain
from cgo_eit.metrics import segment
from cgo_eit.phantoms import BACKGROUND, TANK_DIMS, Phantom, mismodel_scenario, standard_scenario
from cgo_eit.pipeline import OUTPUT_FILES, MethodParams, RunConfig, prepare, reconstruct, run_sweep, write_result
from cgo_eit.tmethods import ScatteringData, XiGrid, invert_scattering_to_q
from cgo_eit.voxel import VoxelGrid

pytestmark = pytest.mark.slow

TANK = BoxDomain(*TANK_DIMS)
CGO_METHODS = ("calderon", "texp", "t0")
MISMODEL_THRESHOLD = 0.85


def _prep_time(prep):
    return sum(prep.timing.values())


@pytest.fixture(scope="module")
def two_target_prep():
    return prepare(RunConfig(scenario=standard_scenario(((0, 1), (1, 1)))))


@pytest.fixture(scope="module")
def large_prep():
    return prepare(RunConfig(scenario=mismodel_scenario("large", standard_scenario())))


def test_criterion_1_forward_soundness(standard_prep, tank_model, acceptance_log):
    t0 = time.perf_counter()
    nd, _ = assemble_nd_dn(standard_prep.unit, build_basis(standard_prep.unit.I))
    asym = np.linalg.norm(nd.R - nd.R.T) / np.linalg.norm(nd.R)

    n = tank_model.mesh.n_nodes
    I = mean_free_basis(32)
    sigma = BACKGROUND * (1.0 + 0.5 * np.sin(25 * tank_model.mesh.nodes[:, 1]))
    V1 = tank_model.solve(sigma, I).V
    V2 = CEMModel(tank_model.mesh, replace(tank_model.layout, z=tank_model.layout.z / 2)).solve(2 * sigma, I).V
    scale_err = np.abs(V2 - V1 / 2).max() / np.abs(V1 / 2).max()

    J = tank_model.jacobian(sigma, I)
    rng = np.random.default_rng(0)
    worst = 0.0
    for j in rng.choice(n, 20, replace=False):
        d = 1e-4 * sigma[j]
        sp, sm = sigma.copy(), sigma.copy()
        sp[j] += d
        sm[j] -= d
        fd = (tank_model.solve(sp, I).stacked() - tank_model.solve(sm, I).stacked()) / (2 * d)
        worst = max(worst, np.linalg.norm(J[:, j] - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - t0 + standard_prep.timing["unit_simulation"]
    ok = asym <= 1e-8 and scale_err <= 1e-10 and worst <= 0.01 and elapsed < 300
    acceptance_log(1, ok, f"ND asymmetry {asym:.2e}, (2s, z/2) voltage error {scale_err:.2e}, "
                          f"worst Jacobian column error {worst:.2e} over 20 columns, {elapsed:.0f} s")
    assert ok


def test_criterion_2_zero_difference(standard_prep, acceptance_log):
    t0 = time.perf_counter()
    prep = replace(standard_prep, data=standard_prep.reference)
    sc = standard_scenario()
    out = {}
    for method in ("calderon", "texp", "t0", "lindiff"):
        res = reconstruct(prep, RunConfig(scenario=sc, method=method, mode="difference"))
        out[method] = (res.recon.values, res.report["sigma_best_S_per_m"])
    cal = np.abs(out["calderon"][0]).max()
    t_err = max(np.abs(out[m][0]).max() / out[m][1] for m in ("texp", "t0"))
    lin = np.abs(out["lindiff"][0]).max()
    elapsed = time.perf_counter() - t0
    ok = cal == 0.0 and t_err <= 1e-8 and lin == 0.0 and elapsed < 120
    acceptance_log(2, ok, f"Calderon max|ds| {cal:.1e}, t-methods max|s - s_best|/s_best {t_err:.1e}, "
                          f"linear difference max|ds| {lin:.1e}, {elapsed:.0f} s")
    assert ok


def test_criterion_3_sigma_best(acceptance_log):
    t0 = time.perf_counter()
    sc = replace(standard_scenario(), phantom=Phantom(BACKGROUND))
    prep = prepare(RunConfig(scenario=sc))
    sb = sigma_best(prep.unit.V, prep.data.V)
    rel = abs(sb - BACKGROUND) / BACKGROUND
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.005 and elapsed < 120
    acceptance_log(3, ok, f"sigma_best {sb * 1e3:.4f} mS/m, relative error {100 * rel:.3f}% "
                          f"(limit 0.5%), {elapsed:.0f} s")
    assert ok


def test_criterion_4_one_target(standard_prep, acceptance_log):
    t0 = time.perf_counter()
    sc = standard_scenario()
    parts, ok = [], True
    for method in CGO_METHODS:
        m = reconstruct(standard_prep, RunConfig(scenario=sc, method=method)).metrics.targets[0]
        ok &= m.scaled_le <= 0.15
        if method != "calderon":
            ok &= 0.145 <= m.max_sigma <= 0.58
        parts.append(f"{method} LE {m.scaled_le:.3f} max {m.max_sigma * 1e3:.1f} mS/m")
    elapsed = time.perf_counter() - t0 + _prep_time(standard_prep)
    ok &= elapsed < 1800
    acceptance_log(4, ok, ", ".join(parts) + f", {elapsed:.0f} s")
    assert ok


def test_criterion_5_large_mismodel(large_prep, acceptance_log):
    t0 = time.perf_counter()
    sc = mismodel_scenario("large", standard_scenario())
    params = MethodParams(threshold=MISMODEL_THRESHOLD)
    parts, ok = [], True
    for method in ("texp", "t0"):
        res = reconstruct(large_prep, RunConfig(scenario=sc, method=method, params=params))
        m = res.metrics
        n70 = segment(res.recon, 0.70)[1]
        ok &= m.n_components == 1 and m.targets[0].scaled_le <= 0.35
        parts.append(f"{method} LE {m.targets[0].scaled_le:.3f} components {m.n_components} "
                     f"at {MISMODEL_THRESHOLD:.2f} ({n70} at 0.70) max {m.targets[0].max_sigma * 1e3:.1f} mS/m")
    elapsed = time.perf_counter() - t0 + _prep_time(large_prep)
    ok &= elapsed < 1800
    acceptance_log(5, ok, ", ".join(parts) + f", {elapsed:.0f} s")
    assert ok


def test_criterion_6_two_targets(two_target_prep, acceptance_log):
    t0 = time.perf_counter()
    sc = standard_scenario(((0, 1), (1, 1)))
    parts, ok = [], True
    for method in CGO_METHODS:
        m = reconstruct(two_target_prep, RunConfig(scenario=sc, method=method)).metrics
        les = [t.scaled_le for t in m.targets]
        good = m.n_components == 2 and all(le <= 0.25 for le in les)
        ok &= good
        parts.append(f"{method} {m.n_components} components LE " + "/".join(f"{le:.3f}" for le in les))
    elapsed = time.perf_counter() - t0 + _prep_time(two_target_prep)
    ok &= elapsed < 2400
    acceptance_log(6, ok, ", ".join(parts) + f", {elapsed:.0f} s")
    assert ok


def _calderon_oracle_error():
    grid = SphericalFourierGrid()
    amp, s = 1.0, 0.4
    _, _, r = grid.nodes()
    fhat = FhatData(grid, amp * np.exp(-np.pi * s * r**2).astype(complex))
    pts = to_fourier_frame(VoxelGrid.for_box(TANK, np.zeros((16, 16, 16))).points(), TANK)
    num, _ = inverse_transform(fhat, pts)
    total = s + grid.mollifier_t

    def exact(x):
        f = lambda k: 4 * np.pi * k**2 * amp * np.exp(-np.pi * total * k**2) * np.sinc(2 * k * x)
        return quad(f, 0.0, grid.tz2, epsabs=1e-13, epsrel=1e-12)[0]
    ref = np.array([exact(x) for x in np.linalg.norm(pts, axis=1)])
    return np.abs(num - ref).max() / np.abs(ref).max()


def _tmethod_oracle_error():
    grid = XiGrid(11.0, 21)
    s = 2.0
    xi = grid.nodes()
    t = ScatteringData(grid, np.exp(-np.sum(xi**2, axis=1) / (4 * s)).reshape(21, 21, 21).astype(complex),
                       "exp", np.inf)
    q = invert_scattering_to_q(t, TANK, n=21, length_scale=0.1)

    def one_d(x):
        f = lambda k: np.cos(x * k) * np.exp(-k * k / (4 * s))
        return quad(f, -grid.txi, grid.txi, epsabs=1e-13)[0] / (2 * np.pi)
    axes = [(ax - TANK.center[k]) / 0.1 for k, ax in enumerate(q.grid.axes())]
    g = [np.array([one_d(x) for x in ax]) for ax in axes]
    ref = np.einsum("i,j,k->ijk", *g) / 0.1**2
    return np.abs(q.grid.values - ref).max() / np.abs(ref).max()


def test_criterion_7_fourier_oracles(acceptance_log):
    t0 = time.perf_counter()
    cal, tm = _calderon_oracle_error(), _tmethod_oracle_error()
    elapsed = time.perf_counter() - t0
    ok = cal <= 0.01 and tm <= 0.01 and elapsed < 60
    acceptance_log(7, ok, f"spherical Simpson error {100 * cal:.3f}%, Cartesian Simpson error {100 * tm:.3f}%, "
                          f"{elapsed:.0f} s")
    assert ok


def test_criterion_8_txi_sweep(standard_prep, acceptance_log):
    t0 = time.perf_counter()
    values = [10.5, 11.0, 11.5, 12.0]
    rows = run_sweep(RunConfig(scenario=standard_scenario(), method="texp"), "txi", values, prep=standard_prep)
    les = np.array([r["scaled_le_1"] for r in rows])
    peaks = np.array([r["max_sigma_1"] for r in rows])
    le_range = les.max() - les.min()
    peak_var = (peaks.max() - peaks.min()) / peaks.min()
    elapsed = time.perf_counter() - t0 + _prep_time(standard_prep)
    ok = le_range < 0.05 and peak_var > 0.20 and elapsed < 7200
    acceptance_log(8, ok, "texp T_xi " + ", ".join(f"{v:g}: LE {le:.3f} max {p * 1e3:.0f}"
                                                   for v, le, p in zip(values, les, peaks))
                   + f"; LE range {le_range:.3f}, max variation {100 * peak_var:.0f}%, {elapsed:.0f} s")
    assert ok


def test_criterion_9_determinism(tmp_path, acceptance_log):
    sc = standard_scenario()
    for k in range(2):
        prep = prepare(RunConfig(scenario=sc, seed=sc.seed))
        for method in ("calderon", "texp", "t0", "lindiff"):
            mode = "difference" if method == "lindiff" else "absolute"
            res = reconstruct(prep, RunConfig(scenario=sc, method=method, mode=mode))
            write_result(res, tmp_path / f"{method}_{k}")
    differing = [f"{m}/{name}" for m in ("calderon", "texp", "t0", "lindiff") for name in OUTPUT_FILES
                 if name != "timing.json"
                 and (tmp_path / f"{m}_0" / name).read_bytes() != (tmp_path / f"{m}_1" / name).read_bytes()]
    ok = not differing
    acceptance_log(9, ok, "recon.vtk, recon.csv and report.json bitwise identical across reruns for all four methods"
                   if ok else "differing outputs: " + ", ".join(differing))
    assert ok
