import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2
from scipy.stats import f as fdist

from cgo_eit.errors import ConfigError, NoTargetsFound
from cgo_eit.geometry import BoxDomain
from cgo_eit.metrics import TRUE_LONGEST_SIDE, evaluate_recon, segment
from cgo_eit.phantoms import (
    BACKGROUND,
    TANK_DIMS,
    TARGET_RADIUS,
    TARGET_SIGMA,
    ForwardMeshSpec,
    Phantom,
    Scenario,
    Sphere,
    _noisy_frames,
    lattice_target,
    map_to_model,
    mismodel_scenario,
    simulate_scenario,
    standard_scenario,
    tank_layout,
)
from cgo_eit.voxel import VoxelGrid

TANK = BoxDomain(*TANK_DIMS)
COARSE = ForwardMeshSpec(0.04, 0.02, 0.2, 7)


def test_standard_scenario_values():
    sc = standard_scenario()
    assert tuple(sc.true_domain.dims) == TANK_DIMS
    assert sc.true_layout.n_electrodes == 32
    assert sc.phantom.background == BACKGROUND == 0.024
    (s,) = sc.phantom.spheres
    assert (s.radius, s.sigma) == (TARGET_RADIUS, TARGET_SIGMA)
    assert 2 * s.radius == pytest.approx(0.0527)
    assert (sc.snr_db, sc.frames) == (96.0, 100)


def test_mismodel_dimensions():
    base = standard_scenario()
    assert mismodel_scenario("correct", base).model_domain == base.true_domain
    np.testing.assert_array_equal(mismodel_scenario("mid", base).model_domain.dims, (0.18, 0.27, 0.19))
    large = mismodel_scenario("large", base)
    np.testing.assert_array_equal(large.model_domain.dims, (0.20, 0.35, 0.25))
    np.testing.assert_array_equal(large.model_layout.faces, base.true_layout.faces)
    with pytest.raises(ConfigError):
        mismodel_scenario("huge", base)


def test_truth_mapping():
    base = standard_scenario()
    np.testing.assert_allclose(base.truth_centers(), [s.center for s in base.phantom.spheres], atol=1e-15)
    large = mismodel_scenario("large", base)
    t = lattice_target(large.true_layout, (0, 1))
    np.testing.assert_allclose(map_to_model(t, large.true_layout, large.model_layout)[0],
                               lattice_target(large.model_layout, (0, 1)), atol=1e-12)
    corner = map_to_model(large.true_domain.dims, large.true_layout, large.model_layout)[0]
    np.testing.assert_allclose(corner, large.model_domain.dims, atol=1e-15)


def test_phantom_validation():
    with pytest.raises(ConfigError):
        Phantom(-1.0)
    with pytest.raises(ConfigError):
        Scenario(tank_layout(), tank_layout(), Phantom(0.024, (Sphere((0.01, 0.1, 0.1), 0.02, 0.29),)))
    sig = Phantom(0.024, (Sphere((0.05, 0.05, 0.05), 0.02, 0.29),)).nodal_sigma(
        np.array([[0.05, 0.05, 0.05], [0.05, 0.05, 0.0699], [0.05, 0.05, 0.0701]]))
    np.testing.assert_array_equal(sig, [0.29, 0.29, 0.024])


def test_scenario_json_round_trip(tmp_path):
    sc = mismodel_scenario("mid", standard_scenario(((0, 1), (1, 1)), snr_db=None))
    sc.save_json(tmp_path / "s.json")
    back = Scenario.load_json(tmp_path / "s.json")
    assert back.to_dict() == sc.to_dict()
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        Scenario.load_json(tmp_path / "bad.json")


def test_zero_noise_empty_tank_data_equals_reference():
    sc = Scenario(tank_layout(), tank_layout(), Phantom(BACKGROUND), None, 3, 0, COARSE)
    sim = simulate_scenario(sc)
    np.testing.assert_array_equal(sim.data.V, sim.reference.V)
    np.testing.assert_allclose(sim.data.I.sum(axis=0), 0, atol=1e-15)


def test_simulation_deterministic():
    sc = standard_scenario(frames=2, mesh=COARSE)
    a, b = simulate_scenario(sc), simulate_scenario(sc)
    assert a.data.V.tobytes() == b.data.V.tobytes()
    assert a.reference_frames.tobytes() == b.reference_frames.tobytes()


def test_doubling_frames_halves_noise_variance():
    V = np.linspace(-1.0, 1.0, 32 * 31).reshape(32, 31)
    snr, repeats = 40.0, 50
    std = np.abs(V).max() * 10 ** (-snr / 20)
    n = repeats * V.size
    lo, hi = chi2.ppf(1e-6, n) / n, chi2.ppf(1 - 1e-6, n) / n
    var = {}
    for frames in (10, 20):
        rng = np.random.Generator(np.random.Philox(key=frames))
        err = np.stack([_noisy_frames(V, snr, frames, rng).mean(axis=0) - V for _ in range(repeats)])
        var[frames] = np.mean(err**2)
        assert lo <= var[frames] / (std**2 / frames) <= hi
    f = var[20] / var[10]
    # ratio of two independent chi-square variances
    assert 0.5 * fdist.ppf(1e-6, n, n) <= f <= 0.5 * fdist.ppf(1 - 1e-6, n, n)


def _blob_grid(n=32, index=(10, 14, 9), half=1, value=1.0):
    v = np.zeros((n, n, n))
    i, j, k = index
    v[i - half:i + half + 1, j - half:j + half + 1, k - half:k + half + 1] = value
    g = VoxelGrid.for_box(TANK, v)
    centre = np.array([ax[c] for ax, c in zip(g.axes(), index)])
    return g, centre


def test_blob_at_truth_has_zero_error():
    g, c = _blob_grid()
    t = evaluate_recon(g, [c]).targets[0]
    assert t.le <= 1e-15 and t.scaled_le <= 1e-15
    assert t.max_sigma == 1.0


def test_displaced_blob_scaled_error():
    g, c = _blob_grid()
    r = evaluate_recon(g, [c + np.array([0.0, 0.01071, 0.0])])
    assert r.targets[0].scaled_le == pytest.approx(0.042, abs=1e-6)
    assert TRUE_LONGEST_SIDE == 0.255


def test_constant_recon_single_component_at_centre():
    g = VoxelGrid.for_box(TANK, np.full((16, 16, 16), 0.024))
    _, n, cent = segment(g, 0.7)
    assert n == 1
    np.testing.assert_allclose(cent[0], TANK.center, atol=1e-15)


def test_threshold_bounds_and_bad_input():
    g, c = _blob_grid()
    for frac in (0.4, 0.95):
        with pytest.raises(ConfigError):
            evaluate_recon(g, [c], frac)
    bad = VoxelGrid.for_box(TANK, np.where(g.values > 0, np.nan, 0.0))
    with pytest.raises(NoTargetsFound):
        evaluate_recon(bad, [c])


def test_unmatched_truth_reported_infinite():
    g, c = _blob_grid()
    r = evaluate_recon(g, [c, c + 0.05])
    assert r.n_components == 1
    assert r.targets[0].le <= 1e-15
    assert math.isinf(r.targets[1].scaled_le) and r.targets[1].centroid is None
    d = json.loads(r.to_json())
    assert d["targets"][1]["scaled_le"] is None


def test_greedy_matching_two_targets():
    v = np.zeros((32, 32, 32))
    v[5:8, 5:8, 5:8] = 1.0
    v[20:23, 20:23, 20:23] = 0.9
    g = VoxelGrid.for_box(TANK, v)
    ax = g.axes()
    a = np.array([ax[0][6], ax[1][6], ax[2][6]])
    b = np.array([ax[0][21], ax[1][21], ax[2][21]])
    r = evaluate_recon(g, [b, a])
    assert r.n_components == 2
    assert r.targets[0].le <= 1e-15 and r.targets[1].le <= 1e-15
    assert (r.targets[0].max_sigma, r.targets[1].max_sigma) == (0.9, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.floats(-1.0, 1.0)] * 3), st.tuples(*[st.floats(-0.01, 0.01)] * 3))
def test_scaled_error_translation_invariant(shift, offset):
    g, c = _blob_grid()
    shift = np.array(shift)
    truth = c + np.array(offset)
    base = evaluate_recon(g, [truth]).targets[0].scaled_le
    moved = VoxelGrid(g.values, g.origin + shift, g.extent)
    assert evaluate_recon(moved, [truth + shift]).targets[0].scaled_le == pytest.approx(base, abs=1e-12)


def test_digitized_sphere_centroid_converges():
    centre = np.array([0.061, 0.133, 0.087])
    for n in (32, 64):
        g = VoxelGrid.for_box(TANK, np.zeros((n, n, n)))
        v = (np.linalg.norm(g.points() - centre, axis=1) <= 0.02).astype(float).reshape(g.shape)
        _, k, cent = segment(VoxelGrid.for_box(TANK, v), 0.7)
        assert k == 1
        assert np.all(np.abs(cent[0] - centre) < 0.5 * g.spacing)


def test_metrics_deterministic_and_csv():
    g, c = _blob_grid()
    a, b = evaluate_recon(g, [c + 0.003]), evaluate_recon(g, [c + 0.003])
    assert a.to_json() == b.to_json()
    lines = a.to_csv().strip().splitlines()
    assert lines[0] == "threshold_frac,n_components,scaled_le_1,max_sigma_1"
    assert len(lines) == 2
