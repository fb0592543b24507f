import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgo_eit.errors import ConfigError, FootprintOverflow, MeshFailure
from cgo_eit.geometry import (
    BoxDomain,
    ElectrodeLayout,
    build_box_layout,
    face_gaps,
    interpolate_nodal,
    mesh_box,
    rebuild_layout,
)
from cgo_eit.phantoms import TANK_PATTERN


def test_surface_area_and_volume():
    d = BoxDomain(0.17, 0.255, 0.17)
    assert d.surface_area() == 2 * (0.17 * 0.255 + 0.255 * 0.17 + 0.17 * 0.17)
    assert d.volume() == pytest.approx(0.17 * 0.255 * 0.17, rel=1e-15)


@pytest.mark.parametrize("dims", [(0, 1, 1), (1, -1, 1), (1, 1, float("nan"))])
def test_box_rejects_bad_edges(dims):
    with pytest.raises(ConfigError):
        BoxDomain(*dims)


def test_tank_layout_counts_and_gaps(tank):
    assert tank.n_electrodes == 32
    faces, counts = np.unique(tank.faces, return_counts=True)
    assert dict(zip(faces.tolist(), counts.tolist())) == {0: 6, 1: 6, 2: 4, 3: 4, 4: 6, 5: 6}
    gaps = face_gaps(tank)
    # 17 cm faces carry two 8 cm electrodes: (17 - 16)/3 cm per gap
    for face, (g1, g2) in gaps.items():
        assert min(g1, g2) >= 0.0033
    assert gaps[2] == pytest.approx((0.01 / 3, 0.01 / 3))
    # 25.5 cm sides carry three electrodes: (25.5 - 24)/4 cm
    assert gaps[0][0] == pytest.approx(0.015 / 4)


def test_centers_lie_on_their_face(tank):
    dims = tank.domain.dims
    for c, f in zip(tank.centers, tank.faces):
        plane = 0.0 if f % 2 == 0 else dims[f // 2]
        assert abs(c[f // 2] - plane) < 1e-12 * dims.max()


def test_one_electrode_per_face_at_centroids():
    lay = build_box_layout(BoxDomain(1, 1, 1), {"all": 1}, 0.2)
    assert lay.n_electrodes == 6
    expected = np.array([[0, .5, .5], [1, .5, .5], [.5, 0, .5], [.5, 1, .5], [.5, .5, 0], [.5, .5, 1]])
    np.testing.assert_allclose(lay.centers, expected, atol=1e-15)


def test_mismodel_layout_scales_and_keeps_order(tank):
    big = rebuild_layout(tank, BoxDomain(0.20, 0.35, 0.25))
    np.testing.assert_array_equal(big.faces, tank.faces)
    # every centre keeps its relative position along axes with a single
    # electrode per gap pattern; the face normal coordinate moves to the wall
    for c_old, c_new, f in zip(tank.centers, big.centers, tank.faces):
        n = f // 2
        assert c_new[n] == (0.0 if f % 2 == 0 else big.domain.dims[n])
        assert np.all(c_new >= 0) and np.all(c_new <= big.domain.dims)
    assert big.n_electrodes == 32


def test_layout_overflow():
    with pytest.raises(FootprintOverflow):
        build_box_layout(BoxDomain(0.1, 0.1, 0.1), {"sides": 6}, 0.04)


def test_layout_deterministic(tank):
    again = build_box_layout(tank.domain, TANK_PATTERN, tank.side)
    assert again.centers.tobytes() == tank.centers.tobytes()


def test_layout_json_round_trip(tank, tmp_path):
    p = tmp_path / "layout.json"
    tank.save_json(p)
    back = ElectrodeLayout.load_json(p)
    np.testing.assert_array_equal(back.centers, tank.centers)
    np.testing.assert_array_equal(back.faces, tank.faces)
    assert set(json.loads(p.read_text())) == {"dims_m", "electrodes"}


def test_extended_electrode_weight(tank):
    w = tank.domain.surface_area() / tank.n_electrodes
    assert w * tank.n_electrodes == pytest.approx(tank.domain.surface_area(), rel=1e-15)


def test_tank_mesh_invariants(tank):
    mesh = mesh_box(tank.domain, tank, 0.02, 0.008)
    assert np.all(mesh.signed_volumes() > 0)
    assert mesh.volumes().sum() == pytest.approx(tank.domain.volume(), rel=1e-9)
    assert mesh.boundary_areas().sum() == pytest.approx(tank.domain.surface_area(), rel=0.01)
    el = mesh.electrode_areas(tank.n_electrodes)
    np.testing.assert_allclose(el, tank.side**2, rtol=0.02)


def test_mesh_refined_near_electrodes(tank):
    h_el = 0.01
    mesh = mesh_box(tank.domain, tank, 0.03, h_el)
    bounds = tank.footprint_bounds()
    for a, ax in enumerate(mesh.axes):
        assert np.diff(ax).max() <= 0.03 + 1e-12
        mid = 0.5 * (ax[1:] + ax[:-1])
        for lo, hi in bounds[:, a]:
            near = (mid >= lo - tank.side) & (mid <= hi + tank.side)
            assert np.diff(ax)[near].max() <= h_el + 1e-12


def test_unit_cube_volume():
    mesh = mesh_box(BoxDomain(1, 1, 1), None, 0.5)
    assert mesh.n_tets >= 6
    assert abs(mesh.volumes().sum() - 1.0) < 1e-9


def test_jittered_mesh_keeps_invariants(tank):
    mesh = mesh_box(tank.domain, tank, 0.02, 0.01, jitter=0.2, seed=3)
    plain = mesh_box(tank.domain, tank, 0.02, 0.01)
    assert np.all(mesh.signed_volumes() > 0)
    assert mesh.volumes().sum() == pytest.approx(tank.domain.volume(), rel=1e-9)
    interior = np.ones(mesh.n_nodes, bool)
    interior[mesh.boundary_nodes()] = False
    assert np.all(np.linalg.norm(mesh.nodes[interior] - plain.nodes[interior], axis=1) > 0)


def test_boundary_area_error_non_increasing_on_refinement():
    # a box whose edges are not multiples of the coarse spacing
    d = BoxDomain(0.13, 0.29, 0.17)
    errs = []
    for h in (0.08, 0.04, 0.02):
        m = mesh_box(d, None, h)
        errs.append(abs(m.boundary_areas().sum() - d.surface_area()))
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_mesh_element_cap():
    with pytest.raises(MeshFailure):
        mesh_box(BoxDomain(1, 1, 1), None, 0.05, max_elements=1000)


def test_mesh_size_order_checked(tank):
    with pytest.raises(ConfigError):
        mesh_box(tank.domain, tank, 0.01, 0.02)


def test_interpolate_linear_field_exact(tank):
    for jitter in (0.0, 0.2):
        mesh = mesh_box(tank.domain, None, 0.04, jitter=jitter, seed=1)
        f = lambda p: 1.0 + 2 * p[:, 0] - 3 * p[:, 1] + 0.5 * p[:, 2]
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (200, 3)) * tank.domain.dims
        np.testing.assert_allclose(interpolate_nodal(mesh, f(mesh.nodes), pts), f(pts), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_surface_area_formula(lx, ly, lz):
    d = BoxDomain(lx, ly, lz)
    assert d.surface_area() == 2 * (lx * ly + ly * lz + lx * lz)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.17, 0.4), st.floats(0.26, 0.5), st.floats(0.17, 0.4))
def test_layout_invariants_random_boxes(lx, ly, lz):
    lay = build_box_layout(BoxDomain(lx, ly, lz), TANK_PATTERN, 0.08)
    b = lay.footprint_bounds()
    assert np.all(b[..., 0] >= -1e-12) and np.all(b[..., 1] <= lay.domain.dims + 1e-12)
    # footprints on the same face never overlap
    for f in range(6):
        sel = np.flatnonzero(lay.faces == f)
        for i in sel:
            for j in sel[sel > i]:
                overlap = np.minimum(b[i, :, 1], b[j, :, 1]) - np.maximum(b[i, :, 0], b[j, :, 0])
                assert np.sum(overlap > 1e-12) < 3


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.3), st.floats(0.05, 0.3), st.floats(0.05, 0.3), st.floats(0.02, 0.1))
def test_mesh_volume_conservation(lx, ly, lz, h):
    d = BoxDomain(lx, ly, lz)
    m = mesh_box(d, None, h)
    assert m.volumes().sum() == pytest.approx(d.volume(), rel=1e-9)
    assert np.all(m.signed_volumes() > 0)
