"""
Box domains, electrode layouts and tetrahedral meshing.

The tank is an axis-aligned box ``[0, lx] x [0, ly] x [0, lz]`` (metres).
Faces are numbered 0..5 as ``x-, x+, y-, y+, z-, z+``; face ``f`` has normal
axis ``f // 2`` and sits at coordinate 0 (even ``f``) or at the edge length
(odd ``f``).  Electrodes are axis-aligned squares laid out on a regular grid
per face.

Meshes are built from a graded tensor-product grid whose lines pass through
every electrode edge, with each hexahedral cell cut into six Kuhn tetrahedra.
The result is conforming, every electrode footprint is resolved exactly by
boundary triangles, and the cell spacing drops to ``h_electrode`` everywhere
within one electrode side of an electrode.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, FootprintOverflow, MeshFailure

FACE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")
DEFAULT_CONTACT_IMPEDANCE = 1e-5  # ohm m^2
_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def face_index(face) -> int:
    if isinstance(face, (int, np.integer)):
        if not 0 <= int(face) < 6:
            raise ConfigError(f"face index out of range: {face}")
        return int(face)
    try:
        return FACE_NAMES.index(str(face))
    except ValueError:
        raise ConfigError(f"unknown face {face!r}; expected one of {FACE_NAMES}") from None


def tangential_axes(face: int) -> tuple[int, int]:
    normal = face // 2
    a1, a2 = (k for k in range(3) if k != normal)
    return a1, a2


@dataclass(frozen=True)
class BoxDomain:
    """Interior of a rectangular tank, edge lengths in metres."""

    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        for name in ("lx", "ly", "lz"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"box edge {name} must be positive, got {v}")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * self.dims

    def surface_area(self) -> float:
        return 2.0 * (self.lx * self.ly + self.ly * self.lz + self.lx * self.lz)

    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    def face_extent(self, face: int) -> tuple[float, float]:
        a1, a2 = tangential_axes(face)
        d = self.dims
        return float(d[a1]), float(d[a2])


@dataclass(frozen=True)
class ElectrodeLayout:
    """Square electrodes on the faces of a box.

    ``pattern`` remembers the per-face electrode counts so that the same
    arrangement can be rebuilt on a different box.
    """

    domain: BoxDomain
    centers: np.ndarray
    side: float
    faces: np.ndarray
    z: np.ndarray
    pattern: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen(self.centers))
        object.__setattr__(self, "faces", _frozen(self.faces, dtype=int))
        z = np.broadcast_to(np.asarray(self.z, dtype=float), (len(self.faces),))
        object.__setattr__(self, "z", _frozen(z))
        self._validate()

    @property
    def n_electrodes(self) -> int:
        return len(self.faces)

    @property
    def area(self) -> float:
        return self.side**2

    def _validate(self):
        c, f = self.centers, self.faces
        if c.ndim != 2 or c.shape[1] != 3 or len(c) != len(f):
            raise ConfigError("centers must be an L x 3 array matching faces")
        if len(f) < 2:
            raise ConfigError("at least two electrodes are required")
        if np.any(self.z <= 0):
            raise ConfigError("contact impedances must be positive")
        if not self.side > 0:
            raise ConfigError("electrode side must be positive")
        dims = self.domain.dims
        tol = _TOL * dims.max()
        half = 0.5 * self.side
        for ell, (p, face) in enumerate(zip(c, f)):
            normal = face // 2
            plane = 0.0 if face % 2 == 0 else dims[normal]
            if abs(p[normal] - plane) > tol:
                raise ConfigError(f"electrode {ell} is not on face {FACE_NAMES[face]}")
            for a in tangential_axes(face):
                if p[a] - half < -tol or p[a] + half > dims[a] + tol:
                    raise FootprintOverflow(f"electrode {ell} crosses the edge of its face")
        for i, j in itertools.combinations(range(len(f)), 2):
            if f[i] != f[j]:
                continue
            d = np.abs(c[i] - c[j])
            a1, a2 = tangential_axes(f[i])
            if d[a1] < self.side - tol and d[a2] < self.side - tol:
                raise FootprintOverflow(f"electrodes {i} and {j} overlap")

    def footprint_bounds(self) -> np.ndarray:
        """Per electrode and axis, the closed interval covered (L x 3 x 2)."""
        lo = self.centers.copy()
        hi = self.centers.copy()
        for ell, face in enumerate(self.faces):
            for a in tangential_axes(face):
                lo[ell, a] -= 0.5 * self.side
                hi[ell, a] += 0.5 * self.side
        return np.stack([lo, hi], axis=-1)

    def to_dict(self) -> dict:
        return {
            "dims_m": [float(v) for v in self.domain.dims],
            "electrodes": [
                {
                    "center_m": [float(v) for v in p],
                    "side_m": float(self.side),
                    "face": FACE_NAMES[int(f)],
                    "z_ohm_m2": float(z),
                }
                for p, f, z in zip(self.centers, self.faces, self.z)
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ElectrodeLayout":
        try:
            domain = BoxDomain(*[float(v) for v in d["dims_m"]])
            els = d["electrodes"]
            centers = [e["center_m"] for e in els]
            sides = {float(e["side_m"]) for e in els}
            faces = [face_index(e["face"]) for e in els]
            z = [float(e.get("z_ohm_m2", DEFAULT_CONTACT_IMPEDANCE)) for e in els]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed layout description: {exc}") from exc
        if len(sides) != 1:
            raise ConfigError("all electrodes must share one side length")
        pattern = tuple(sorted({f: faces.count(f) for f in faces}.items()))
        return cls(domain, np.array(centers, float), sides.pop(), np.array(faces), np.array(z), pattern)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load_json(cls, path) -> "ElectrodeLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _expand_pattern(domain: BoxDomain, electrodes_per_face: Mapping) -> dict[int, int]:
    """Resolve face keys.  ``ends`` means the two faces normal to the longest
    axis, ``sides`` the remaining four."""
    longest = int(np.argmax(domain.dims))
    out: dict[int, int] = {}
    for key, count in electrodes_per_face.items():
        if key == "ends":
            faces = [2 * longest, 2 * longest + 1]
        elif key == "sides":
            faces = [f for f in range(6) if f // 2 != longest]
        elif key == "all":
            faces = list(range(6))
        else:
            faces = [face_index(key)]
        for f in faces:
            out[f] = int(count)
    return {f: n for f, n in sorted(out.items()) if n > 0}


def _face_grid(n: int, len1: float, len2: float) -> tuple[int, int]:
    pairs = [(a, n // a) for a in range(1, n + 1) if n % a == 0]
    a, b = min(pairs, key=lambda p: (abs(p[0] - p[1]), p[0] > p[1]))
    small, large = min(a, b), max(a, b)
    return (large, small) if len1 > len2 else (small, large)


def build_box_layout(
    domain: BoxDomain,
    electrodes_per_face: Mapping,
    side: float,
    z: float | np.ndarray = DEFAULT_CONTACT_IMPEDANCE,
) -> ElectrodeLayout:
    """Place square electrodes on a regular grid on each face.

    Gaps are equal along each tangential axis of a face,
    ``gap = (face_len - n * side) / (n + 1)``.  Electrodes are ordered by
    face index and then row-major (first tangential axis outer).
    """
    pattern = _expand_pattern(domain, electrodes_per_face)
    centers, faces = [], []
    for face, n in pattern.items():
        a1, a2 = tangential_axes(face)
        len1, len2 = domain.face_extent(face)
        n1, n2 = _face_grid(n, len1, len2)
        g1 = (len1 - n1 * side) / (n1 + 1)
        g2 = (len2 - n2 * side) / (n2 + 1)
        if g1 < 0 or g2 < 0:
            raise FootprintOverflow(
                f"{n} electrodes of side {side} do not fit face {FACE_NAMES[face]} ({len1} x {len2})"
            )
        normal = face // 2
        plane = 0.0 if face % 2 == 0 else domain.dims[normal]
        for i in range(n1):
            for j in range(n2):
                p = np.zeros(3)
                p[normal] = plane
                p[a1] = g1 + 0.5 * side + i * (side + g1)
                p[a2] = g2 + 0.5 * side + j * (side + g2)
                centers.append(p)
                faces.append(face)
    return ElectrodeLayout(
        domain, np.array(centers), float(side), np.array(faces, dtype=int),
        np.asarray(z, dtype=float), tuple(pattern.items()),
    )


def rebuild_layout(layout: ElectrodeLayout, domain: BoxDomain) -> ElectrodeLayout:
    """Same per-face arrangement, side and impedances on another box."""
    return build_box_layout(domain, dict(layout.pattern), layout.side, layout.z)


def face_gaps(layout: ElectrodeLayout) -> dict[int, tuple[float, float]]:
    """Per face, the equalized gap along each tangential axis."""
    out = {}
    for face, n in layout.pattern:
        len1, len2 = layout.domain.face_extent(face)
        n1, n2 = _face_grid(n, len1, len2)
        out[face] = ((len1 - n1 * layout.side) / (n1 + 1), (len2 - n2 * layout.side) / (n2 + 1))
    return out


# ----------------------------------------------------------------------------
# tetrahedral mesh
# ----------------------------------------------------------------------------

# Kuhn decomposition of the unit cube; corner b has offset (b & 1, b >> 1 & 1, b >> 2 & 1).
_KUHN = []
for _perm in itertools.permutations(range(3)):
    _path = [0]
    for _a in _perm:
        _path.append(_path[-1] | (1 << _a))
    _KUHN.append(_path)
_KUHN = np.array(_KUHN)


@dataclass(frozen=True)
class TetMesh:
    """Conforming tetrahedral mesh with tagged boundary triangles.

    ``btags[i]`` is ``ell + 1`` when boundary triangle ``i`` lies under
    electrode ``ell`` and 0 otherwise.  ``axes`` holds the tensor grid the
    mesh was cut from; ``structured`` is False once interior nodes have been
    perturbed.
    """

    nodes: np.ndarray
    tets: np.ndarray
    bfaces: np.ndarray
    btags: np.ndarray
    axes: tuple = ()
    structured: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes))
        object.__setattr__(self, "tets", _frozen(self.tets, dtype=np.int64))
        object.__setattr__(self, "bfaces", _frozen(self.bfaces, dtype=np.int64))
        object.__setattr__(self, "btags", _frozen(self.btags, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def signed_volumes(self) -> np.ndarray:
        p = self.nodes[self.tets]
        d = p[:, 1:] - p[:, :1]
        return np.linalg.det(d) / 6.0

    def volumes(self) -> np.ndarray:
        if "vol" not in self._cache:
            self._cache["vol"] = _frozen(self.signed_volumes())
        return self._cache["vol"]

    def boundary_areas(self) -> np.ndarray:
        p = self.nodes[self.bfaces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def electrode_areas(self, n_electrodes: int) -> np.ndarray:
        return np.bincount(self.btags, weights=self.boundary_areas(), minlength=n_electrodes + 1)[1:]

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.bfaces)

    def gradients(self) -> np.ndarray:
        """Gradients of the four barycentric basis functions per tet (E x 4 x 3)."""
        if "grad" not in self._cache:
            p = self.nodes[self.tets]
            d = p[:, 1:] - p[:, :1]                    # E x 3 x 3, rows are edges
            inv = np.linalg.inv(d)                      # columns: grads of lambda_1..3
            g123 = np.transpose(inv, (0, 2, 1))
            g0 = -g123.sum(axis=1, keepdims=True)
            g = np.concatenate([g0, g123], axis=1)
            g.setflags(write=False)
            self._cache["grad"] = g
        return self._cache["grad"]

    def element_sizes(self) -> np.ndarray:
        """Longest edge per tet."""
        p = self.nodes[self.tets]
        edges = [p[:, i] - p[:, j] for i, j in itertools.combinations(range(4), 2)]
        return np.max([np.linalg.norm(e, axis=1) for e in edges], axis=0)

    def save_vtk(self, path, point_data: Mapping[str, np.ndarray] | None = None) -> None:
        """Legacy ASCII VTK unstructured grid."""
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\ncgo_eit tetrahedral mesh\nASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {self.n_nodes} double\n")
            np.savetxt(fh, self.nodes, fmt="%.10g")
            fh.write(f"CELLS {self.n_tets} {5 * self.n_tets}\n")
            np.savetxt(fh, np.hstack([np.full((self.n_tets, 1), 4), self.tets]), fmt="%d")
            fh.write(f"CELL_TYPES {self.n_tets}\n")
            np.savetxt(fh, np.full(self.n_tets, 10), fmt="%d")
            if point_data:
                fh.write(f"POINT_DATA {self.n_nodes}\n")
                for name, values in point_data.items():
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    np.savetxt(fh, np.asarray(values, float), fmt="%.10g")


def _axis_nodes(length, breaks, near, h_far, h_el):
    pts = {0.0, float(length)}
    pts.update(float(b) for b in breaks if 0.0 < b < length)
    for a, b in near:
        pts.update(float(v) for v in (a, b) if 0.0 < v < length)
    pts = np.array(sorted(pts))
    keep = np.concatenate([[True], np.diff(pts) > 1e-9 * length])
    pts = pts[keep]
    out = [pts[0]]
    for p, q in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (p + q)
        h = h_el if any(a - 1e-12 <= mid <= b + 1e-12 for a, b in near) else h_far
        n = max(1, int(math.ceil((q - p) / h - 1e-9)))
        out.extend(np.linspace(p, q, n + 1)[1:])
    out = np.array(out)
    out[-1] = length
    return out


def _tensor_axes(domain, layout, h_far, h_el):
    dims = domain.dims
    axes = []
    for k in range(3):
        breaks, near = [], []
        if layout is not None:
            bounds = layout.footprint_bounds()
            for ell in range(layout.n_electrodes):
                lo, hi = bounds[ell, k]
                if hi > lo:
                    breaks += [lo, hi]
                near.append((lo - layout.side, hi + layout.side))
        axes.append(_axis_nodes(dims[k], breaks, near, h_far, h_el))
    return axes


def mesh_box(
    domain: BoxDomain,
    layout: ElectrodeLayout | None,
    h_far: float,
    h_electrode: float | None = None,
    jitter: float = 0.0,
    seed: int = 0,
    max_elements: int = 3_000_000,
) -> TetMesh:
    """Tetrahedral mesh of ``domain`` refined near the electrodes of ``layout``.

    ``jitter`` moves interior nodes by up to that fraction of the local grid
    spacing (seeded), which gives meshes that share no node positions with an
    unperturbed mesh of the same box.
    """
    h_el = h_far if h_electrode is None else h_electrode
    if not (0 < h_el <= h_far):
        raise ConfigError("mesh sizes must satisfy 0 < h_electrode <= h_far")
    axes = _tensor_axes(domain, layout, h_far, h_el)
    shape = tuple(len(a) for a in axes)
    n_tets = 6 * (shape[0] - 1) * (shape[1] - 1) * (shape[2] - 1)
    if n_tets > max_elements:
        raise MeshFailure(f"mesh would have {n_tets} elements (cap {max_elements})")

    nx, ny, nz = shape
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")])

    i, j, k = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    base = (i + nx * (j + ny * k)).ravel()
    corner = np.array([(b & 1) + nx * ((b >> 1) & 1) + nx * ny * ((b >> 2) & 1) for b in range(8)])
    tets = (base[:, None, None] + corner[_KUHN][None]).reshape(-1, 4)

    structured = True
    if jitter > 0:
        nodes = _jitter_nodes(nodes, axes, shape, tets, jitter, seed)
        structured = False

    mesh_tmp = TetMesh(nodes, tets, np.zeros((0, 3), int), np.zeros(0, int))
    vol = mesh_tmp.signed_volumes()
    neg = vol < 0
    if np.any(neg):
        tets = tets.copy()
        tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    bfaces = _boundary_faces(tets)
    btags = _tag_faces(nodes, bfaces, domain, layout)
    return TetMesh(nodes, tets, bfaces, btags, tuple(_frozen(a) for a in axes), structured)


def _jitter_nodes(nodes, axes, shape, tets, jitter, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    nodes = nodes.copy()
    idx = [np.arange(n) for n in shape]
    I, J, K = np.meshgrid(*idx, indexing="ij")
    ijk = np.column_stack([I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F")])
    interior = np.all((ijk > 0) & (ijk < np.array(shape) - 1), axis=1)
    local = np.empty((len(nodes), 3))
    for a in range(3):
        gaps = np.diff(axes[a])
        left = np.concatenate([[np.inf], gaps])
        right = np.concatenate([gaps, [np.inf]])
        local[:, a] = np.minimum(left, right)[ijk[:, a]]
    shift = rng.uniform(-1.0, 1.0, size=nodes.shape) * local
    scale = jitter
    for _ in range(8):
        trial = nodes.copy()
        trial[interior] += scale * shift[interior]
        p = trial[tets]
        vol = np.linalg.det(p[:, 1:] - p[:, :1])
        ref = np.linalg.det(nodes[tets][:, 1:] - nodes[tets][:, :1])
        if np.all(np.sign(vol) == np.sign(ref)) and np.all(np.abs(vol) > 0.05 * np.abs(ref)):
            return trial
        scale *= 0.5
    raise MeshFailure("could not perturb interior nodes without inverting elements")


def _boundary_faces(tets):
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 3, 2]], tets[:, [0, 1, 3]], tets[:, [0, 2, 1]]])
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inv.ravel()] == 1]


def _tag_faces(nodes, bfaces, domain, layout):
    tags = np.zeros(len(bfaces), dtype=np.int64)
    if layout is None or len(bfaces) == 0:
        return tags
    cent = nodes[bfaces].mean(axis=1)
    dims = domain.dims
    tol = 1e-9 * dims.max()
    half = 0.5 * layout.side
    for ell, (c, face) in enumerate(zip(layout.centers, layout.faces)):
        normal = face // 2
        plane = 0.0 if face % 2 == 0 else dims[normal]
        on = np.abs(cent[:, normal] - plane) <= tol
        for a in tangential_axes(face):
            on &= np.abs(cent[:, a] - c[a]) <= half + tol
        tags[on] = ell + 1
    return tags


# ----------------------------------------------------------------------------
# point location and P1 interpolation
# ----------------------------------------------------------------------------

def interpolate_nodal(mesh: TetMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 function with nodal ``values`` at ``points`` (M x 3).

    Points outside the mesh take the value of the nearest element's
    barycentric extension, clipped to that element.
    """
    values = np.asarray(values)
    points = np.asarray(points, float)
    if mesh.structured and mesh.axes:
        return _interp_structured(mesh, values, points)
    return _interp_search(mesh, values, points)


def _interp_structured(mesh, values, points):
    axes = mesh.axes
    shape = [len(a) for a in axes]
    idx, loc = [], []
    for a in range(3):
        ax = axes[a]
        i = np.clip(np.searchsorted(ax, points[:, a], side="right") - 1, 0, len(ax) - 2)
        t = (points[:, a] - ax[i]) / (ax[i + 1] - ax[i])
        idx.append(i)
        loc.append(np.clip(t, 0.0, 1.0))
    loc = np.column_stack(loc)
    order = np.argsort(-loc, axis=1, kind="stable")
    srt = np.take_along_axis(loc, order, axis=1)
    lam = np.column_stack([1 - srt[:, 0], srt[:, 0] - srt[:, 1], srt[:, 1] - srt[:, 2], srt[:, 2]])
    base = idx[0] + shape[0] * (idx[1] + shape[1] * idx[2])
    stride = np.array([1, shape[0], shape[0] * shape[1]])
    bshape = (-1,) + (1,) * (values.ndim - 1)
    node = base.copy()
    out = lam[:, 0].reshape(bshape) * values[node]
    for s in range(3):
        node = node + stride[order[:, s]]
        out = out + lam[:, s + 1].reshape(bshape) * values[node]
    return out


def _interp_search(mesh, values, points, chunk=20000):
    if "locator" not in mesh._cache:
        p = mesh.nodes[mesh.tets]
        d = p[:, 1:] - p[:, :1]
        mesh._cache["locator"] = (cKDTree(p.mean(axis=1)), p[:, 0], np.linalg.inv(np.transpose(d, (0, 2, 1))))
    tree, v0, tinv = mesh._cache["locator"]
    k = min(32, mesh.n_tets)
    out = np.empty((len(points),) + values.shape[1:], dtype=values.dtype)
    for s in range(0, len(points), chunk):
        pts = points[s:s + chunk]
        _, cand = tree.query(pts, k=k)
        cand = cand.reshape(len(pts), -1)
        rel = pts[:, None, :] - v0[cand]
        lam123 = np.einsum("mkij,mkj->mki", tinv[cand], rel)
        lam = np.concatenate([1 - lam123.sum(-1, keepdims=True), lam123], axis=-1)
        best = np.argmax(lam.min(axis=-1), axis=1)
        rows = np.arange(len(pts))
        tet = cand[rows, best]
        w = np.clip(lam[rows, best], 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        nv = values[mesh.tets[tet]]
        out[s:s + chunk] = np.einsum("mi,mi...->m...", w, nv)
    return out
