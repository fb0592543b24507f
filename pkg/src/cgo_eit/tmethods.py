"""
Scattering-transform reconstructions (``texp`` and ``t0``).

Pipeline: electrode DN data -> scattering data ``t(xi)`` on a Cartesian
``xi`` grid -> Schrödinger potential ``q`` by a 3D Simpson inverse Fourier
transform -> FEM solve of ``(-Laplace + q) u = 0``, ``u = 1`` on the boundary
-> conductivity ``sigma_best * u**2``.

``texp`` replaces the CGO traces by ``exp(i x.zeta)``.  ``t0`` obtains the
traces from the boundary integral equation with the Laplace Green's function
``1 / (4 pi |x - y|)``, discretized at electrode centres.  Fourier convention
is ``q(x) = (2 pi)^-3 int exp(i x.xi) t(xi) dxi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import lu_factor, lu_solve

from .boundary import LENGTH_SCALE, BoundaryData
from .errors import ConfigError, DuplicateCenters, IndefiniteSystem, NearSingularBIE, ZeroXi
from .geometry import BoxDomain, TetMesh, interpolate_nodal, mesh_box
from .quadrature import simpson_weights
from .voxel import VoxelGrid

log = logging.getLogger(__name__)

DEFAULT_TXI = 11.0
DEFAULT_CAP = 20.0
DEFAULT_XI_NODES = 21
DEFAULT_Q_NODES = 21
DEFAULT_SCHRODINGER_ELEMENTS = 21_000
BIE_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ZetaChoice:
    xi: np.ndarray
    zeta: np.ndarray


def gauge_vector(xi: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to ``xi``, seeded by the coordinate axis along
    which ``xi`` has its smallest component."""
    xi = np.asarray(xi, float)
    seed = np.zeros(3)
    seed[np.argmin(np.abs(xi))] = 1.0
    n = xi / np.linalg.norm(xi)
    e = seed - (seed @ n) * n
    return e / np.linalg.norm(e)


def minimal_zeta(xi) -> ZetaChoice:
    """``zeta = -xi/2 + i |xi|/2 e(xi)``: both ``zeta.zeta`` and
    ``(xi+zeta).(xi+zeta)`` vanish and ``|zeta| = |xi|/sqrt(2)``."""
    xi = np.asarray(xi, float)
    nrm = np.linalg.norm(xi)
    if nrm == 0:
        raise ZeroXi("zeta is undefined at xi = 0")
    zeta = -0.5 * xi + 0.5j * nrm * gauge_vector(xi)
    return ZetaChoice(xi, zeta)


def _zetas(xis: np.ndarray) -> np.ndarray:
    """Vectorized :func:`minimal_zeta` for nonzero rows of ``xis``."""
    nrm = np.linalg.norm(xis, axis=1)
    seed = np.zeros_like(xis)
    seed[np.arange(len(xis)), np.argmin(np.abs(xis), axis=1)] = 1.0
    n = xis / nrm[:, None]
    e = seed - np.sum(seed * n, axis=1)[:, None] * n
    e /= np.linalg.norm(e, axis=1)[:, None]
    return -0.5 * xis + 0.5j * nrm[:, None] * e


def g0_matrix(centers) -> np.ndarray:
    """Laplace Green's function between electrode centres, diagonal removed."""
    centers = np.asarray(centers, float)
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    off = ~np.eye(len(centers), dtype=bool)
    if np.any(d[off] < 1e-12):
        raise DuplicateCenters("two electrode centres coincide")
    G = np.zeros_like(d)
    G[off] = 1.0 / (4 * np.pi * d[off])
    return G


def bie_matrix(delta_q: np.ndarray, Q: np.ndarray, G0: np.ndarray, area: float) -> np.ndarray:
    """``I + A`` with ``A = (|dOmega|/L) Q^T G0 Q dLambda_Q``."""
    L = Q.shape[0]
    A = (area / L) * (Q.T @ G0 @ Q @ delta_q)
    return np.eye(A.shape[0]) + A


def solve_bie(L_sigma, L_ref, Q, G0, area, zeta, centers) -> np.ndarray:
    """Basis coefficients of the approximate CGO trace for one ``zeta``."""
    Q = np.asarray(Q, float)
    delta_q = Q.T @ (np.asarray(L_sigma) - np.asarray(L_ref)) @ Q
    M = bie_matrix(delta_q, Q, G0, area)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > BIE_COND_LIMIT:
        raise NearSingularBIE(f"boundary integral system has condition number {cond:.3g}")
    c = Q.T @ np.exp(1j * (np.asarray(centers) @ np.asarray(zeta)))
    return np.linalg.solve(M, c)


@dataclass(frozen=True)
class XiGrid:
    """Uniform nodes on ``[-txi, txi]^3``, odd count per axis."""

    txi: float = DEFAULT_TXI
    n: int = DEFAULT_XI_NODES

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ConfigError("xi grid needs an odd number (>= 3) of nodes per axis")
        if self.txi <= 0:
            raise ConfigError("T_xi must be positive")

    def axis(self) -> np.ndarray:
        return np.linspace(-self.txi, self.txi, self.n)

    def nodes(self) -> np.ndarray:
        a = self.axis()
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


@dataclass(frozen=True)
class ScatteringData:
    grid: XiGrid
    values: np.ndarray            # complex, shape (n, n, n)
    method: str
    cap: float
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        xi = self.grid.nodes()
        v = self.values.ravel()
        np.savetxt(path, np.column_stack([xi, v.real, v.imag]), delimiter=",", fmt="%.17g",
                   header="xi_x,xi_y,xi_z,re_t,im_t", comments="")


def scattering(L_sigma, L_ref, Q, centers, area, grid: XiGrid, method: str = "exp",
               G0: np.ndarray | None = None, cap: float = DEFAULT_CAP) -> ScatteringData:
    """Scattering data on ``grid``; zero for ``|xi| >= txi`` and wherever the
    real or imaginary part exceeds ``cap``."""
    if method not in ("exp", "zero"):
        raise ConfigError(f"unknown scattering method {method!r}")
    Q = np.asarray(Q, float)
    centers = np.asarray(centers, float)
    L = centers.shape[0]
    delta_q = Q.T @ (np.asarray(L_sigma, float) - np.asarray(L_ref, float)) @ Q
    left = Q @ delta_q                                  # L x N_li
    xi = grid.nodes()
    r = np.linalg.norm(xi, axis=1)
    inside = (r < grid.txi) & (r > 0)
    diag = {"bie_rejected": 0}
    lu = None
    if method == "zero":
        if G0 is None:
            G0 = g0_matrix(centers)
        M = bie_matrix(delta_q, Q, G0, area)
        cond = np.linalg.cond(M)
        diag["bie_condition"] = float(cond)
        if np.isfinite(cond) and cond <= BIE_COND_LIMIT:
            lu = lu_factor(M)
        else:
            log.warning("boundary integral system near singular (cond %.3g); scattering data zeroed", cond)
            diag["bie_rejected"] = int(inside.sum())
    zeta = _zetas(xi[inside])
    e_out = np.exp(-1j * ((xi[inside] + zeta) @ centers.T))      # M x L
    coeff = np.exp(1j * (zeta @ centers.T)) @ Q                   # c = Q^T e^{i x.zeta}
    if method == "zero":
        coeff = lu_solve(lu, coeff.T).T if lu is not None else np.zeros_like(coeff)
    t_inside = (area / L) * np.sum((e_out @ left) * coeff, axis=1)
    t = np.zeros(len(xi), dtype=complex)
    t[inside] = t_inside
    t = t.reshape(grid.n, grid.n, grid.n)
    c = grid.n // 2
    nb = [t[c - 1, c, c], t[c + 1, c, c], t[c, c - 1, c], t[c, c + 1, c], t[c, c, c - 1], t[c, c, c + 1]]
    t[c, c, c] = np.mean(nb)
    over = (np.abs(t.real) > cap) | (np.abs(t.imag) > cap)
    diag["capped"] = int(over.sum())
    t[over] = 0.0
    diag["conj_asymmetry"] = _conj_asymmetry(t)
    diag["max_abs"] = float(np.abs(t).max())
    return ScatteringData(grid, t, method, cap, diag)


def _conj_asymmetry(t) -> float:
    ref = np.abs(t).max()
    if ref == 0:
        return 0.0
    return float(np.abs(t[::-1, ::-1, ::-1] - np.conj(t)).max() / ref)


@dataclass(frozen=True)
class PotentialGrid:
    grid: VoxelGrid            # q in 1/m^2
    max_imag: float


def invert_scattering_to_q(t: ScatteringData, domain: BoxDomain, n: int = DEFAULT_Q_NODES,
                           length_scale: float = LENGTH_SCALE) -> PotentialGrid:
    """``q(x) = (2 pi)^-3 int exp(i x.xi) t(xi) dxi`` by tensor Simpson
    quadrature on an ``n``-cubed node grid covering ``domain``.

    The transform runs in the Fourier frame; the returned potential is
    converted to 1/m^2."""
    xi = t.grid.axis()
    w = simpson_weights(xi)
    target = VoxelGrid.for_box(domain, np.zeros((n, n, n)))
    axes = [(ax - domain.center[k]) / length_scale for k, ax in enumerate(target.axes())]
    E = [np.exp(1j * np.outer(ax, xi)) * w[None, :] for ax in axes]
    q = np.einsum("ia,jb,kc,abc->ijk", E[0], E[1], E[2], t.values, optimize=True) / (2 * np.pi) ** 3
    q = q / length_scale**2
    im = float(np.abs(q.imag).max())
    return PotentialGrid(VoxelGrid(q.real, target.origin, target.extent), im)


def schrodinger_mesh(domain: BoxDomain, target_elements: int = DEFAULT_SCHRODINGER_ELEMENTS) -> TetMesh:
    h = (6.0 * domain.volume() / target_elements) ** (1.0 / 3.0)
    return mesh_box(domain, None, h)


_GAUSS_A = 0.5854101966249685
_GAUSS_B = 0.1381966011250105
_GAUSS_BARY = np.full((4, 4), _GAUSS_B) + np.eye(4) * (_GAUSS_A - _GAUSS_B)


def solve_schrodinger(mesh: TetMesh, q_phys) -> np.ndarray:
    """Nodal ``u`` with ``(-Laplace + q) u = 0`` in the mesh, ``u = 1`` on
    its boundary.  ``q_phys`` is a callable evaluating q (1/m^2) at points."""
    g = mesh.gradients()
    vol = mesh.volumes()
    tets = mesh.tets
    ke = np.einsum("eia,eja->eij", g, g) * vol[:, None, None]
    qp = mesh.nodes[tets]                                        # E x 4 x 3
    pts = np.einsum("pi,eia->epa", _GAUSS_BARY, qp)              # E x 4 x 3
    qv = np.asarray(q_phys(pts.reshape(-1, 3)), float).reshape(len(tets), 4)
    me = np.einsum("ep,pi,pj->eij", qv, _GAUSS_BARY, _GAUSS_BARY) * (vol / 4.0)[:, None, None]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    n = mesh.n_nodes
    S = sp.csr_matrix(((ke + me).ravel(), (rows, cols)), shape=(n, n))
    bnd = np.zeros(n, dtype=bool)
    bnd[mesh.boundary_nodes()] = True
    inner = ~bnd
    u = np.ones(n)
    A = S[inner][:, inner].tocsc()
    rhs = -S[inner][:, bnd] @ np.ones(bnd.sum())
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
        diag = np.abs(lu.U.diagonal())
        if diag.min() <= 1e-13 * diag.max():
            raise RuntimeError("singular factor")
        u[inner] = lu.solve(rhs)
    except RuntimeError as exc:
        raise IndefiniteSystem(
            f"Schrödinger system is singular (q range {qv.min():.3g}..{qv.max():.3g}): {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise IndefiniteSystem(f"Schrödinger solve diverged (q range {qv.min():.3g}..{qv.max():.3g})")
    return u


def reconstruct_from_q(q: PotentialGrid, mesh: TetMesh, sigma_best: float, mode: str = "absolute",
                       out_n: int = 64) -> tuple[VoxelGrid, dict]:
    """Conductivity ``sigma_best * u**2`` (absolute) or its departure from
    ``sigma_best`` (difference) on an ``out_n``-cubed grid."""
    if mode not in ("absolute", "difference"):
        raise ConfigError(f"unknown mode {mode!r}")
    qg = q.grid
    interp = RegularGridInterpolator(qg.axes(), qg.values, bounds_error=False, fill_value=None)
    u = solve_schrodinger(mesh, interp)
    sigma_nodes = sigma_best * u**2
    if mode == "difference":
        sigma_nodes = sigma_nodes - sigma_best
    out = VoxelGrid(np.zeros((out_n,) * 3), qg.origin, qg.extent)
    vals = interpolate_nodal(mesh, sigma_nodes, out.points()).reshape((out_n,) * 3)
    diag = {"u_min": float(u.min()), "u_max": float(u.max()),
            "q_min": float(qg.values.min()), "q_max": float(qg.values.max()), "q_max_imag": q.max_imag}
    return VoxelGrid(vals, qg.origin, qg.extent), diag


def tmethod_from_boundary(data: BoundaryData, domain: BoxDomain, method: str = "exp",
                          grid: XiGrid | None = None, cap: float = DEFAULT_CAP, q_nodes: int = DEFAULT_Q_NODES,
                          mesh: TetMesh | None = None, sigma_best: float = 1.0, mode: str = "absolute",
                          out_n: int = 64, length_scale: float = LENGTH_SCALE):
    grid = grid or XiGrid()
    t = scattering(data.L_sigma, data.L_ref, data.Q, data.centers, data.area, grid, method, cap=cap)
    q = invert_scattering_to_q(t, domain, q_nodes, length_scale)
    mesh = mesh or schrodinger_mesh(domain)
    vox, diag = reconstruct_from_q(q, mesh, sigma_best, mode, out_n)
    diag.update({f"t_{k}": v for k, v in t.diagnostics.items()})
    return vox, diag
