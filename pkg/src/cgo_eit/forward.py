"""
Complete electrode model (CEM) forward solver on P1 tetrahedra.

Unknowns are the nodal potentials and the electrode voltages.  The voltages
are written as ``U = N @ beta`` with ``N`` an orthonormal basis of mean-free
vectors, which grounds the system (sum of electrode voltages is zero) and
keeps it symmetric positive definite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, NonMeanFreeCurrents, SingularSystem
from .geometry import ElectrodeLayout, TetMesh



def mean_free_basis(n: int) -> np.ndarray:
    """Orthonormal ``n x (n-1)`` basis of vectors orthogonal to ones."""
    h = np.zeros((n, n - 1))
    for k in range(n - 1):
        h[: k + 1, k] = 1.0
        h[k + 1, k] = -(k + 1)
        h[:, k] /= np.sqrt((k + 1) * (k + 2))
    return h


@dataclass(frozen=True)
class PatternSet:
    """Applied currents ``I`` (L x K, amperes) and electrode voltages ``V``
    (L x K, volts), one column per current pattern."""

    I: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        I = np.array(self.I, dtype=float)
        V = np.array(self.V, dtype=float)
        if I.ndim != 2 or I.shape != V.shape:
            raise ConfigError(f"current/voltage shapes differ: {I.shape} vs {V.shape}")
        I.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "V", V)

    @property
    def n_electrodes(self) -> int:
        return self.I.shape[0]

    @property
    def n_patterns(self) -> int:
        return self.I.shape[1]

    def stacked(self) -> np.ndarray:
        """Voltages stacked pattern by pattern (length L*K)."""
        return self.V.T.ravel()


def check_mean_free(I: np.ndarray, rtol: float = 1e-6) -> None:
    I = np.atleast_2d(np.asarray(I, float))
    sums = np.abs(I.sum(axis=0))
    norms = np.linalg.norm(I, axis=0)
    bad = sums > rtol * np.maximum(norms, np.finfo(float).tiny)
    bad &= norms > 0
    if np.any(bad):
        raise NonMeanFreeCurrents(f"current columns {np.flatnonzero(bad).tolist()} do not sum to zero")


class CEMModel:
    """Mesh + electrode geometry with the conductivity-independent parts of
    the CEM system precomputed.

    Factorizations are cached per conductivity vector, so repeated solves at
    the same conductivity (forward fields, measurement fields) share one LU.
    """

    def __init__(self, mesh: TetMesh, layout: ElectrodeLayout):
        self.mesh = mesh
        self.layout = layout
        L = layout.n_electrodes
        n = mesh.n_nodes
        self.n_electrodes = L
        self.N = mean_free_basis(L)

        tri = mesh.bfaces
        tags = mesh.btags
        area = mesh.boundary_areas()
        rows, cols, vals = [], [], []
        brow, bcol, bval = [], [], []
        el_area = np.zeros(L)
        local_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
        for ell in range(L):
            sel = tags == ell + 1
            t = tri[sel]
            a = area[sel]
            zi = 1.0 / layout.z[ell]
            el_area[ell] = a.sum()
            for i in range(3):
                for j in range(3):
                    rows.append(t[:, i])
                    cols.append(t[:, j])
                    vals.append(zi * a * local_mass[i, j])
                brow.append(t[:, i])
                bcol.append(np.full(len(t), ell))
                bval.append(-zi * a / 3.0)
        if np.any(el_area <= 0):
            raise ConfigError("an electrode has no boundary triangles in the mesh")
        self.electrode_area = el_area
        self.B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        C = sp.csr_matrix((np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))), shape=(n, L))
        self.CN = sp.csr_matrix(C @ self.N)
        self.DN = self.N.T @ np.diag(el_area / layout.z) @ self.N

        tets = mesh.tets
        g = mesh.gradients()
        vol = mesh.volumes()
        # element stiffness for unit conductivity, E x 4 x 4
        self._ke = np.einsum("eia,eja->eij", g, g) * vol[:, None, None]
        self._rows = np.repeat(tets, 4, axis=1).ravel()
        self._cols = np.tile(tets, (1, 4)).ravel()
        self._factor = None
        self._factor_key = None

    # -- assembly ---------------------------------------------------------
    def element_sigma(self, sigma: np.ndarray) -> np.ndarray:
        return np.asarray(sigma, float)[self.mesh.tets].mean(axis=1)

    def stiffness(self, sigma: np.ndarray) -> sp.csr_matrix:
        se = self.element_sigma(sigma)
        vals = (self._ke * se[:, None, None]).ravel()
        n = self.mesh.n_nodes
        return sp.csr_matrix((vals, (self._rows, self._cols)), shape=(n, n))

    def system(self, sigma: np.ndarray) -> sp.csc_matrix:
        A = self.stiffness(sigma) + self.B
        return sp.bmat([[A, self.CN], [self.CN.T, sp.csr_matrix(self.DN)]], format="csc")

    def _factorize(self, sigma):
        """LU of the potential block plus the dense Schur complement on the
        electrode unknowns; cached for the last conductivity seen."""
        sigma = np.asarray(sigma, float)
        if sigma.shape != (self.mesh.n_nodes,):
            raise ConfigError(f"conductivity must have one value per node ({self.mesh.n_nodes})")
        key = sigma.tobytes()
        if self._factor_key == key:
            return self._factor
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise SingularSystem("conductivity must be finite and positive at every node")
        A = (self.stiffness(sigma) + self.B).tocsc()
        try:
            lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystem(f"CEM system is singular: {exc}") from exc
        diag = np.abs(lu.U.diagonal())
        if diag.min() <= 1e-14 * diag.max():
            raise SingularSystem("CEM system is numerically singular")
        Y = lu.solve(self.CN.toarray())
        schur = self.DN - self.CN.T @ Y
        schur = 0.5 * (schur + schur.T)
        try:
            chol = cho_factor(schur)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("electrode Schur complement is not positive definite") from exc
        self._factor, self._factor_key = (Y, chol), key
        return self._factor

    # -- solves -----------------------------------------------------------
    def _solve_beta(self, sigma, rhs_beta):
        Y, chol = self._factorize(sigma)
        beta = cho_solve(chol, rhs_beta)
        u = -Y @ beta
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(beta))):
            raise SingularSystem("non-finite solution of the CEM system")
        return u, beta

    def solve_fields(self, sigma: np.ndarray, I: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nodal potentials (n x K) and grounded electrode voltages (L x K)."""
        I = np.atleast_2d(np.asarray(I, float))
        if I.shape[0] != self.n_electrodes:
            raise ConfigError(f"currents must have {self.n_electrodes} rows")
        check_mean_free(I)
        u, beta = self._solve_beta(sigma, self.N.T @ I)
        return u, self.N @ beta

    def solve(self, sigma: np.ndarray, I: np.ndarray) -> PatternSet:
        _, V = self.solve_fields(sigma, I)
        V = V - V.mean(axis=0)
        return PatternSet(np.asarray(I, float), V)

    def jacobian(self, sigma0: np.ndarray, I: np.ndarray, chunk: int = 4000) -> np.ndarray:
        """Sensitivity of the stacked voltages to nodal conductivities.

        Row ``k * L + ell`` holds dV_ell^(k)/dsigma_j.  Uses the adjoint
        formula ``-sum_e (|e|/4) grad u^(k) . grad w^(ell)`` over the elements
        containing node ``j``, where ``w^(ell)`` is the field driven by the
        measurement current ``e_ell - 1/L``.
        """
        I = np.atleast_2d(np.asarray(I, float))
        L, K = I.shape
        n = self.mesh.n_nodes
        u, _ = self.solve_fields(sigma0, I)
        w, _ = self._solve_beta(sigma0, np.eye(L - 1))   # fields for currents N e_j
        g = self.mesh.gradients()
        vol = self.mesh.volumes()
        tets = self.mesh.tets
        out = np.zeros((n, K, L - 1))
        for s in range(0, len(tets), chunk):
            t = tets[s:s + chunk]
            gu = np.einsum("eia,eik->eak", g[s:s + chunk], u[t])
            gw = np.einsum("eia,eij->eaj", g[s:s + chunk], w[t])
            contrib = np.einsum("eak,eaj->ekj", gu, gw) * (vol[s:s + chunk] / 4.0)[:, None, None]
            for c in range(4):
                np.add.at(out, t[:, c], contrib)
        # measurement of V_ell corresponds to beta -> (N beta)_ell
        J = -np.einsum("nkj,lj->kln", out, self.N)
        return J.reshape(K * L, n)


def solve_cem_patterns(mesh: TetMesh, sigma, layout: ElectrodeLayout, I) -> PatternSet:
    return CEMModel(mesh, layout).solve(_as_nodal(sigma, mesh), I)


def jacobian_sigma(mesh: TetMesh, sigma0, layout: ElectrodeLayout, I) -> np.ndarray:
    return CEMModel(mesh, layout).jacobian(_as_nodal(sigma0, mesh), I)


def _as_nodal(sigma, mesh):
    sigma = np.asarray(sigma, float)
    if sigma.ndim == 0:
        sigma = np.full(mesh.n_nodes, float(sigma))
    return sigma


# ----------------------------------------------------------------------------
# pattern-set files: I.csv, V.csv (frames stacked by rows), meta.json
# ----------------------------------------------------------------------------

def save_patterns(path, patterns: PatternSet, metadata: dict | None = None, frames: np.ndarray | None = None) -> None:
    """Write ``I.csv``, ``V.csv`` and ``meta.json`` under directory ``path``.

    ``frames`` (F x L x K) are written instead of the averaged voltages when
    given; ``frame_count`` in the metadata records F.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"frequency_hz": None, "background_mS_per_m": None, "frame_count": 1}
    meta.update(metadata or {})
    np.savetxt(path / "I.csv", patterns.I, delimiter=",", fmt="%.17g")
    if frames is None:
        Vout = patterns.V
        meta["frame_count"] = 1
    else:
        frames = np.asarray(frames, float)
        Vout = frames.reshape(-1, frames.shape[-1])
        meta["frame_count"] = int(frames.shape[0])
    np.savetxt(path / "V.csv", Vout, delimiter=",", fmt="%.17g")
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
