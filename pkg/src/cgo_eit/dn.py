"""
Current-pattern bases, discrete ND/DN matrices and measured-data ingestion.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateData,
    DegenerateDataWarning,
    NonMeanFreeCurrents,
    ParseError,
    RankDeficient,
    ShapeMismatch,
)
from .forward import PatternSet

EIG_CUTOFF = 1e-12


@dataclass(frozen=True)
class CurrentPatternBasis:
    """Orthonormal, mean-free columns ``Q`` (L x N_li)."""

    Q: np.ndarray

    @property
    def n_electrodes(self) -> int:
        return self.Q.shape[0]

    @property
    def n_li(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True)
class NDMatrix:
    R: np.ndarray
    asymmetry: float = 0.0


@dataclass(frozen=True)
class DNMatrix:
    L: np.ndarray


def _sign_fix(Q: np.ndarray) -> np.ndarray:
    Q = Q.copy()
    for j in range(Q.shape[1]):
        nz = np.flatnonzero(np.abs(Q[:, j]) > 1e-12 * np.abs(Q[:, j]).max())
        if nz.size and Q[nz[0], j] < 0:
            Q[:, j] *= -1
    return Q


def build_basis(I_raw: np.ndarray, rtol: float = 1e-10) -> CurrentPatternBasis:
    """Orthonormalize applied current patterns by QR.

    Column order follows ``I_raw``; each column is signed so that its first
    nonzero entry is positive.
    """
    I_raw = np.atleast_2d(np.asarray(I_raw, float))
    L, K = I_raw.shape
    norms = np.linalg.norm(I_raw, axis=0)
    if np.any(np.abs(I_raw.sum(axis=0)) > 1e-6 * np.maximum(norms, np.finfo(float).tiny)):
        raise NonMeanFreeCurrents("current patterns must sum to zero")
    if K > L - 1:
        raise RankDeficient(f"at most L-1 = {L - 1} independent mean-free patterns exist, got {K}")
    Q, r = np.linalg.qr(I_raw)
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= rtol * max(d.max(), norms.max()):
        raise RankDeficient("current patterns are linearly dependent")
    Q = _sign_fix(Q)
    Q.setflags(write=False)
    return CurrentPatternBasis(Q)


def eigen_currents(R: np.ndarray) -> np.ndarray:
    """Eigenvectors of a positive ND matrix on the mean-free subspace,
    ordered by decreasing eigenvalue (L x (L-1))."""
    L = R.shape[0]
    P = np.eye(L) - 1.0 / L
    w, v = np.linalg.eigh(P @ (0.5 * (R + R.T)) @ P)
    order = np.argsort(w)[::-1][: L - 1]
    return _sign_fix(v[:, order])


def _sym_pinv(A: np.ndarray, cutoff: float = EIG_CUTOFF) -> np.ndarray:
    w, v = np.linalg.eigh(A)
    keep = np.abs(w) > cutoff * np.abs(w).max()
    return (v[:, keep] / w[keep]) @ v[:, keep].T


def assemble_nd_dn(patterns: PatternSet, basis: CurrentPatternBasis) -> tuple[NDMatrix, DNMatrix]:
    """Least-squares ND matrix on span(Q), symmetrized, and its pseudo-inverse.

    With coefficients ``C = Q^T I`` and ``W = Q^T V`` the basis-space map is
    ``R_Q = W C^+``.  ``R = Q sym(R_Q) Q^T`` so ``R 1 = 0``; the DN matrix is
    ``Q R_Q^+ Q^T``.  The relative asymmetry of ``R_Q`` is kept as a noise
    diagnostic.
    """
    Q = basis.Q
    if patterns.n_electrodes != Q.shape[0]:
        raise ShapeMismatch("pattern set and basis have different electrode counts")
    if patterns.n_patterns < basis.n_li:
        raise RankDeficient(f"{patterns.n_patterns} patterns cannot determine {basis.n_li} basis directions")
    C = Q.T @ patterns.I
    W = Q.T @ patterns.V
    sv = np.linalg.svd(C, compute_uv=False)
    if sv.min() <= 1e-10 * sv.max():
        raise RankDeficient("applied currents do not span the basis")
    RQ = W @ np.linalg.pinv(C)
    nrm = np.linalg.norm(RQ)
    asym = float(np.linalg.norm(RQ - RQ.T) / nrm) if nrm > 0 else 0.0
    RQ = 0.5 * (RQ + RQ.T)
    R = Q @ RQ @ Q.T
    Lmat = Q @ _sym_pinv(RQ) @ Q.T if nrm > 0 else np.zeros_like(R)
    return NDMatrix(R, asym), DNMatrix(Lmat)


def in_basis(M: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Matrix of an L x L operator in the Q basis (N_li x N_li)."""
    return Q.T @ M @ Q


def sigma_best(U_sim: np.ndarray, V_meas: np.ndarray) -> float:
    """Best-fit constant conductivity ``sum U*U / sum U*V``.

    ``U_sim`` are voltages simulated at 1 S/m with the same currents as the
    measured ``V_meas``.
    """
    U = np.asarray(U_sim, float)
    V = np.asarray(V_meas, float)
    if U.shape != V.shape:
        raise ShapeMismatch(f"simulated {U.shape} and measured {V.shape} voltages differ in shape")
    den = float(np.sum(U * V))
    if den == 0.0:
        raise DegenerateData("simulated and measured voltages are orthogonal")
    val = float(np.sum(U * U)) / den
    if val <= 0:
        warnings.warn(f"best-fit conductivity is non-positive ({val})", DegenerateDataWarning, stacklevel=2)
    return val


# ----------------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------------

def _read_csv(path: Path) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    if not np.all(np.isfinite(a)):
        raise ParseError(f"{path} contains non-finite values")
    return a


def load_frames(path, mean_free_tol: float = 1e-6) -> tuple[PatternSet, dict]:
    """Read ``I.csv``, ``V.csv`` and ``meta.json`` from directory ``path``.

    ``V.csv`` holds ``frame_count`` blocks of L rows; they are averaged.
    """
    path = Path(path)
    try:
        with open(path / "meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {"frame_count": 1}
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad metadata in {path}: {exc}") from exc
    I = _read_csv(path / "I.csv")
    V = _read_csv(path / "V.csv")
    frames = int(meta.get("frame_count", 1) or 1)
    L, K = I.shape
    if V.shape != (frames * L, K):
        raise ShapeMismatch(f"V.csv has shape {V.shape}, expected {(frames * L, K)} for {frames} frame(s)")
    sums = np.abs(I.sum(axis=0))
    norms = np.linalg.norm(I, axis=0)
    if np.any(sums > mean_free_tol * np.maximum(norms, np.finfo(float).tiny)):
        raise NonMeanFreeCurrents("applied currents do not sum to zero")
    Vavg = V.reshape(frames, L, K).mean(axis=0) if frames > 1 else V
    return PatternSet(I, Vavg), meta


def frame_diagnostics(patterns: PatternSet) -> dict:
    """Data-quality numbers reported by ``validate-frames``."""
    I, V = patterns.I, patterns.V
    out = {
        "electrodes": patterns.n_electrodes,
        "patterns": patterns.n_patterns,
        "max_current_column_sum": float(np.abs(I.sum(axis=0)).max()),
        "max_voltage_column_sum": float(np.abs(V.sum(axis=0)).max()),
        "current_rank": int(np.linalg.matrix_rank(I)),
    }
    try:
        basis = build_basis(I)
        nd, _ = assemble_nd_dn(patterns, basis)
        out["nd_asymmetry"] = nd.asymmetry
        w = np.linalg.eigvalsh(in_basis(nd.R, basis.Q))
        out["nd_min_eigenvalue"] = float(w.min())
        out["nd_max_eigenvalue"] = float(w.max())
    except (RankDeficient, NonMeanFreeCurrents) as exc:
        out["error"] = str(exc)
    return out
