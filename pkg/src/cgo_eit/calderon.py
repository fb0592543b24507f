"""
Calderón's linearized reconstruction.

The perturbation spectrum is sampled on a spherical grid in ``z``; at each
node the boundary integral pairs the exponential harmonic functions
``exp(pi i z.x +/- pi a.x)`` (with ``|a| = |z|``, ``a . z = 0``) through the DN
difference.  The spectrum is truncated non-uniformly, damped by a Gaussian
mollifier and inverted with a tensor Simpson rule in ``(|z|, theta, phi)``.

Fourier convention here is ``f(x) = int F(z) exp(-2 pi i x.z) dz``; it differs
from the one in :mod:`cgo_eit.tmethods` and spectra are never shared.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .boundary import LENGTH_SCALE, BoundaryData, to_fourier_frame
from .errors import ConfigError, ShapeMismatch
from .quadrature import simpson_weights
from .voxel import VoxelGrid

log = logging.getLogger(__name__)

DEFAULT_TZ1 = 1.4
DEFAULT_TZ2 = 1.7
DEFAULT_MOLLIFIER = 0.1
DEFAULT_NODES = (21, 21, 41)
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class SphericalFourierGrid:
    """Uniform nodes in ``|z|`` on [0, tz2], polar angle on [0, pi] and
    azimuth on [0, 2 pi]."""

    tz1: float = DEFAULT_TZ1
    tz2: float = DEFAULT_TZ2
    mollifier_t: float = DEFAULT_MOLLIFIER
    n_r: int = DEFAULT_NODES[0]
    n_theta: int = DEFAULT_NODES[1]
    n_phi: int = DEFAULT_NODES[2]

    def __post_init__(self):
        if not (0 < self.tz1 <= self.tz2):
            raise ConfigError("truncation radii must satisfy 0 < T_z1 <= T_z2")
        if min(self.n_r, self.n_theta, self.n_phi) < 3:
            raise ConfigError("each Fourier axis needs at least three nodes")
        if self.mollifier_t < 0:
            raise ConfigError("mollifier parameter must be non-negative")

    def axes(self):
        return (np.linspace(0.0, self.tz2, self.n_r),
                np.linspace(0.0, np.pi, self.n_theta),
                np.linspace(0.0, 2 * np.pi, self.n_phi))

    def nodes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``z`` and ``a`` vectors (M x 3) and radii (M,), flattened in
        (r, theta, phi) C order."""
        r, th, ph = np.meshgrid(*self.axes(), indexing="ij")
        r, th, ph = r.ravel(), th.ravel(), ph.ravel()
        z = r[:, None] * np.column_stack([np.cos(ph) * np.sin(th), np.sin(ph) * np.sin(th), np.cos(th)])
        a = r[:, None] * np.column_stack([np.cos(ph) * np.cos(th), np.sin(ph) * np.cos(th), -np.sin(th)])
        return z, a, r

    def weights(self) -> np.ndarray:
        """Quadrature weights including the Jacobian ``|z|^2 sin(theta)``."""
        r, th, ph = self.axes()
        w = np.einsum("i,j,k->ijk", simpson_weights(r) * r**2, simpson_weights(th) * np.sin(th),
                      simpson_weights(ph))
        return w.ravel()


@dataclass(frozen=True)
class FhatData:
    grid: SphericalFourierGrid
    values: np.ndarray        # complex, one per grid node
    conj_asymmetry: float = float("nan")


def compute_fhat(L_sigma, L_ref, Q, centers, area, grid: SphericalFourierGrid) -> FhatData:
    """Boundary quadrature for the perturbation spectrum at every grid node.

    ``L_sigma`` and ``L_ref`` are L x L current-density DN matrices in the
    Fourier frame; ``centers`` are electrode centres in that frame and
    ``area`` the boundary area.  The origin node is set to zero.
    """
    L_sigma = np.asarray(L_sigma, float)
    L_ref = np.asarray(L_ref, float)
    Q = np.asarray(Q, float)
    centers = np.asarray(centers, float)
    Lc = centers.shape[0]
    if L_sigma.shape != (Lc, Lc) or L_ref.shape != (Lc, Lc) or Q.shape[0] != Lc:
        raise ShapeMismatch("DN matrices, basis and electrode centres disagree in size")
    M = Q @ (Q.T @ (L_sigma - L_ref) @ Q) @ Q.T
    z, a, r = grid.nodes()
    quad = np.empty(len(r), dtype=complex)
    step = max(1, _CHUNK_ELEMENTS // Lc)
    for s in range(0, len(r), step):
        zx = z[s:s + step] @ centers.T
        ax = a[s:s + step] @ centers.T
        u1 = np.exp(np.pi * 1j * zx + np.pi * ax)
        u2 = np.exp(np.pi * 1j * zx - np.pi * ax)
        quad[s:s + step] = np.sum((u1 @ M) * u2, axis=1)
    vals = np.zeros(len(r), dtype=complex)
    pos = r > 0
    vals[pos] = -(area / Lc) * quad[pos] / (2 * np.pi**2 * r[pos] ** 2)
    return FhatData(grid, vals, _conj_asymmetry(grid, vals))


def _conj_asymmetry(grid, vals) -> float:
    """Relative mismatch between F(-z) and conj(F(z)) over the grid.

    ``-z`` maps (theta, phi) to (pi - theta, phi + pi), which are grid nodes
    when the azimuth grid has an odd number of intervals shifted by half."""
    nr, nt, npf = grid.n_r, grid.n_theta, grid.n_phi
    if (npf - 1) % 2:
        return float("nan")
    F = vals.reshape(nr, nt, npf)
    shift = (npf - 1) // 2
    G = np.roll(F[:, ::-1, :-1], -shift, axis=2)
    ref = np.abs(F[:, :, :-1]).max()
    return float(np.abs(G - np.conj(F[:, :, :-1])).max() / ref) if ref > 0 else 0.0


def truncate_fhat(fhat: FhatData, tz1: float, tz2: float) -> FhatData:
    """Zero every node beyond ``tz2`` and every node whose real or imaginary
    amplitude exceeds the largest one found within ``tz1``."""
    if tz1 > tz2:
        raise ConfigError("T_z1 must not exceed T_z2")
    _, _, r = fhat.grid.nodes()
    v = fhat.values
    inner = r <= tz1
    re_max = np.abs(v.real[inner]).max() if inner.any() else 0.0
    im_max = np.abs(v.imag[inner]).max() if inner.any() else 0.0
    keep = (r <= tz2) & (np.abs(v.real) <= re_max) & (np.abs(v.imag) <= im_max)
    return FhatData(fhat.grid, np.where(keep, v, 0.0), fhat.conj_asymmetry)


def base_grid_size(dims) -> int:
    """16 nodes per axis, 32 when the box is strongly elongated."""
    dims = np.asarray(dims, float)
    return 32 if dims.max() / dims.min() > 1.55 else 16


def inverse_transform(fhat: FhatData, points: np.ndarray) -> tuple[np.ndarray, float]:
    """Mollified, truncated inverse transform at ``points`` (Fourier frame).

    Returns the real part and the largest imaginary magnitude.
    """
    grid = fhat.grid
    z, _, r = grid.nodes()
    coef = grid.weights() * fhat.values * np.exp(-np.pi * grid.mollifier_t * r**2)
    nz = coef != 0
    z, coef = z[nz], coef[nz]
    out = np.empty(len(points), dtype=complex)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, len(coef)))
    for s in range(0, len(points), chunk):
        phase = np.exp(-2j * np.pi * (points[s:s + chunk] @ z.T))
        out[s:s + chunk] = phase @ coef
    return out.real, float(np.abs(out.imag).max()) if len(out) else 0.0


def reconstruct_calderon(fhat_r: FhatData, domain, mode: str = "absolute", sigma_best: float = 1.0,
                         base_n: int | None = None, out_n: int = 64,
                         length_scale: float = LENGTH_SCALE) -> tuple[VoxelGrid, dict]:
    """Conductivity (absolute) or conductivity change (difference) on the box.

    The relative perturbation is computed on a ``base_n``-cubed grid covering
    ``domain``; absolute mode returns ``sigma_best * (1 + dgamma)``,
    difference mode ``sigma_best * dgamma``.  Both are interpolated
    trilinearly to ``out_n`` nodes per axis.
    """
    if mode not in ("absolute", "difference"):
        raise ConfigError(f"unknown mode {mode!r}")
    n = base_n or base_grid_size(domain.dims)
    coarse = VoxelGrid.for_box(domain, np.zeros((n, n, n)))
    pts = to_fourier_frame(coarse.points(), domain, length_scale)
    dgamma, im_max = inverse_transform(fhat_r, pts)
    re_max = np.abs(dgamma).max()
    if re_max > 0 and im_max > 0.1 * re_max:
        warnings.warn(f"imaginary residual {im_max:.3g} exceeds 10% of real part {re_max:.3g}", stacklevel=2)
    dgamma = dgamma.reshape(n, n, n)
    values = sigma_best * (1.0 + dgamma) if mode == "absolute" else sigma_best * dgamma
    grid = VoxelGrid.for_box(domain, values)
    if out_n and out_n != n:
        grid = grid.resample(out_n)
    diag = {"max_imag": im_max, "max_abs_delta": float(re_max), "base_grid": n,
            "conj_asymmetry": fhat_r.conj_asymmetry}
    return grid, diag


def calderon_from_boundary(data: BoundaryData, domain, grid: SphericalFourierGrid | None = None,
                           mode: str = "absolute", sigma_best: float = 1.0, base_n: int | None = None,
                           out_n: int = 64, length_scale: float = LENGTH_SCALE):
    grid = grid or SphericalFourierGrid()
    fhat = compute_fhat(data.L_sigma, data.L_ref, data.Q, data.centers, data.area, grid)
    fr = truncate_fhat(fhat, grid.tz1, grid.tz2)
    return reconstruct_calderon(fr, domain, mode, sigma_best, base_n, out_n, length_scale)
