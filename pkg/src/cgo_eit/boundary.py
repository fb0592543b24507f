"""
Electrode-sampled boundary data in the frame used by the Fourier-based methods.

All CGO computations use coordinates centred on the modeled box and measured
in units of ``length_scale`` metres (decimetres by default), and a relative
conductivity (conductivity divided by a reference value).  In that frame a DN
matrix in amperes per volt becomes a current-density operator by dividing by
``sigma_ref * length_scale`` and by the extended-electrode area
``|dOmega| / L``, which is the form the boundary quadratures expect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ElectrodeLayout

LENGTH_SCALE = 0.1


@dataclass(frozen=True)
class BoundaryData:
    centers: np.ndarray     # L x 3, Fourier frame
    area: float             # |dOmega| in Fourier units
    Q: np.ndarray           # L x N_li
    L_sigma: np.ndarray     # L x L current-density DN, relative conductivity
    L_ref: np.ndarray

    @property
    def n_electrodes(self) -> int:
        return self.centers.shape[0]

    @property
    def weight(self) -> float:
        return self.area / self.n_electrodes

    def delta_in_basis(self) -> np.ndarray:
        """``Q^T (L_sigma - L_ref) Q``."""
        return self.Q.T @ (self.L_sigma - self.L_ref) @ self.Q


def to_fourier_frame(points: np.ndarray, domain, length_scale: float = LENGTH_SCALE) -> np.ndarray:
    return (np.asarray(points, float) - domain.center) / length_scale


def density_dn(L_current: np.ndarray, sigma_ref: float, area: float, n_electrodes: int,
               length_scale: float = LENGTH_SCALE) -> np.ndarray:
    return np.asarray(L_current, float) / (sigma_ref * length_scale) / (area / n_electrodes)


def boundary_data(layout: ElectrodeLayout, Q: np.ndarray, L_sigma: np.ndarray, L_ref: np.ndarray,
                  sigma_scale: float = 1.0, ref_scale: float = 1.0,
                  length_scale: float = LENGTH_SCALE) -> BoundaryData:
    """Map physical DN matrices (A/V) on ``layout`` into the Fourier frame.

    ``sigma_scale`` divides ``L_sigma`` (the best-fit conductivity in
    absolute mode) and ``ref_scale`` divides ``L_ref`` (1 for a unit-
    conductivity simulation).
    """
    domain = layout.domain
    area = domain.surface_area() / length_scale**2
    L = layout.n_electrodes
    return BoundaryData(
        centers=to_fourier_frame(layout.centers, domain, length_scale),
        area=area,
        Q=np.asarray(Q, float),
        L_sigma=density_dn(L_sigma, sigma_scale, area, L, length_scale),
        L_ref=density_dn(L_ref, ref_scale, area, L, length_scale),
    )
