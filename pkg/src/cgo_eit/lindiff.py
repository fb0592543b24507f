"""
Linearized time-difference imaging with a Gaussian smoothness prior.

The change ``dV = V2 - V1`` is modelled as ``J dsigma + noise`` with ``J``
the CEM Jacobian at a constant conductivity.  The estimate minimizes
``||L_de (dV - J dsigma)||^2 + ||L_p dsigma||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import ConfigError, FactorizationFailure, ShapeMismatch

DEFAULT_STD_MULT = 16.0
DEFAULT_CORR_FRAC = 0.125
DEFAULT_COV_AT_D = 0.01


@dataclass(frozen=True)
class SmoothnessPrior:
    gamma: np.ndarray          # N x N covariance
    std: float
    a: float                   # correlation length (m)
    chol: np.ndarray           # lower Cholesky factor of gamma

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def factor(self) -> np.ndarray:
        """``L_p`` with ``L_p^T L_p = gamma^-1``."""
        return solve_triangular(self.chol, np.eye(self.n), lower=True)

    def precision(self) -> np.ndarray:
        return cho_solve((self.chol, True), np.eye(self.n))


def correlation_length(d: float, cov_at_d: float) -> float:
    """``a`` such that the correlation at distance ``d`` equals ``cov_at_d``."""
    return d / math.sqrt(2.0 * math.log(1.0 / cov_at_d))


def build_prior(nodes, std_sigma: float, d: float, cov_at_d: float = DEFAULT_COV_AT_D) -> SmoothnessPrior:
    """``gamma_ij = std^2 exp(-|x_i - x_j|^2 / (2 a^2))``."""
    if std_sigma <= 0 or d <= 0 or not (0 < cov_at_d < 1):
        raise ConfigError("prior needs std > 0, d > 0 and 0 < cov_at_d < 1")
    nodes = np.asarray(nodes, float)
    a = correlation_length(d, cov_at_d)
    gamma = std_sigma**2 * np.exp(-cdist(nodes, nodes, "sqeuclidean") / (2 * a * a))
    try:
        c = np.linalg.cholesky(gamma)
    except LinAlgError:
        try:
            c = np.linalg.cholesky(gamma + 1e-10 * std_sigma**2 * np.eye(len(nodes)))
        except LinAlgError as exc:
            raise FactorizationFailure("prior covariance is not positive definite after jitter") from exc
    return SmoothnessPrior(gamma, float(std_sigma), a, c)


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel standard deviation of the voltage difference noise."""

    std: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.std, float)
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ConfigError("noise standard deviations must be positive")
        object.__setattr__(self, "std", s)

    @classmethod
    def from_snr(cls, V1: np.ndarray, V2: np.ndarray, snr_db: float) -> "NoiseModel":
        """Diagonal ``gamma_e1 + gamma_e2`` with ``std_i = max|V_i| 10^(-snr/20)``."""
        s1 = np.abs(V1).max() * 10 ** (-snr_db / 20)
        s2 = np.abs(V2).max() * 10 ** (-snr_db / 20)
        return cls(np.full(np.size(V1), math.hypot(s1, s2)))

    def factor(self) -> np.ndarray:
        """Diagonal of ``L_de``."""
        return 1.0 / self.std


def reconstruct_linear_diff(J: np.ndarray, dV: np.ndarray, noise: NoiseModel, prior: SmoothnessPrior) -> np.ndarray:
    """Nodal conductivity change minimizing the Tikhonov functional.

    The minimizer of ``||L_de (dV - J ds)||^2 + ||L_p ds||^2`` is computed in
    the equivalent data-space form ``ds = G J^T (J G J^T + gamma_de)^-1 dV``
    with ``G`` the prior covariance.  This never inverts ``G``, whose
    smooth kernel makes it severely ill-conditioned."""
    J = np.asarray(J, float)
    dV = np.asarray(dV, float).ravel()
    if J.shape[0] != dV.size or noise.std.size != dV.size:
        raise ShapeMismatch(f"Jacobian rows {J.shape[0]}, data {dV.size}, noise {noise.std.size} disagree")
    if J.shape[1] != prior.n:
        raise ShapeMismatch(f"Jacobian has {J.shape[1]} columns but prior covers {prior.n} nodes")
    GJt = prior.gamma @ J.T
    S = J @ GJt + np.diag(noise.std**2)
    S = 0.5 * (S + S.T)
    try:
        c = cho_factor(S)
    except LinAlgError as exc:
        raise FactorizationFailure("data-space system is not positive definite") from exc
    return GJt @ cho_solve(c, dV)
