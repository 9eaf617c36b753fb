"""SSA reconstruction, linear recurrent formula (LRF) and MSSA forecasting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .embedding import EmbeddedCovariance, TimeSeries, covariance, embed
from .errors import NumericalError, ValidationError
from .linalg import sym_eigen

logger = logging.getLogger(__name__)

VERTICALITY_TOL = 1e-6
DEFAULT_ENERGY = 0.90


@dataclass(frozen=True)
class SSADecomposition:
    eigenvalues: np.ndarray
    basis: np.ndarray
    r: int

    @property
    def L(self):
        return self.basis.shape[0]

    @property
    def retained(self):
        return self.basis[:, : self.r]


@dataclass(frozen=True)
class LRFModel:
    phi: np.ndarray
    verticality: float
    r: int
    L: int


def decompose(cov, r=None, energy=DEFAULT_ENERGY):
    """Eigen-decompose an embedded covariance and choose how many components to keep.

    A fixed ``r`` (clamped to L) takes precedence; otherwise the smallest
    ``r`` whose leading eigenvalues carry at least ``energy`` of the total.
    """
    C = cov.matrix if isinstance(cov, EmbeddedCovariance) else np.asarray(cov, dtype=float)
    vals, vecs = sym_eigen(C)
    L = vals.size
    if r is not None:
        if r < 1:
            raise ValidationError(f"retained component count must be >= 1, got {r}")
        return SSADecomposition(vals, vecs, min(int(r), L))
    if not 0 < energy <= 1:
        raise ValidationError(f"energy threshold must be in (0, 1], got {energy}")
    lam = np.clip(vals, 0.0, None)
    total = lam.sum()
    if total <= 0:
        raise NumericalError("covariance has no positive eigenvalues")
    share = np.cumsum(lam) / total
    r_energy = int(np.searchsorted(share, energy * (1 - 1e-12)) + 1)
    return SSADecomposition(vals, vecs, min(r_energy, L))


def diagonal_average(Xhat):
    """Average the anti-diagonals of an L x K matrix into a length L+K-1 series."""
    L, K = Xhat.shape
    out = np.zeros(L + K - 1)
    counts = np.zeros(L + K - 1)
    for i in range(L):
        out[i : i + K] += Xhat[i]
        counts[i : i + K] += 1
    return out / counts


def reconstruct(X, dec):
    """Project the trajectory matrix on the retained eigenvectors and hankelise."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != dec.L:
        raise ValidationError(f"trajectory has L={X.shape[0]}, decomposition has L={dec.L}")
    U = dec.retained
    return diagonal_average(U @ (U.T @ X))


def lrf(dec):
    """Linear recurrent coefficients from the retained eigenvectors.

    Each retained eigenvector is split into its first L-1 entries and its
    last entry pi_j; ``phi = sum_j pi_j * head_j / (1 - sum_j pi_j**2)``.
    ``phi[0]`` multiplies the oldest of the L-1 lagged values.
    """
    U = dec.retained
    if U.shape[0] < 2:
        raise ValidationError("LRF needs L >= 2")
    pi = U[-1, :]
    nu2 = float(pi @ pi)
    if nu2 >= 1 - VERTICALITY_TOL:
        raise NumericalError(f"vertical eigenspace, LRF undefined (verticality {nu2:.6f})")
    phi = U[:-1, :] @ pi / (1 - nu2)
    return LRFModel(phi, nu2, dec.r, dec.L)


def forecast(series, model, horizon):
    """Chain-rule forecast: each step applies the LRF to the latest L-1 values."""
    y = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    d = model.phi.size
    if y.size < d:
        raise ValidationError(f"series of length {y.size} is shorter than the LRF order {d}")
    window = list(y[y.size - d :]) if d else []
    out = np.empty(horizon)
    for h in range(horizon):
        nxt = float(np.dot(model.phi, window)) if d else 0.0
        out[h] = nxt
        if d:
            window.pop(0)
            window.append(nxt)
    return out


def univariate_model(values, L, r=None, energy=DEFAULT_ENERGY):
    cov = covariance(embed(values, L), unit_norm=False)
    return lrf(decompose(cov, r=r, energy=energy))


def shared_model(cluster, L, r=None, energy=DEFAULT_ENERGY):
    """One LRF from the stacked covariance of every member of a cluster."""
    channels = [_as_values(s) for s in cluster]
    cov = _stacked(channels, L)
    return lrf(decompose(cov, r=r, energy=energy))


@dataclass
class MSSAForecast:
    forecasts: List[np.ndarray]
    model: Optional[LRFModel]
    fallback: bool = False


def mssa_forecast(cluster, L, horizon, r=None, energy=DEFAULT_ENERGY):
    """Forecast every member of a cluster with one shared LRF.

    If the shared eigenspace is vertical, each series is forecast with its
    own univariate LRF instead and ``fallback`` is set.
    """
    values = [_as_values(s) for s in cluster]
    if not values:
        raise ValidationError("empty cluster")
    try:
        model = shared_model(values, L, r=r, energy=energy)
    except NumericalError as exc:
        logger.warning("shared LRF failed (%s); falling back to univariate SSA", exc)
        fc = [forecast(v, univariate_model(v, L, r=r, energy=energy), horizon) for v in values]
        return MSSAForecast(fc, None, fallback=True)
    return MSSAForecast([forecast(v, model, horizon) for v in values], model)


def _as_values(s):
    return s.values if isinstance(s, TimeSeries) else np.asarray(s, dtype=float)


def _stacked(channels, L):
    # members may differ in length; stacking only needs each to embed at L
    C = np.zeros((L, L))
    for v in channels:
        if v.size < L + 1:
            raise ValidationError(f"series of length {v.size} too short for L={L}")
        X = embed(v, L)
        C += X @ X.T
    return EmbeddedCovariance(0.5 * (C + C.T), "", False)
