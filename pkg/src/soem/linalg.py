"""Symmetric-matrix primitives.

Off-diagonal functionals, weighted orthogonal approximate joint
diagonalisation (cyclic Jacobi sweeps), Gram-Schmidt orthonormalisation and
a sorted symmetric eigendecomposition.

Conventions: a basis ``V`` holds its vectors in columns and diagonalises a
matrix ``C`` through the congruence ``V.T @ C @ V``.
"""

from __future__ import annotations

import math
import warnings
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .errors import NumericalError, ValidationError

SYM_ATOL = 1e-12
PAIR_EPS = 1e-15


def check_symmetric(A, name="matrix"):
    """Return ``A`` as a float array after checking it is square, finite and symmetric."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    if not np.allclose(A, A.T, rtol=0.0, atol=SYM_ATOL):
        raise ValidationError(f"{name} is not symmetric")
    return A


def off(A):
    """Sum of squared off-diagonal entries of a square matrix."""
    A = np.asarray(A, dtype=float)
    return float(np.sum(A * A) - np.sum(np.diag(A) ** 2))


def off_batch(A):
    """``off`` over the last two axes of a stack of square matrices."""
    A = np.asarray(A, dtype=float)
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    return np.sum(A * A, axis=(-2, -1)) - np.sum(diag * diag, axis=-1)


@njit(cache=True, nogil=True)
def _offsum(A):
    M, L, _ = A.shape
    total = 0.0
    for m in range(M):
        for i in range(L):
            for j in range(L):
                if i != j:
                    total += A[m, i, j] * A[m, i, j]
    return total


@njit(cache=True, nogil=True)
def _jacobi_sweeps(A, V, tol, max_sweeps, trace):
    # A: (M, L, L) congruence-transformed matrices, rotated in place.
    # V: (L, L) accumulated basis, rotated in place.
    M, L, _ = A.shape
    scale = 0.0
    for m in range(M):
        for i in range(L):
            for j in range(L):
                scale += A[m, i, j] * A[m, i, j]
    # pairs whose off-diagonal mass is at round-off level are left alone
    floor = PAIR_EPS * PAIR_EPS * scale
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(L - 1):
            for q in range(p + 1, L):
                gdd = 0.0
                goo = 0.0
                gdo = 0.0
                for m in range(M):
                    d = A[m, p, p] - A[m, q, q]
                    o = A[m, p, q] + A[m, q, p]
                    gdd += d * d
                    goo += o * o
                    gdo += d * o
                if goo <= floor:
                    continue
                # quarter-angle form stays valid when ton < 0 and toff == 0
                theta = 0.25 * math.atan2(2.0 * gdo, gdd - goo)
                c = math.cos(theta)
                s = math.sin(theta)
                if abs(s) > tol:
                    rotated = True
                    for m in range(M):
                        for k in range(L):
                            ap = A[m, k, p]
                            aq = A[m, k, q]
                            A[m, k, p] = c * ap + s * aq
                            A[m, k, q] = c * aq - s * ap
                        for k in range(L):
                            ap = A[m, p, k]
                            aq = A[m, q, k]
                            A[m, p, k] = c * ap + s * aq
                            A[m, q, k] = c * aq - s * ap
                    for k in range(L):
                        vp = V[k, p]
                        vq = V[k, q]
                        V[k, p] = c * vp + s * vq
                        V[k, q] = c * vq - s * vp
        trace[sweep] = _offsum(A)
        if not rotated:
            return sweep + 1, True
    return max_sweeps, False


class JDResult(NamedTuple):
    """Outcome of :func:`joint_diagonalize`.

    ``trace`` holds the weighted criterion before the first sweep followed by
    its value after each sweep.
    """

    basis: np.ndarray
    residual: float
    converged: bool
    sweeps: int
    trace: np.ndarray


def joint_diagonalize(matrices, weights=None, init=None, tol=1e-8, max_sweeps=100):
    """Weighted orthogonal approximate joint diagonalisation.

    Finds an orthonormal ``V`` that (locally) minimises
    ``sum_m w_m * off(V.T @ C_m @ V)`` by cyclic Jacobi sweeps over all index
    pairs in row-major order. Each rotation angle is the closed-form optimum
    of the weighted criterion for its pair (Cardoso-Souloumiac angle).

    Parameters
    ----------
    matrices : sequence of ndarray, each (L, L)
        Symmetric matrices sharing one dimension.
    weights : sequence of float, optional
        Nonnegative weights, at least one positive. Defaults to all ones.
    init : ndarray, shape (L, L), optional
        Orthonormal warm-start basis. Identity when omitted.
    tol : float
        A sweep in which every rotation has ``|sin(theta)| <= tol`` stops the
        iteration.
    max_sweeps : int
        Upper bound on the number of sweeps.

    Returns
    -------
    JDResult
        ``basis`` (L, L), weighted ``residual``, ``converged`` flag, number
        of ``sweeps`` run and the per-sweep criterion ``trace``.

    Notes
    -----
    Because ``off`` is quadratic, weighting matrix ``C_m`` by ``w_m`` is the
    same as feeding ``sqrt(w_m) * C_m`` to the unweighted criterion, which is
    how weights enter the rotation sums. Zero-weight matrices are dropped.
    """
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[0] == 0 or mats.shape[1] != mats.shape[2]:
        raise ValidationError(f"expected a nonempty stack of square matrices, got shape {mats.shape}")
    n_mats, L, _ = mats.shape
    if weights is None:
        w = np.ones(n_mats)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n_mats,):
            raise ValidationError(f"got {w.size} weights for {n_mats} matrices")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise ValidationError("at least one weight must be positive")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    if max_sweeps < 1:
        raise ValidationError("max_sweeps must be >= 1")

    if init is None:
        V = np.eye(L)
    else:
        V = np.array(init, dtype=float)
        if V.shape != (L, L):
            raise ValidationError(f"init has shape {V.shape}, matrices are {L}x{L}")

    keep = w > 0
    scaled = mats[keep] * np.sqrt(w[keep])[:, None, None]
    A = np.ascontiguousarray(V.T @ scaled @ V)
    V = np.ascontiguousarray(V)

    trace = np.empty(max_sweeps + 1)
    trace[0] = _offsum(A)
    sweeps, converged = _jacobi_sweeps(A, V, float(tol), int(max_sweeps), trace[1:])
    trace = trace[: sweeps + 1]
    return JDResult(V, float(trace[-1]), bool(converged), int(sweeps), trace)


def delta(matrices: Sequence[np.ndarray], tol=1e-8, max_sweeps=100) -> float:
    """Residual off-diagonal mass after jointly diagonalising a set.

    Non-convergence is reported through a ``RuntimeWarning`` and the residual
    attained is still returned.
    """
    mats = [check_symmetric(m) for m in matrices]
    if not mats:
        raise ValidationError("delta needs at least one matrix")
    res = joint_diagonalize(mats, tol=tol, max_sweeps=max_sweeps)
    if not res.converged:
        warnings.warn(
            "joint diagonalisation did not converge; returning the residual attained",
            RuntimeWarning,
            stacklevel=2,
        )
    return max(res.residual, 0.0)


def gram_schmidt(vectors, rng=None, max_redraws=10, rel_tol=1e-10):
    """Orthonormalise the columns of ``vectors`` (modified Gram-Schmidt).

    The first output column is parallel to the first input column. A column
    that is numerically dependent on its predecessors is redrawn from ``rng``
    (standard normal) up to ``max_redraws`` times; without an ``rng`` a
    dependent column raises immediately.
    """
    Q = np.array(vectors, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"expected L vectors of length L as columns, got shape {Q.shape}")
    L = Q.shape[0]
    for k in range(L):
        for attempt in range(max_redraws + 1):
            v = Q[:, k].copy()
            scale = np.linalg.norm(v)
            for j in range(k):
                v -= (Q[:, j] @ v) * Q[:, j]
            norm = np.linalg.norm(v)
            if scale > 0 and norm > rel_tol * scale:
                Q[:, k] = v / norm
                break
            if rng is None or attempt == max_redraws:
                raise NumericalError(f"vectors are rank deficient at column {k}")
            Q[:, k] = rng.standard_normal(L)
    return Q


def sym_eigen(A):
    """Eigenvalues (descending) and matching orthonormal eigenvectors of a symmetric matrix."""
    A = check_symmetric(A)
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def is_orthonormal(U, atol=1e-10):
    U = np.asarray(U, dtype=float)
    return U.ndim == 2 and U.shape[0] == U.shape[1] and np.allclose(U.T @ U, np.eye(U.shape[0]), atol=atol)
