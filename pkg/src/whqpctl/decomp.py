"""Dense decomposition kernels: Cholesky, sorted QR, compact COD and its rate.

The compact complete orthogonal decomposition of an ``m x n`` matrix is
``A = U @ L @ Y.T`` with orthonormal ``U`` (m x r), lower-triangular ``L``
(r x r) and orthonormal ``Y`` (n x r).  ``Ztilde`` completes ``Y`` to an
orthogonal basis of R^n, so its columns span the kernel of ``A``.

It is built from the transpose: a column-pivoted QR of ``A.T`` gives ``Y`` and
an upper-trapezoidal block whose trailing part is then eliminated from the
right (an RQ step).  That is the same two-stage construction that the rate
computation in :func:`cod_rate` differentiates, so both stay in sync.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

DEFAULT_RANK_TOL = 1e-9
SYMMETRY_TOL = 1e-10


class NotPositiveDefinite(ValueError):
    pass


class NotSymmetric(ValueError):
    pass


class RankDeficientL(ValueError):
    pass


@dataclass(frozen=True)
class CholeskyFactor:
    R: np.ndarray  # upper triangular, W = R.T @ R


@dataclass(frozen=True)
class SortedQr:
    Q: np.ndarray
    R: np.ndarray
    perm: np.ndarray  # A[:, perm] == Q @ R


@dataclass(frozen=True)
class CompactCod:
    rank: int
    U: np.ndarray
    L: np.ndarray
    Y: np.ndarray
    Ztilde: np.ndarray
    perm: np.ndarray  # row pivoting of A (column pivoting of A.T)
    tol: float  # absolute threshold used for the rank decision

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.Y.shape[0]

    def pinv(self) -> np.ndarray:
        """Moore-Penrose inverse ``Y L^-1 U^T``."""
        if self.rank == 0:
            return np.zeros((self.Y.shape[0], self.U.shape[0]))
        return self.Y @ sla.solve_triangular(self.L, self.U.T, lower=True, check_finite=False)


@dataclass(frozen=True)
class CodRates:
    dU: np.ndarray
    dL: np.ndarray
    dY: np.ndarray
    dZtilde: np.ndarray


def cholesky(W, sym_tol: float = SYMMETRY_TOL) -> CholeskyFactor:
    """Upper Cholesky factor ``R`` with ``R.T @ R == W`` and positive diagonal."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    if W.size == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    scale = max(1.0, np.abs(W).max())
    if np.abs(W - W.T).max() > sym_tol * scale:
        raise NotSymmetric("matrix is not symmetric to tolerance")
    try:
        lower = np.linalg.cholesky(0.5 * (W + W.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(lower) > 0.0):
        raise NotPositiveDefinite("non-positive pivot")
    return CholeskyFactor(lower.T.copy())


def _fix_qr_signs(Q: np.ndarray, R: np.ndarray) -> None:
    # make diag(R) >= 0 so the factorization is a smooth function of A
    k = min(R.shape)
    s = np.sign(np.diag(R[:k, :k]))
    s[s == 0] = 1.0
    Q[:, :k] *= s
    R[:k, :] *= s[:, None]


def sorted_qr(A, perm=None) -> SortedQr:
    """Column-pivoted QR, ``A[:, perm] = Q R`` with non-increasing ``|diag(R)|``.

    Greedy max-norm pivoting.  Passing ``perm`` reuses a previous pivot order
    (no re-sorting), which keeps the factors smooth along a path.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if m == 0 or n == 0:
        p = np.arange(n) if perm is None else np.asarray(perm)
        return SortedQr(np.eye(m), np.zeros((m, n)), p)
    if perm is None:
        Q, R, p = sla.qr(A, pivoting=True, check_finite=False)
    else:
        p = np.asarray(perm)
        Q, R = sla.qr(A[:, p], check_finite=False)
    _fix_qr_signs(Q, R)
    return SortedQr(Q, R, p)


def rank_threshold(A: np.ndarray, rank_tol: float) -> float:
    scale = np.abs(A).sum(axis=1).max() if A.size else 0.0
    return rank_tol * max(1.0, scale)


def compact_cod(A, rank_tol: float = DEFAULT_RANK_TOL, perm=None) -> CompactCod:
    """Compact COD ``A = U L Y^T`` with the rank decided by ``rank_tol``.

    The rank is the number of ``|diag(R)|`` entries of the sorted QR of
    ``A.T`` above ``rank_tol * max(1, ||A||_inf)``.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    tol = rank_threshold(A, rank_tol)
    qr = sorted_qr(A.T, perm)
    d = np.abs(np.diag(qr.R)) if min(m, n) else np.zeros(0)
    r = 0
    while r < d.size and d[r] > tol:
        r += 1
    Q1 = qr.Q[:, :r]
    Z = qr.Q[:, r:]
    if r == 0:
        return CompactCod(0, np.zeros((m, 0)), np.zeros((0, 0)), np.zeros((n, 0)), Z, qr.perm, tol)
    top = qr.R[:r, :]
    if r == m:
        P1, V1t = top, np.eye(m)
    else:
        P1, V1t = sla.rq(top, mode="economic", check_finite=False)
    s = np.sign(np.diag(P1))
    s[s == 0] = 1.0
    P1 = P1 * s
    V1t = V1t * s[:, None]
    U = np.empty((m, r))
    U[qr.perm] = V1t.T
    return CompactCod(r, U, np.ascontiguousarray(P1.T), Q1, Z, qr.perm, tol)


def _skew_from_lower(X: np.ndarray) -> np.ndarray:
    low = np.tril(X, -1)
    return low - low.T


def cod_rate(A, Adot, cod: CompactCod) -> CodRates:
    """Time derivatives of the compact COD factors along ``A(t)``.

    Assumes the rank (and the pivot order stored in ``cod``) is locally
    constant.  ``dZtilde`` uses the minimal-rotation gauge
    ``Ztilde.T @ dZtilde = 0``.
    """
    A = np.asarray(A, dtype=float)
    Adot = np.asarray(Adot, dtype=float)
    m, n = A.shape
    r = cod.rank
    if r == 0:
        return CodRates(np.zeros((m, 0)), np.zeros((0, 0)), np.zeros((n, 0)), np.zeros_like(cod.Ztilde))
    if np.any(np.abs(np.diag(cod.L)) <= cod.tol):
        raise RankDeficientL("L has a diagonal entry below the rank tolerance")

    # factors of B = A.T with B[:, perm] = Q1 P1 V1^T
    perm = cod.perm
    Q1 = cod.Y
    P1 = cod.L.T
    V1 = cod.U[perm]
    B = A.T[:, perm]
    dB = Adot.T[:, perm]

    # first step: dQ1 from the leading r columns, B1 = Q1 R1
    R1 = Q1.T @ B[:, :r]
    X = sla.solve_triangular(R1, dB[:, :r].T, trans="T", lower=False, check_finite=False).T  # dB1 R1^-1
    Omega = _skew_from_lower(Q1.T @ X)  # Q1^T dQ1
    dQ1 = Q1 @ Omega + X - Q1 @ (Q1.T @ X)

    # second step: dV1, dP1 from P1^-1 Q1^T dB V
    G = sla.solve_triangular(P1, Q1.T @ dB, lower=False, check_finite=False)
    H = G @ V1 - sla.solve_triangular(P1, Omega @ P1, lower=False, check_finite=False)
    S = _skew_from_lower(H)  # dV1^T V1
    dV1 = V1 @ S.T + G.T - V1 @ (V1.T @ G.T)
    dP1 = P1 @ (H - S)

    dU = np.empty_like(cod.U)
    dU[perm] = dV1
    dY = dQ1
    dZ = -cod.Y @ (dY.T @ cod.Ztilde)
    return CodRates(dU, dP1.T.copy(), dY, dZ)
