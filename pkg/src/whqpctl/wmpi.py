"""Weighted Moore-Penrose inverse and the dynamically consistent projected stack.

Projectors ``P_k`` are never formed in the solver path.  Instead each level
keeps the basis ``Z_{k-1}`` of the remaining motion, with ``Z_0 = R_0^-1``
(``M = R_0^T R_0``) and ``Z_k = Z_{k-1} Ztilde_k``, so that
``P_k = Z_k Z_k^T M`` and ``Z_k^T M Z_k = E``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .decomp import DEFAULT_RANK_TOL, CompactCod, cholesky, compact_cod


@dataclass(frozen=True)
class WeightPair:
    W1: np.ndarray  # task-space metric
    W0: np.ndarray  # configuration-space metric


@dataclass(frozen=True)
class StackLevelFactors:
    level_index: int  # 1-based priority
    A: np.ndarray
    R: np.ndarray  # Cholesky factor of the level weight
    Zprev: np.ndarray
    cod: CompactCod  # of R @ A @ Zprev
    pinv: np.ndarray  # weighted inverse of the projected level, Zprev Y L^-1 U^T R

    @property
    def rank(self) -> int:
        return self.cod.rank

    @property
    def Ahat(self) -> np.ndarray:
        return self.R @ self.A @ self.Zprev

    @property
    def Z(self) -> np.ndarray:
        """Basis left after this level, ``Zprev @ Ztilde``."""
        return self.Zprev @ self.cod.Ztilde


@dataclass(frozen=True)
class ProjectedStack:
    levels: tuple[StackLevelFactors, ...]
    Zfinal: np.ndarray
    M: np.ndarray
    R0: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def Z(self, k: int) -> np.ndarray:
        """``Z_k`` for ``0 <= k <= len(levels)``."""
        if k < len(self.levels):
            return self.levels[k].Zprev
        return self.Zfinal

    def pinv_stack(self) -> np.ndarray:
        """Horizontal concatenation of the per-level weighted inverses."""
        if not self.levels:
            return np.zeros((self.n, 0))
        return np.hstack([lv.pinv for lv in self.levels])


def _inv_upper(R: np.ndarray) -> np.ndarray:
    return sla.solve_triangular(R, np.eye(R.shape[0]), lower=False, check_finite=False)


def wmpi(A, weights: WeightPair, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Weighted Moore-Penrose inverse ``R_0^-1 pinv(R_1 A R_0^-1) R_1``."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    R1 = cholesky(weights.W1).R
    R0 = cholesky(weights.W0).R
    if R1.shape != (m, m) or R0.shape != (n, n):
        raise ValueError("weight dimensions do not match A")
    # A R0^-1 by a triangular solve against R0^T
    Ahat = R1 @ sla.solve_triangular(R0, A.T, trans="T", lower=False).T
    cod = compact_cod(Ahat, rank_tol)
    return sla.solve_triangular(R0, cod.pinv() @ R1, lower=False)


def build_projected_stack(levels: Sequence[tuple], M, rank_tol: float = DEFAULT_RANK_TOL,
                          R0=None) -> ProjectedStack:
    """Run the Z-recursion over ``levels`` given as ``(A_k, W_k)`` or ``(A_k, W_k, R_k)``.

    A level with zero rows is a no-op.  ``R_k`` (and ``R0`` for ``M``) may be
    passed when the Cholesky factor is already known.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if R0 is None:
        R0 = cholesky(M).R
    Z = _inv_upper(R0)
    out = []
    for idx, level in enumerate(levels, start=1):
        A = np.asarray(level[0], dtype=float).reshape(-1, n)
        R = level[2] if len(level) > 2 and level[2] is not None else cholesky(level[1]).R
        Ahat = R @ (A @ Z)
        cod = compact_cod(Ahat, rank_tol)
        if cod.rank:
            pinv = (Z @ cod.Y) @ sla.solve_triangular(cod.L, cod.U.T @ R, lower=True, check_finite=False)
        else:
            pinv = np.zeros((n, A.shape[0]))
        out.append(StackLevelFactors(idx, A, R, Z, cod, pinv))
        Z = Z @ cod.Ztilde
    return ProjectedStack(tuple(out), Z, M, R0)


def projector(stack: ProjectedStack, k: int) -> np.ndarray:
    """Dense ``P_k = Z_k Z_k^T M``; test helper, not used by the solver."""
    if not 0 <= k <= len(stack.levels):
        raise IndexError(f"level {k} out of range 0..{len(stack.levels)}")
    Z = stack.Z(k)
    return Z @ (Z.T @ stack.M)


def projected_level(stack: ProjectedStack, k: int) -> np.ndarray:
    """Dense projected matrix ``A_k P_{k-1}`` for the 1-based level ``k``."""
    lv = stack.levels[k - 1]
    return lv.A @ projector(stack, k - 1)
