"""Passivity-based torque control in the coordinates of the active task stack.

The columns ``Z_{k-1} Y_k`` of all active levels form ``F^-1``; with the
inertia matrix as metric they are M-orthonormal, so ``F^-T M F^-1 = E`` and
``xi = F dq`` are the task momenta.  The law is

    tau = g + F^T (dxi_r + Gamma_d xi_r + Gamma_s xi - D (xi - xi_r))

with ``Gamma = F^-T (C F^-1 + M dF^-1)`` skew-symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .decomp import DEFAULT_RANK_TOL, cod_rate
from .robot import RobotState, SerialChain, dynamics, task_kinematics
from .whqp import (ActiveSearchState, DimensionMismatch, Hierarchy, TaskLevel,
                   active_search, normal_hierarchy, normalize)


class SingularTransform(RuntimeError):
    pass


class BadPartition(ValueError):
    pass


def _sym(X):
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class GainSet:
    """Per-level gain and damping blocks over task rows (diagonal blocks of K, D)."""

    Kbar: tuple
    Dbar: tuple

    def __post_init__(self):
        for K, D in zip(self.Kbar, self.Dbar):
            for X in (K, D):
                if X.shape[0] != X.shape[1] or np.abs(X - X.T).max() > 1e-12:
                    raise ValueError("gain blocks must be symmetric")
                if X.size and np.linalg.eigvalsh(X).min() <= 0:
                    raise ValueError("gain blocks must be positive definite")

    @classmethod
    def from_tasks(cls, chain: SerialChain, tasks, damping=None):
        K = tuple(np.diag(t.gain_vector(chain.n)) for t in tasks)
        D = K if damping is None else tuple(np.asarray(d, dtype=float) for d in damping)
        return cls(K, D)


@dataclass(frozen=True)
class LevelTransform:
    level: int  # 1-based priority
    rows: tuple  # active normalized rows
    A: np.ndarray
    dA: np.ndarray
    R: np.ndarray
    Zprev: np.ndarray
    dZprev: np.ndarray
    cod: object
    rates: object  # CodRates or None for rank 0

    @property
    def rank(self) -> int:
        return self.cod.rank


@dataclass(frozen=True)
class TransformState:
    Finv: np.ndarray
    F: np.ndarray
    dFinv: np.ndarray
    Gamma: np.ndarray
    blocks: tuple  # (level, start, stop) column ranges of F^-1
    levels: tuple  # LevelTransform per hierarchy level
    xi: np.ndarray = None

    def inertia_residual(self, M) -> float:
        return float(np.linalg.norm(self.Finv.T @ M @ self.Finv - np.eye(M.shape[0])))

    def skew_residual(self) -> float:
        return float(np.linalg.norm(self.Gamma + self.Gamma.T))


def metric_basis_rate(R0, Mdot) -> np.ndarray:
    """``dZ_0`` for ``Z_0 = R_0^-1`` when ``M = R_0^T R_0`` moves with rate ``Mdot``."""
    Z0 = sla.solve_triangular(R0, np.eye(R0.shape[0]), lower=False, check_finite=False)
    Phi = Z0.T @ Mdot @ Z0
    X = np.triu(Phi)
    X[np.diag_indices_from(X)] *= 0.5  # dR0 R0^-1
    return -Z0 @ X


def build_transform(active: ActiveSearchState, M, Mdot, C, dA_levels, dq=None,
                    zero_rates: bool = False) -> TransformState:
    """Assemble ``F^-1``, ``F``, ``dF^-1`` and ``Gamma`` from the active stack.

    ``dA_levels[k]`` is the rate of the active rows of level ``k + 1`` (same
    row order as ``active.rows``).  With ``zero_rates`` the derivative terms
    are dropped (used on the step of an active-set switch).
    """
    stack = active.factors
    n = stack.n
    dZ = np.zeros((n, n)) if zero_rates else metric_basis_rate(stack.R0, Mdot)
    cols, dcols, blocks, levels = [], [], [], []
    start = 0
    for k, f in enumerate(stack.levels, start=1):
        dA = np.asarray(dA_levels[k - 1], dtype=float).reshape(f.A.shape)
        rates = None
        dZnext = dZ @ f.cod.Ztilde
        if f.rank:
            if zero_rates:
                dY = np.zeros_like(f.cod.Y)
            else:
                dAhat = f.R @ (dA @ f.Zprev + f.A @ dZ)
                rates = cod_rate(f.Ahat, dAhat, f.cod)
                dY = rates.dY
                dZnext = dZnext + f.Zprev @ rates.dZtilde
            cols.append(f.Zprev @ f.cod.Y)
            dcols.append(dZ @ f.cod.Y + f.Zprev @ dY)
            blocks.append((k, start, start + f.rank))
            start += f.rank
        levels.append(LevelTransform(k, active.rows[k - 1], f.A, dA, f.R, f.Zprev, dZ, f.cod, rates))
        dZ = dZnext
    if start != n:
        raise SingularTransform(f"active tasks span {start} of {n} directions")
    Finv = np.hstack(cols)
    dFinv = np.hstack(dcols)
    F = Finv.T @ M
    Gamma = Finv.T @ (C @ Finv + M @ dFinv)
    xi = None if dq is None else F @ dq
    return TransformState(Finv, F, dFinv, Gamma, tuple(blocks), tuple(levels), xi)


def _block_mask(blocks, n):
    mask = np.zeros((n, n), dtype=bool)
    covered = 0
    for _, a, b in blocks:
        if a != covered or b <= a:
            raise BadPartition("blocks must be contiguous and non-empty")
        mask[a:b, a:b] = True
        covered = b
    if covered != n:
        raise BadPartition(f"blocks cover {covered} of {n} entries")
    return mask


def split_gamma(Gamma, blocks):
    """Block-diagonal part over the active blocks and the remainder.

    ``blocks`` is a sequence of sizes or of ``(level, start, stop)`` triples.
    """
    Gamma = np.asarray(Gamma, dtype=float)
    n = Gamma.shape[0]
    if blocks and np.ndim(blocks[0]) == 0:
        edges = np.concatenate([[0], np.cumsum(blocks)]).astype(int)
        blocks = [(i, a, b) for i, (a, b) in enumerate(zip(edges[:-1], edges[1:]))]
    mask = _block_mask(blocks, n)
    Gd = np.where(mask, Gamma, 0.0)
    return Gd, Gamma - Gd


@dataclass(frozen=True)
class LevelReference:
    b: np.ndarray  # normalized active-row reference
    db: np.ndarray
    Dbar: np.ndarray  # damping over the active rows


def reference_xi(transform: TransformState, refs, mode: str = "whqp"):
    """Stacked reference momenta and their rate.

    ``mode="whqp"`` uses ``xi_r,k = L_k^-1 U_k^T R_k (b_k - A_k dq_r,<k)``,
    which is ``F`` applied to the prioritized velocity solution; ``"task"``
    drops the higher-priority coupling and uses ``L_k^-1 U_k^T R_k b_k``.
    """
    if mode not in ("whqp", "task"):
        raise ValueError(f"unknown reference mode {mode}")
    n = transform.Finv.shape[0]
    xi_r = np.zeros(n)
    dxi_r = np.zeros(n)
    qr = np.zeros(n)  # dq_r accumulated over higher levels
    dqr = np.zeros(n)
    for (k, a, b) in transform.blocks:
        lt = transform.levels[k - 1]
        ref = refs[k - 1]
        if ref.b.shape != (lt.A.shape[0],):
            raise DimensionMismatch(f"level {k}: reference has {ref.b.shape[0]} rows, expected {lt.A.shape[0]}")
        cod = lt.cod
        if mode == "whqp":
            v = ref.b - lt.A @ qr
            dv = ref.db - lt.dA @ qr - lt.A @ dqr
        else:
            v, dv = ref.b, ref.db
        s = cod.U.T @ (lt.R @ v)
        xk = sla.solve_triangular(cod.L, s, lower=True, check_finite=False)
        if lt.rates is not None:
            ds = lt.rates.dU.T @ (lt.R @ v) + cod.U.T @ (lt.R @ dv)
            dxk = sla.solve_triangular(cod.L, ds - lt.rates.dL @ xk, lower=True, check_finite=False)
        else:
            dxk = sla.solve_triangular(cod.L, cod.U.T @ (lt.R @ dv), lower=True, check_finite=False)
        xi_r[a:b] = xk
        dxi_r[a:b] = dxk
        col = transform.Finv[:, a:b]
        qr = qr + col @ xk
        dqr = dqr + transform.dFinv[:, a:b] @ xk + col @ dxk
    return xi_r, dxi_r


def damping_matrix(transform: TransformState, refs) -> np.ndarray:
    """Active-block damping ``sym(U_k^T Dbar_k U_k)``."""
    n = transform.Finv.shape[0]
    D = np.zeros((n, n))
    for (k, a, b) in transform.blocks:
        U = transform.levels[k - 1].cod.U
        D[a:b, a:b] = _sym(U.T @ refs[k - 1].Dbar @ U)
    return D


def control_torque(dq, transform: TransformState, xi_r, dxi_r, D, g) -> np.ndarray:
    Gd, Gs = split_gamma(transform.Gamma, transform.blocks)
    xi = transform.F @ dq
    return g + transform.F.T @ (dxi_r + Gd @ xi_r + Gs @ xi - D @ (xi - xi_r))


@dataclass
class ControlOutput:
    tau: np.ndarray
    transform: TransformState
    search: ActiveSearchState
    switched: bool
    xi: np.ndarray
    xi_r: np.ndarray
    dxi_r: np.ndarray
    dyn: object
    tasks: list
    ranks: tuple


@dataclass
class WhqpController:
    """Task-stack controller; keeps the previous active set as warm start.

    ``switch_policy`` is ``"zero"`` (drop the transform rates on the step of
    an active-set change) or ``"exact"``.  ``torque_rate_limit`` optionally
    bounds ``|d tau / dt|`` (N m/s) per joint.
    """

    chain: SerialChain
    tasks: list
    gains: GainSet = None
    xi_mode: str = "whqp"
    switch_policy: str = "zero"
    torque_rate_limit: float = None
    rank_tol: float = DEFAULT_RANK_TOL
    _prev_active: frozenset = field(default=None, repr=False)
    _prev_tau: np.ndarray = field(default=None, repr=False)
    _prev_ranks: tuple = field(default=None, repr=False)
    _validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.tasks = sorted(self.tasks, key=lambda s: s.priority)
        if self.gains is None:
            self.gains = GainSet.from_tasks(self.chain, self.tasks)
        if self.switch_policy not in ("zero", "exact"):
            raise ValueError("switch_policy must be 'zero' or 'exact'")

    def reset(self):
        self._prev_active = None
        self._prev_tau = None
        self._prev_ranks = None

    def compute(self, t: float, q, dq, dt: float = None) -> ControlOutput:
        chain = self.chain
        dyn = dynamics(chain, q, dq)
        state = RobotState(q, dq)
        tcp = dyn.tcp_jac
        data = [task_kinematics(chain, s, state, t, dyn.kin, tcp) for s in self.tasks]
        if self._validated:
            nh = normal_hierarchy([(d.J, d.b_kin, [s == "eq" for s in d.sense], d.W) for d in data], chain.n)
        else:
            # full validation once; the structure is identical afterwards
            nh = normalize(Hierarchy([TaskLevel(d.J, d.b_kin, d.sense, d.W, d.blocks) for d in data], chain.n))
            if all(s in ("eq", "ge") for d in data for s in d.sense):
                self._validated = True
        search = active_search(nh, dyn.M, warm_start=self._prev_active or (), rank_tol=self.rank_tol)
        ranks = tuple(f.rank for f in search.factors.levels)
        # a rank change moves F^-1 discontinuously just like an active-set change
        switched = self._prev_active is not None and (
            search.active != self._prev_active or ranks != self._prev_ranks)
        self._prev_active = search.active
        self._prev_ranks = ranks

        dA_levels, refs = [], []
        for k, (lv, d) in enumerate(zip(nh.levels, data)):
            rows = list(search.rows[k])
            src = [lv.source[i] for i in rows]
            sign = np.array([sg for _, sg in src], dtype=float)
            orig = [i for i, _ in src]
            dA_levels.append(sign[:, None] * d.dJ[orig])
            Kb = self.gains.Dbar[k]
            refs.append(LevelReference(lv.b[rows], sign * d.db_kin[orig],
                                       Kb[np.ix_(orig, orig)] * np.outer(sign, sign)))
        zero = switched and self.switch_policy == "zero"
        tr = build_transform(search, dyn.M, dyn.Mdot, dyn.C, dA_levels, dq, zero_rates=zero)
        xi_r, dxi_r = reference_xi(tr, refs, self.xi_mode)
        D = damping_matrix(tr, refs)
        tau = control_torque(dq, tr, xi_r, dxi_r, D, dyn.g)
        if self.torque_rate_limit is not None and self._prev_tau is not None and dt:
            step = self.torque_rate_limit * dt
            tau = self._prev_tau + np.clip(tau - self._prev_tau, -step, step)
        self._prev_tau = tau
        return ControlOutput(tau, tr, search, switched, tr.xi, xi_r, dxi_r, dyn, data, ranks)
