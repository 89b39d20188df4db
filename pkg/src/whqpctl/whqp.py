"""Weighted hierarchical quadratic programs.

A hierarchy is an ordered list of levels; level ``k`` asks for
``A_k x >= b_k + slack`` (or ``=``, ``<=``, double bounds) and minimizes
``1/2 w_k^T W_k w_k`` lexicographically.  Internally every row is brought to
``>=`` form: ``le`` rows are negated and ``range`` rows are split into two
``>=`` rows.  Rows are identified by ``(level, row)`` with a 1-based level and
a 0-based index into the normalized level.

Sign conventions used throughout: the slack is ``w = b - A x`` on the rows in
play (positive means a ``>=`` row is violated) and the multipliers are
``lambda_k = W_k w_k`` on the level being optimized, with
``sum_j A_j^T lambda_j + A_k^T lambda_k = 0`` for the higher-priority active
rows.  With this convention a positive multiplier means the row is needed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

from .decomp import DEFAULT_RANK_TOL, cholesky
from .wmpi import ProjectedStack, build_projected_stack

SENSES = ("eq", "ge", "le", "range")
FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
ENUMERATION_BOUND = 12


class DimensionMismatch(ValueError):
    pass


class InvalidLevel(IndexError):
    pass


class CycleDetected(RuntimeError):
    pass


class IterationLimitExceeded(RuntimeError):
    pass


class EnumerationBoundExceeded(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class TaskLevel:
    """One priority level.  ``b_upper`` is only read for ``range`` rows."""

    A: np.ndarray
    b: np.ndarray
    sense: tuple = None
    W: np.ndarray = None
    blocks: tuple = None
    b_upper: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        m = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(m)
        self.sense = tuple(self.sense) if self.sense is not None else ("eq",) * m
        if len(self.sense) != m or any(s not in SENSES for s in self.sense):
            raise DimensionMismatch("sense must list one of eq/ge/le/range per row")
        self.W = np.eye(m) if self.W is None else np.asarray(self.W, dtype=float)
        if self.W.shape != (m, m):
            raise DimensionMismatch(f"W must be {m}x{m}")
        self.blocks = tuple(self.blocks) if self.blocks is not None else ((m,) if m else ())
        if sum(self.blocks) != m:
            raise DimensionMismatch("weight blocks must sum to the row count")
        mask = np.zeros((m, m), dtype=bool)
        start = 0
        for size in self.blocks:
            mask[start:start + size, start:start + size] = True
            start += size
        if np.any(self.W[~mask] != 0.0):
            raise ValueError("W is not block-diagonal with the declared blocks")
        cholesky(self.W)
        if "range" in self.sense:
            if self.b_upper is None:
                raise DimensionMismatch("range rows need b_upper")
            self.b_upper = np.asarray(self.b_upper, dtype=float).reshape(m)
            for i, s in enumerate(self.sense):
                if s == "range" and not self.b[i] < self.b_upper[i]:
                    raise ValueError(f"range row {i}: lower bound must be below upper bound")
        for i, s in enumerate(self.sense):
            if s != "eq" and np.any(np.delete(self.W[i], i) != 0.0):
                # slack of an inactive inequality would otherwise be coupled
                raise ValueError(f"inequality row {i} must have its own 1x1 weight block")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @classmethod
    def equality(cls, A, b, W=None, blocks=None):
        A = np.atleast_2d(A)
        return cls(A, b, ("eq",) * A.shape[0], W, blocks)


@dataclass
class Hierarchy:
    levels: list
    n: int = None

    def __post_init__(self):
        self.levels = list(self.levels)
        if self.n is None:
            if not self.levels:
                raise DimensionMismatch("cannot infer n from an empty hierarchy")
            self.n = self.levels[0].A.shape[1]
        for k, lv in enumerate(self.levels, start=1):
            if lv.A.shape[1] != self.n:
                raise DimensionMismatch(f"level {k} has {lv.A.shape[1]} columns, expected {self.n}")

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class NormalLevel:
    A: np.ndarray
    b: np.ndarray
    is_eq: np.ndarray
    W: np.ndarray
    source: tuple  # (original row, +1 / -1) for each normalized row


@dataclass(frozen=True)
class NormalHierarchy:
    levels: tuple
    n: int

    def ids(self, k: int) -> list:
        return [(k, i) for i in range(self.levels[k - 1].A.shape[0])]

    def all_ids(self) -> list:
        return [rid for k in range(1, len(self.levels) + 1) for rid in self.ids(k)]

    def is_eq(self, rid) -> bool:
        return bool(self.levels[rid[0] - 1].is_eq[rid[1]])

    def row(self, rid):
        lv = self.levels[rid[0] - 1]
        return lv.A[rid[1]], lv.b[rid[1]]


def normalize(hierarchy) -> NormalHierarchy:
    if isinstance(hierarchy, NormalHierarchy):
        return hierarchy
    levels = []
    for lv in hierarchy.levels:
        rows, rhs, eq, src = [], [], [], []
        for i, s in enumerate(lv.sense):
            if s in ("eq", "ge", "range"):
                rows.append(lv.A[i])
                rhs.append(lv.b[i])
                eq.append(s == "eq")
                src.append((i, 1))
            if s in ("le", "range"):
                rows.append(-lv.A[i])
                rhs.append(-(lv.b_upper[i] if s == "range" else lv.b[i]))
                eq.append(False)
                src.append((i, -1))
        idx = [i for i, _ in src]
        W = lv.W[np.ix_(idx, idx)].copy()
        for a, (ia, _) in enumerate(src):
            for c, (ic, _) in enumerate(src):
                if a != c and ia == ic:
                    W[a, c] = 0.0
        levels.append(NormalLevel(np.array(rows, dtype=float).reshape(-1, hierarchy.n),
                                  np.array(rhs, dtype=float), np.array(eq, dtype=bool), W,
                                  tuple(src)))
    return NormalHierarchy(tuple(levels), hierarchy.n)


def normal_hierarchy(levels, n: int) -> NormalHierarchy:
    """Build directly from ``(A, b, is_eq, W)`` rows already in ``>=``/``=`` form.

    No validation; meant for callers that assemble the same verified
    structure every control step.
    """
    out = []
    for A, b, is_eq, W in levels:
        m = len(b)
        out.append(NormalLevel(np.asarray(A, dtype=float).reshape(m, n), np.asarray(b, dtype=float),
                               np.asarray(is_eq, dtype=bool), W, tuple((i, 1) for i in range(m))))
    return NormalHierarchy(tuple(out), n)


def level_objectives(hierarchy, x) -> np.ndarray:
    """Per-level ``1/2 w^T W w`` at ``x``; inequality rows only count violation."""
    nh = normalize(hierarchy)
    out = []
    for lv in nh.levels:
        w = lv.b - lv.A @ x
        w = np.where(lv.is_eq, w, np.maximum(w, 0.0))
        out.append(0.5 * w @ lv.W @ w)
    return np.array(out)


def _active_rows(nh: NormalHierarchy, active, k: int) -> list:
    return sorted(i for (kk, i) in active if kk == k)


@dataclass(frozen=True)
class PrimalSolution:
    x: np.ndarray
    eta: int
    factors: ProjectedStack
    v: tuple  # per level, b_k - A_k x^(k-1) on active rows
    w: tuple  # per level, b_k - A_k x^(k) on active rows
    partial: tuple  # x^(k) after each level
    rows: tuple  # active normalized row indices per level


def _build_stack(nh: NormalHierarchy, active, M, R0, rank_tol, upto=None) -> tuple:
    upto = len(nh.levels) if upto is None else upto
    rows_all, levels = [], []
    for k in range(1, upto + 1):
        lv = nh.levels[k - 1]
        rows = _active_rows(nh, active, k)
        rows_all.append(tuple(rows))
        if not np.any(lv.W - np.diag(np.diag(lv.W))):
            R = np.diag(np.sqrt(np.diag(lv.W)[rows]))
        else:
            R = cholesky(lv.W[np.ix_(rows, rows)]).R
        levels.append((lv.A[rows], None, R))
    return build_projected_stack(levels, M, rank_tol, R0=R0), tuple(rows_all)


def ewhqp_primal(hierarchy, active, metric=None, rank_tol: float = DEFAULT_RANK_TOL,
                 factors: ProjectedStack = None) -> PrimalSolution:
    """Lexicographic least-squares solution with the active rows as equalities.

    ``x^(k) = x^(k-1) + Abar_k^+ v_k`` with ``v_k = b_k - A_k x^(k-1)``, the
    weighted inverses coming from the COD recursion of the active rows.
    """
    nh = normalize(hierarchy)
    active = set(active)
    for rid in active:
        if not (1 <= rid[0] <= len(nh.levels)) or not 0 <= rid[1] < nh.levels[rid[0] - 1].A.shape[0]:
            raise DimensionMismatch(f"unknown row id {rid}")
    missing = [rid for rid in nh.all_ids() if nh.is_eq(rid) and rid not in active]
    if missing:
        raise ValueError(f"equality rows must be active: {missing}")
    n = nh.n
    M = np.eye(n) if metric is None else np.asarray(metric, dtype=float)
    if factors is None:
        factors, rows_all = _build_stack(nh, active, M, None, rank_tol)
    else:
        rows_all = tuple(tuple(_active_rows(nh, active, k)) for k in range(1, len(nh.levels) + 1))
    x = np.zeros(n)
    vs, ws, xs = [], [], []
    eta = 0
    for k, (f, rows) in enumerate(zip(factors.levels, rows_all), start=1):
        b = nh.levels[k - 1].b[list(rows)]
        v = b - f.A @ x
        if f.rank:
            x = x + f.pinv @ v
            eta = k
        vs.append(v)
        ws.append(b - f.A @ x)
        xs.append(x.copy())
    return PrimalSolution(x, eta, factors, tuple(vs), tuple(ws), tuple(xs), rows_all)


def _dual(nh, factors, rows_all, h, x) -> dict:
    lv = nh.levels[h - 1]
    rows = list(rows_all[h - 1])
    f = factors.levels[h - 1]
    w = lv.b[rows] - f.A @ x
    lam_h = lv.W[np.ix_(rows, rows)] @ w
    out = {(h, i): lam_h[j] for j, i in enumerate(rows)}
    rho = f.A.T @ lam_h
    for k in range(h - 1, 0, -1):
        fk = factors.levels[k - 1]
        lam_k = -(fk.pinv.T @ rho)
        rho = rho + fk.A.T @ lam_k
        for j, i in enumerate(rows_all[k - 1]):
            out[(k, i)] = lam_k[j]
    return out


def ewhqp_dual(hierarchy, active, factors, h: int, wset=None, x=None) -> dict:
    """Multipliers of the level-``h`` problem on the active rows of levels ``<= h``.

    ``factors`` is a :class:`PrimalSolution` (or its projected stack together
    with ``x``).  Returns ``{row id: lambda}`` restricted to ``wset`` when
    given.  Inactive ids in ``wset`` get zero.
    """
    nh = normalize(hierarchy)
    if not 1 <= h <= len(nh.levels):
        raise InvalidLevel(f"level {h} out of range 1..{len(nh.levels)}")
    if isinstance(factors, PrimalSolution):
        sol = factors
        stack, rows_all = sol.factors, sol.rows
        x = sol.partial[h - 1] if x is None else x
    else:
        if x is None:
            raise ValueError("x is required when passing a bare projected stack")
        stack = factors
        rows_all = tuple(tuple(_active_rows(nh, active, k)) for k in range(1, len(nh.levels) + 1))
    lam = _dual(nh, stack, rows_all, h, x)
    if wset is None:
        return lam
    return {rid: lam.get(rid, 0.0) for rid in wset}


@dataclass
class ActiveSearchState:
    active: frozenset
    locked: frozenset
    eta: int
    x: np.ndarray
    lam: dict
    factors: ProjectedStack
    v: tuple
    w: tuple
    rows: tuple
    iterations: int = 0
    objectives: np.ndarray = field(default=None)


def _violated(a, b, x, tol) -> bool:
    return a @ x < b - tol * (1.0 + abs(b))


def active_search(hierarchy, metric=None, warm_start: Iterable = (),
                  rank_tol: float = DEFAULT_RANK_TOL, feas_tol: float = FEAS_TOL,
                  dual_tol: float = DUAL_TOL, max_iter: int = None, trace: list = None) -> ActiveSearchState:
    """Weighted hierarchical active search over equality and inequality rows.

    Levels are optimized in priority order.  For level ``h`` the primal phase
    steps from the current point towards the least-squares optimum of the
    active rows inside the nullspace of the higher-priority active rows,
    stopping at the first inactive inequality that would become violated and
    activating it.  The dual phase releases the lowest-id unlocked inequality
    whose multiplier is negative.  Once a level is done, every inequality it
    needs (positive multiplier) is locked.  ``trace`` (a list) collects
    ``(event, level, row id)`` tuples for debugging.
    """
    nh = normalize(hierarchy)
    n = nh.n
    r = len(nh.levels)
    log = trace.append if trace is not None else (lambda item: None)
    M = np.eye(n) if metric is None else np.asarray(metric, dtype=float)
    R0 = cholesky(M).R
    all_ids = nh.all_ids()
    eq_ids = {rid for rid in all_ids if nh.is_eq(rid)}
    ineq_ids = [rid for rid in all_ids if rid not in eq_ids]
    ineq_pos = {rid: i for i, rid in enumerate(ineq_ids)}
    A_in = np.array([nh.row(rid)[0] for rid in ineq_ids]).reshape(-1, n)
    b_in = np.array([nh.row(rid)[1] for rid in ineq_ids])
    lev_in = np.array([rid[0] for rid in ineq_ids], dtype=int)
    abs_in = np.abs(A_in).sum(axis=1)
    active = set(eq_ids)
    active |= {tuple(rid) for rid in warm_start if tuple(rid) in ineq_pos}
    locked = set()
    cap = max_iter if max_iter is not None else 50 * max(1, len(all_ids))
    x = np.zeros(n)
    lam = {}
    iters = 0
    cache = {}

    def stack_for(act):
        key = frozenset(act)
        if key not in cache:
            cache.clear()
            cache[key] = _build_stack(nh, act, M, R0, rank_tol)
        return cache[key]

    for h in range(1, r + 1):
        lv = nh.levels[h - 1]
        for i in range(lv.A.shape[0]):
            if not lv.is_eq[i] and (h, i) not in active and _violated(lv.A[i], lv.b[i], x, feas_tol):
                active.add((h, i))
                log(("violated", h, (h, i)))
        seen = set()
        while True:
            iters += 1
            if iters > cap:
                raise IterationLimitExceeded(f"no convergence after {cap} iterations")
            stack, rows_all = stack_for(active)
            f = stack.levels[h - 1]
            rows = list(rows_all[h - 1])
            d = f.pinv @ (lv.b[rows] - f.A @ x) if rows else np.zeros(n)
            tau, block = 1.0, None
            if ineq_ids:
                inactive = np.array([rid not in active for rid in ineq_ids])
                slope = A_in @ d
                cand = inactive & (lev_in <= h) & (slope < -1e-14 * (1.0 + abs_in * np.abs(d).max()))
                if cand.any():
                    idx = np.flatnonzero(cand)
                    t = np.maximum(A_in[idx] @ x - b_in[idx], 0.0) / -slope[idx]
                    j = int(np.argmin(t))  # first minimum is the lowest id
                    if t[j] < tau:
                        tau, block = float(t[j]), ineq_ids[idx[j]]
            x = x + tau * d
            if block is not None:
                active.add(block)
                log(("block", h, block))
                continue
            cand = sorted(rid for rid in active if rid[0] <= h and rid not in locked
                          and rid not in eq_ids)
            if not cand:
                break
            lam = _dual(nh, stack, rows_all, h, x)
            scale = 1.0 + max(abs(val) for val in lam.values())
            release = [rid for rid in cand if lam[rid] < -dual_tol * scale]
            if not release:
                break
            active.discard(release[0])
            log(("release", h, release[0]))
            key = frozenset(active)
            if key in seen:
                raise CycleDetected(f"active set revisited at level {h}")
            seen.add(key)
        if any(rid[0] == h for rid in active):
            # a prior row this level leans on must not be released later,
            # since lower levels never re-optimize level h
            stack, rows_all = stack_for(active)
            lam = _dual(nh, stack, rows_all, h, x)
            scale = 1.0 + max(abs(val) for val in lam.values())
            newly = {rid for rid, val in lam.items()
                     if rid[0] <= h and rid not in eq_ids and val > dual_tol * scale}
            for rid in sorted(newly - locked):
                log(("lock", h, rid))
            locked |= newly

    stack, rows_all = stack_for(active)
    sol = ewhqp_primal(nh, active, M, rank_tol, factors=stack)
    return ActiveSearchState(frozenset(active), frozenset(locked), sol.eta, x, lam, stack,
                             sol.v, sol.w, rows_all, iters, level_objectives(nh, x))


# -- brute-force reference -------------------------------------------------

def _svd_solve(A, b, scale):
    """Min-norm least squares plus nullspace basis, absolute rank cut-off."""
    U, sv, Vt = np.linalg.svd(A, full_matrices=True)
    r = int(np.sum(sv > 1e-10 * max(1.0, scale)))
    x = Vt[:r].T @ ((U[:, :r].T @ b) / sv[:r])
    return x, Vt[r:].T


def _eq_ls(C, d, G, g, Rw, n):
    """Affine set of minimizers of ``||Rw (G x - g)||`` subject to ``C x = d``.

    Returns ``(x0, N)`` with ``x0`` the min-norm minimizer and the set equal
    to ``x0 + range(N)``, or ``None`` when ``C x = d`` is inconsistent.
    """
    if C.shape[0]:
        xp, N = _svd_solve(C, d, np.abs(C).max())
        if np.linalg.norm(C @ xp - d) > 1e-9 * (1.0 + np.linalg.norm(d)):
            return None
    else:
        xp = np.zeros(n)
        N = np.eye(n)
    if G.shape[0] and N.shape[1]:
        RG = Rw @ G
        z, N2 = _svd_solve(RG @ N, Rw @ g - RG @ xp, np.abs(RG).max())
        xp = xp + N @ z
        N = N @ N2
    return xp, N


def _find_feasible(x0, N, K, k0, tol):
    """Point of ``x0 + range(N)`` with ``K x >= k0`` (within ``tol``), or None."""
    slack = tol * (1.0 + np.abs(k0))
    if not K.shape[0] or np.all(K @ x0 >= k0 - slack):
        return x0
    if not N.shape[1]:
        return None
    KN = K @ N
    res = linprog(np.zeros(N.shape[1]), A_ub=-KN, b_ub=K @ x0 - k0 + 0.5 * slack,
                  bounds=[(None, None)] * N.shape[1], method="highs")
    if res.status != 0:
        return None
    x = x0 + N @ res.x
    return x if np.all(K @ x >= k0 - slack) else None


def oracle_lex_solve(hierarchy, tol: float = 1e-9):
    """Lexicographic optimum by enumerating inequality activity patterns.

    Each level is solved as a small QP over all patterns: previous-level
    inequalities active or not, and each inequality of the level either
    satisfied, pinned at its bound, or violated and penalized.  Patterns are
    visited in order of their least-squares objective and the first one whose
    optimal set meets all sign requirements gives the level optimum.
    Returns ``(objectives, x)``.
    """
    nh = normalize(hierarchy)
    n = nh.n
    total = sum(int((~lv.is_eq).sum()) for lv in nh.levels)
    if total > ENUMERATION_BOUND:
        raise EnumerationBoundExceeded(f"{total} inequality rows > {ENUMERATION_BOUND}")
    C_eq = np.zeros((0, n))
    d_eq = np.zeros(0)
    C_in = np.zeros((0, n))
    d_in = np.zeros(0)
    x_best = np.zeros(n)
    objs = []
    for lv in nh.levels:
        E = np.flatnonzero(lv.is_eq)
        I = np.flatnonzero(~lv.is_eq)
        cands = []
        for prior in itertools.product((False, True), repeat=C_in.shape[0]):
            S = np.array(prior, dtype=bool)
            for states in itertools.product((0, 1, 2), repeat=I.size):
                st = np.array(states, dtype=int)
                pinned = I[st == 1]
                pen = I[st == 2]
                C = np.vstack([C_eq, C_in[S], lv.A[pinned]])
                d = np.concatenate([d_eq, d_in[S], lv.b[pinned]])
                obj_rows = np.concatenate([E, pen]).astype(int)
                Rw = cholesky(lv.W[np.ix_(obj_rows, obj_rows)]).R
                sol = _eq_ls(C, d, lv.A[obj_rows], lv.b[obj_rows], Rw, n)
                if sol is None:
                    continue
                w = np.zeros(lv.A.shape[0])
                w[obj_rows] = lv.b[obj_rows] - lv.A[obj_rows] @ sol[0]
                cands.append((0.5 * w @ lv.W @ w, sol, st))
        cands.sort(key=lambda c: c[0])
        best = None
        for obj, (x0, N), st in cands:
            free, pen = I[st == 0], I[st == 2]
            # sign requirements: prior >= d, free rows >= b, penalized rows <= b
            K = np.vstack([C_in, lv.A[free], -lv.A[pen]])
            k0 = np.concatenate([d_in, lv.b[free], -lv.b[pen]])
            x = _find_feasible(x0, N, K, k0, tol)
            if x is not None:
                best = (obj, x)
                break
        if best is None:
            raise RuntimeError("no feasible activity pattern found")
        x_best = best[1]
        w = lv.b - lv.A @ x_best
        w = np.where(lv.is_eq, w, np.maximum(w, 0.0))
        objs.append(0.5 * w @ lv.W @ w)
        vals = lv.A @ x_best
        viol = (~lv.is_eq) & (vals < lv.b - tol * (1 + np.abs(lv.b)))
        fixed = lv.is_eq | viol
        C_eq = np.vstack([C_eq, lv.A[fixed]])
        d_eq = np.concatenate([d_eq, vals[fixed]])
        C_in = np.vstack([C_in, lv.A[~fixed]])
        d_in = np.concatenate([d_in, lv.b[~fixed]])
    return np.array(objs), x_best


# -- problem files -----------------------------------------------------------

def parse_problem(text: str) -> Hierarchy:
    """Parse the line-oriented problem format (see README)."""
    n = None
    levels = []
    cur = None

    def finish(lineno):
        nonlocal cur
        if cur is None:
            return
        m = len(cur["rows"])
        if m == 0:
            raise ParseError(lineno, "level without rows")
        A = np.array([r[1] for r in cur["rows"]])
        lo = np.array([r[2] for r in cur["rows"]])
        hi = np.array([r[3] for r in cur["rows"]])
        sense = [r[0] for r in cur["rows"]]
        W = cur["W"]
        if W is None:
            W = np.eye(m)
        elif W[0] == "diag":
            if len(W[1]) != m:
                raise ParseError(cur["wline"], f"expected {m} diagonal weights")
            W = np.diag(W[1])
        else:
            if len(W[1]) != m * m:
                raise ParseError(cur["wline"], f"expected {m * m} weight entries")
            W = np.array(W[1]).reshape(m, m)
        blocks = cur["blocks"] or (m,)
        try:
            levels.append(TaskLevel(A, lo, sense, W, blocks, hi if "range" in sense else None))
        except ValueError as exc:
            raise ParseError(cur["line"], str(exc)) from None
        cur = None

    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            finish(lineno)
            continue
        tok = line.split()
        try:
            if tok[0] == "n":
                n = int(tok[1])
            elif tok[0] == "level":
                finish(lineno)
                cur = {"rows": [], "W": None, "blocks": None, "line": lineno, "wline": lineno}
            elif cur is None:
                raise ParseError(lineno, f"'{tok[0]}' outside a level block")
            elif tok[0] == "weight_blocks":
                cur["blocks"] = tuple(int(t) for t in tok[1:])
            elif tok[0] == "W":
                cur["wline"] = lineno
                if tok[1] == "diag":
                    cur["W"] = ("diag", [float(t) for t in tok[2:]])
                else:
                    cur["W"] = ("full", [float(t) for t in tok[1:]])
            elif tok[0] == "row":
                if n is None:
                    raise ParseError(lineno, "row before 'n'")
                sense = tok[1]
                if sense not in SENSES:
                    raise ParseError(lineno, f"unknown sense '{sense}'")
                vals = [float(t) for t in tok[2:]]
                need = n + (2 if sense == "range" else 1)
                if len(vals) != need:
                    raise ParseError(lineno, f"expected {need} numbers, got {len(vals)}")
                hi = vals[n + 1] if sense == "range" else np.nan
                cur["rows"].append((sense, vals[:n], vals[n], hi))
            else:
                raise ParseError(lineno, f"unknown keyword '{tok[0]}'")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(lineno, str(exc)) from None
    finish(lineno + 1)
    if n is None:
        raise ParseError(lineno, "missing 'n' header")
    if not levels:
        raise ParseError(lineno, "no levels")
    return Hierarchy(levels, n)


def format_problem(h: Hierarchy) -> str:
    out = [f"n {h.n}", ""]
    for lv in h.levels:
        out.append("level")
        out.append("weight_blocks " + " ".join(str(b) for b in lv.blocks))
        out.append("W " + " ".join(repr(float(v)) for v in lv.W.ravel()))
        for i, s in enumerate(lv.sense):
            nums = [repr(float(v)) for v in lv.A[i]] + [repr(float(lv.b[i]))]
            if s == "range":
                nums.append(repr(float(lv.b_upper[i])))
            out.append(f"row {s} " + " ".join(nums))
        out.append("")
    return "\n".join(out)
