"""Random instance generators and self-check suites shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

import scipy.linalg as sla

from .controller import split_gamma
from .decomp import cholesky, cod_rate, compact_cod, sorted_qr
from .robot import (RobotState, dynamics, forward_kinematics, gravity, load_chain, mass_and_bias,
                    mass_matrix, potential_energy, task_kinematics, tcp_jacobians)
from .sim import Q_HOME, State, default_scenario, integrate, kinetic_energy, make_controller
from .whqp import (Hierarchy, TaskLevel, active_search, ewhqp_dual, ewhqp_primal, level_objectives,
                   normalize, oracle_lex_solve)
from .wmpi import WeightPair, build_projected_stack, projected_level, projector, wmpi


def random_spd(rng: np.random.Generator, n: int, cond: float = 1e3) -> np.ndarray:
    """SPD matrix with eigenvalues log-spread over ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * ev) @ Q.T


def random_matrix(rng: np.random.Generator, m: int, n: int, rank: int = None) -> np.ndarray:
    """Gaussian ``m x n`` matrix of the given rank (full rank by default)."""
    rank = min(m, n) if rank is None else rank
    return rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))


def random_hierarchy(rng: np.random.Generator, n: int = None, levels: int = None,
                     max_ineq: int = 6, weighted: bool = True) -> Hierarchy:
    """Mixed equality/inequality hierarchy small enough for brute force.

    Equality rows share one coupled SPD weight block per level, inequality
    rows get their own 1x1 blocks.  Some levels are made rank deficient or
    conflicting on purpose.
    """
    n = int(rng.integers(2, 7)) if n is None else n
    levels = int(rng.integers(1, 5)) if levels is None else levels
    budget = max_ineq
    out = []
    for _ in range(levels):
        n_eq = int(rng.integers(0, 3))
        n_in = int(rng.integers(0, min(3, budget) + 1))
        senses = list(rng.choice(["ge", "le", "range"], size=n_in, p=[0.45, 0.35, 0.2]))
        # a range row normalizes to two inequalities
        while sum(2 if s == "range" else 1 for s in senses) > budget:
            senses.pop()
        budget -= sum(2 if s == "range" else 1 for s in senses)
        if n_eq + len(senses) == 0:
            n_eq = 1
        m = n_eq + len(senses)
        A = rng.standard_normal((m, n))
        if m > 1 and rng.random() < 0.25:
            A[-1] = A[0] * rng.uniform(-2, 2)  # duplicated direction
        b = rng.standard_normal(m)
        hi = b + rng.uniform(0.1, 2.0, m)
        W = np.zeros((m, m))
        if n_eq:
            W[:n_eq, :n_eq] = random_spd(rng, n_eq, 1e2) if weighted else np.eye(n_eq)
        for i in range(n_eq, m):
            W[i, i] = rng.uniform(0.2, 5.0) if weighted else 1.0
        blocks = ((n_eq,) if n_eq else ()) + (1,) * len(senses)
        out.append(TaskLevel(A, b, ["eq"] * n_eq + senses, W, blocks,
                             hi if "range" in senses else None))
    return Hierarchy(out, n)


def random_stack_levels(rng: np.random.Generator, n: int, levels: int):
    """List of ``(A_k, W_k)`` with assorted row counts and ranks."""
    out = []
    for _ in range(levels):
        m = int(rng.integers(1, n + 1))
        rank = int(rng.integers(1, m + 1))
        out.append((random_matrix(rng, m, n, rank), random_spd(rng, m, 1e2)))
    return out


@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: list = field(default_factory=list)
    worst: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, value: float, tol: float, label: str) -> None:
        self.checked += 1
        self.worst = max(self.worst, float(value))
        if not value <= tol:
            self.failures.append(f"{label}: {value:.3e} > {tol:.1e}")

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.checked} checks, worst {self.worst:.2e}"


def _rel(res: float, scale: float) -> float:
    return res / scale if scale > 0 else res


def _fro(X) -> float:
    return float(np.linalg.norm(X))


# -- decomp ------------------------------------------------------------------

def check_factorizations(rng, count: int) -> list:
    """Cholesky, sorted QR and compact COD reconstruction on rank-deficient fuzz."""
    chol = SuiteResult("cholesky reconstruction")
    qr = SuiteResult("sorted QR reconstruction and ordering")
    cod = SuiteResult("compact COD reconstruction")
    orth = SuiteResult("compact COD orthonormality")
    for i in range(count):
        n = int(rng.integers(1, 9))
        W = random_spd(rng, n, 1e4)
        R = cholesky(W).R
        chol.record(_rel(_fro(R.T @ R - W), _fro(W)), 1e-12, f"instance {i}")
        m = int(rng.integers(0, 10))
        n = int(rng.integers(0, 10))
        rank = int(rng.integers(0, min(m, n) + 1))
        A = random_matrix(rng, m, n, rank) if m and n else np.zeros((m, n))
        f = sorted_qr(A)
        d = np.abs(np.diag(f.R))
        err = _rel(_fro(f.Q @ f.R - A[:, f.perm]), _fro(A)) + _fro(f.Q.T @ f.Q - np.eye(m))
        err += float(np.maximum(np.diff(d), 0.0).max(initial=0.0))
        qr.record(err, 1e-12, f"instance {i}")
        c = compact_cod(A)
        cod.record(_rel(_fro(c.U @ c.L @ c.Y.T - A), _fro(A)), 1e-11, f"instance {i}")
        if c.rank != rank:
            cod.failures.append(f"instance {i}: rank {c.rank} != {rank}")
        basis = np.hstack([c.Y, c.Ztilde])
        orth.record(max(_fro(c.U.T @ c.U - np.eye(c.rank)), _fro(basis.T @ basis - np.eye(n))),
                    1e-12, f"instance {i}")
    return [chol, qr, cod, orth]


def _cod_path(rng):
    m = int(rng.integers(1, 8))
    n = int(rng.integers(1, 8))
    rank = int(rng.integers(1, min(m, n) + 1))
    return random_matrix(rng, m, n, rank), m, n, rank


def check_cod_rotation_rates(rng, count: int) -> list:
    """Product rule and skewness of the COD rates along ``G(t) A0 H(t)``."""
    prod = SuiteResult("COD rate product rule (rotation families)")
    skew = SuiteResult("COD rate skew/gauge identities")
    for i in range(count):
        A0, m, n, _ = _cod_path(rng)
        Sl = rng.standard_normal((m, m))
        Sl = Sl - Sl.T
        Sr = rng.standard_normal((n, n))
        Sr = Sr - Sr.T
        t = rng.uniform(0, 1)
        G, H = sla.expm(t * Sl), sla.expm(t * Sr)
        A = G @ A0 @ H
        dA = Sl @ A + A @ Sr
        c = compact_cod(A)
        r = cod_rate(A, dA, c)
        rec = r.dU @ c.L @ c.Y.T + c.U @ r.dL @ c.Y.T + c.U @ c.L @ r.dY.T
        prod.record(_rel(_fro(rec - dA), _fro(dA)), 1e-8, f"instance {i}")
        res = max(_fro(c.U.T @ r.dU + r.dU.T @ c.U), _fro(c.Y.T @ r.dY + r.dY.T @ c.Y),
                  _fro(r.dY.T @ c.Ztilde + c.Y.T @ r.dZtilde), _fro(c.Ztilde.T @ r.dZtilde))
        skew.record(_rel(res, max(1.0, _fro(r.dU), _fro(r.dY))), 1e-10, f"instance {i}")
    return [prod, skew]


def _align(Z, Zref):
    """Rotate the columns of ``Z`` (same span) onto ``Zref`` by orthogonal Procrustes."""
    if not Z.shape[1]:
        return Z
    U, _, Vt = np.linalg.svd(Z.T @ Zref)
    return Z @ (U @ Vt)


def check_cod_fd_rates(rng, count: int, h: float = 1e-5) -> list:
    """COD rates against central differences along ``A0 + t A1``."""
    res = SuiteResult("COD rate vs finite differences")
    for i in range(count):
        A0, m, n, rank = _cod_path(rng)
        # stay on the rank-r manifold by moving the factors of A0 = B C
        B = rng.standard_normal((m, rank))
        Cf = rng.standard_normal((rank, n))
        dB = rng.standard_normal((m, rank))
        dC = rng.standard_normal((rank, n))

        def path(s):
            return (B + s * dB) @ (Cf + s * dC)

        A = path(0.0)
        dA = dB @ Cf + B @ dC
        c = compact_cod(A)
        r = cod_rate(A, dA, c)
        cp = compact_cod(path(h), perm=c.perm)
        cm = compact_cod(path(-h), perm=c.perm)
        if cp.rank != c.rank or cm.rank != c.rank:
            res.failures.append(f"instance {i}: rank changed along the path")
            continue
        errs = [_fro((cp.U - cm.U) / (2 * h) - r.dU), _fro((cp.L - cm.L) / (2 * h) - r.dL),
                _fro((cp.Y - cm.Y) / (2 * h) - r.dY),
                _fro((_align(cp.Ztilde, c.Ztilde) - _align(cm.Ztilde, c.Ztilde)) / (2 * h) - r.dZtilde)]
        scale = max(1.0, _fro(r.dU), _fro(r.dL), _fro(r.dY))
        res.record(max(errs) / scale, 1e-5, f"instance {i}")
    return [res]


# -- wmpi --------------------------------------------------------------------

def penrose_residuals(A, X, W1, W0) -> float:
    """Largest relative residual of the four weighted Penrose conditions."""
    nA, nX = _fro(A), _fro(X)
    AX, XA = W1 @ A @ X, W0 @ X @ A
    return max(_rel(_fro(A @ X @ A - A), nA),
               _rel(_fro(X @ A @ X - X), nX),
               _rel(_fro(AX - AX.T), _fro(W1) * nA * nX),
               _rel(_fro(XA - XA.T), _fro(W0) * nA * nX))


def check_wmpi(rng, count: int) -> list:
    res = SuiteResult("weighted Penrose conditions")
    for i in range(count):
        m = int(rng.integers(1, 13))
        n = int(rng.integers(1, 13))
        rank = int(rng.integers(0, min(m, n) + 1))
        A = random_matrix(rng, m, n, rank) if rank else np.zeros((m, n))
        W1, W0 = random_spd(rng, m, 1e2), random_spd(rng, n, 1e2)
        X = wmpi(A, WeightPair(W1, W0))
        res.record(penrose_residuals(A, X, W1, W0), 1e-9, f"instance {i}")
    return [res]


def check_projected_stack(rng, count: int) -> list:
    """Projector identities, annihilation, block triangularity and stacking."""
    idem = SuiteResult("projector idempotence")
    msym = SuiteResult("projector metric symmetry")
    nest = SuiteResult("projector nesting")
    ann = SuiteResult("annihilation of higher levels")
    tri = SuiteResult("block lower-triangular A Abar^+")
    stk = SuiteResult("stacked inverse Penrose conditions")
    for i in range(count):
        n = int(rng.integers(2, 9))
        r = int(rng.integers(3, 5))
        levels = random_stack_levels(rng, n, r)
        M = random_spd(rng, n, 1e2)
        stack = build_projected_stack(levels, M)
        P = [projector(stack, k) for k in range(r + 1)]
        nM = _fro(M)
        for k in range(r + 1):
            idem.record(_fro(P[k] @ P[k] - P[k]), 1e-9, f"instance {i} level {k}")
            msym.record(_rel(_fro(P[k].T @ M - M @ P[k]), nM), 1e-9, f"instance {i} level {k}")
            for j in range(k):
                nest.record(max(_fro(P[k] @ P[j] - P[k]), _fro(P[j] @ P[k] - P[k])), 1e-9,
                            f"instance {i} levels {j},{k}")
        A = np.vstack([lv[0] for lv in levels])
        X = stack.pinv_stack()
        AX = A @ X
        edges = np.cumsum([0] + [lv[0].shape[0] for lv in levels])
        for k in range(r):
            for j in range(k):
                blk = _fro(levels[j][0] @ stack.levels[k].pinv)
                ann.record(_rel(blk, _fro(levels[j][0])), 1e-9, f"instance {i} levels {j + 1},{k + 1}")
                upper = AX[edges[j]:edges[j + 1], edges[k]:edges[k + 1]]
                tri.record(_rel(_fro(upper), _fro(levels[j][0])), 1e-9, f"instance {i}")
        Abar = np.vstack([projected_level(stack, k) for k in range(1, r + 1)])
        W = sla.block_diag(*[lv[1] for lv in levels])
        stk.record(penrose_residuals(Abar, X, W, M), 1e-9, f"instance {i}")
    return [idem, msym, nest, ann, tri, stk]


# -- whqp --------------------------------------------------------------------

def slack_vector(hierarchy, x) -> np.ndarray:
    """Equality residuals and inequality violations of all normalized rows.

    These are unique at a lexicographic optimum even when ``x`` is not.
    """
    nh = normalize(hierarchy)
    out = []
    for lv in nh.levels:
        w = lv.b - lv.A @ x
        out.append(np.where(lv.is_eq, w, np.maximum(w, 0.0)))
    return np.concatenate(out) if out else np.zeros(0)


def _objective_gap(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))


def check_whqp_oracle(rng, count: int, weighted: bool = True, tol: float = 1e-8) -> list:
    """Active search against the enumeration oracle."""
    tag = "weighted" if weighted else "identity-weight"
    obj = SuiteResult(f"{tag} objectives vs oracle")
    slk = SuiteResult(f"{tag} slack vectors vs oracle")
    for i in range(count):
        h = random_hierarchy(rng, weighted=weighted)
        st = active_search(h)
        ref, xo = oracle_lex_solve(h)
        obj.record(_objective_gap(level_objectives(h, st.x), ref), tol, f"instance {i}")
        slk.record(float(np.abs(slack_vector(h, st.x) - slack_vector(h, xo)).max(initial=0.0)),
                   tol, f"instance {i}")
    return [obj, slk]


def _zero_slack_levels(h, x, tol=1e-10):
    return [k for k, o in enumerate(level_objectives(h, x)) if o <= tol]


def check_whqp_invariance(rng, count: int) -> list:
    """Within-level weight scaling, priority respect and dual stationarity."""
    scal = SuiteResult("within-level scaling keeps A_k x")
    prio = SuiteResult("extra lowest level keeps higher slacks")
    stat = SuiteResult("dual stationarity")
    metric = SuiteResult("metric independence of objectives")
    for i in range(count):
        h = random_hierarchy(rng)
        st = active_search(h)
        scaled = Hierarchy([replace(lv, W=lv.W * rng.uniform(0.1, 10.0)) for lv in h.levels], h.n)
        st2 = active_search(scaled)
        zero = _zero_slack_levels(h, st.x)
        err = max((float(np.abs(h.levels[k].A @ (st.x - st2.x)).max(initial=0.0)) for k in zero),
                  default=0.0)
        scal.record(err, 1e-9, f"instance {i}")

        extra = TaskLevel.equality(rng.standard_normal((2, h.n)), rng.standard_normal(2))
        longer = Hierarchy(h.levels + [extra], h.n)
        st3 = active_search(longer)
        nh = normalize(h)
        sizes = np.cumsum([0] + [lv.A.shape[0] for lv in nh.levels])
        s1, s3 = slack_vector(h, st.x), slack_vector(longer, st3.x)[:sizes[-1]]
        err = max((float(np.abs(s1[sizes[k]:sizes[k + 1]] - s3[sizes[k]:sizes[k + 1]]).max(initial=0.0))
                   for k in zero), default=0.0)
        prio.record(err, 1e-9, f"instance {i}")

        sol = ewhqp_primal(h, st.active)
        for lvl in range(1, len(nh.levels) + 1):
            lam = ewhqp_dual(h, st.active, sol, lvl)
            g = np.zeros(h.n)
            for (k, r), val in lam.items():
                g += nh.levels[k - 1].A[r] * val
            scale = max(1.0, max((abs(v) for v in lam.values()), default=0.0))
            stat.record(_fro(g) / scale, 1e-9, f"instance {i} level {lvl}")

        M = random_spd(rng, h.n, 1e2)
        obj = level_objectives(h, active_search(h, M).x)
        metric.record(_objective_gap(obj, level_objectives(h, st.x)), 1e-8, f"instance {i}")
    return [scal, prio, stat, metric]


# -- robot -------------------------------------------------------------------

def random_state(rng, chain, spread: float = 0.4, speed: float = 0.8):
    lo, hi = chain.limits().T
    q = np.clip(Q_HOME + rng.normal(0.0, spread, chain.n), lo, hi)
    return q, rng.normal(0.0, speed, chain.n)


def _vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def check_robot(rng, count: int, chain=None, h: float = 1e-6) -> list:
    chain = load_chain() if chain is None else chain
    spd = SuiteResult("mass matrix symmetric positive definite")
    pas = SuiteResult("passivity Mdot - C - C^T")
    mdot = SuiteResult("Mdot vs finite differences")
    bias = SuiteResult("C dq vs recursive bias")
    grav = SuiteResult("gravity vs potential gradient")
    jac = SuiteResult("TCP Jacobians vs finite differences")
    djac = SuiteResult("Jacobian rates vs finite differences")
    for i in range(count):
        q, dq = random_state(rng, chain)
        dyn = dynamics(chain, q, dq)
        M = dyn.M
        ok = _fro(M - M.T) < 1e-12 * _fro(M) and np.linalg.eigvalsh(M).min() > 0
        spd.record(0.0 if ok else 1.0, 0.0, f"state {i}")
        pas.record(_fro(dyn.Mdot - dyn.C - dyn.C.T), 1e-10, f"state {i}")
        fd = (mass_matrix(chain, q + h * dq) - mass_matrix(chain, q - h * dq)) / (2 * h)
        mdot.record(_rel(_fro(fd - dyn.Mdot), max(1.0, _fro(dyn.Mdot))), 1e-6, f"state {i}")
        _, hb, _ = mass_and_bias(chain, q, dq)
        bias.record(_rel(_fro(hb - dyn.C @ dq), max(1.0, _fro(hb))), 1e-10, f"state {i}")
        gfd = np.array([(potential_energy(chain, q + h * e) - potential_energy(chain, q - h * e)) / (2 * h)
                        for e in np.eye(chain.n)])
        grav.record(_fro(gfd - dyn.g), 1e-6, f"state {i}")
        Jv, Jw, dJv, dJw = dyn.tcp_jac
        Tp, Tm = forward_kinematics(chain, q + h * dq).tcp, forward_kinematics(chain, q - h * dq).tcp
        v = (Tp[:3, 3] - Tm[:3, 3]) / (2 * h)
        w = _vee((Tp[:3, :3] - Tm[:3, :3]) / (2 * h) @ dyn.kin.tcp[:3, :3].T)
        jac.record(_rel(_fro(np.concatenate([v - Jv @ dq, w - Jw @ dq])), max(1.0, _fro(dq))),
                   1e-6, f"state {i}")
        Jp = np.vstack(tcp_jacobians(chain, q + h * dq, dq)[:2])
        Jm = np.vstack(tcp_jacobians(chain, q - h * dq, dq)[:2])
        dJ = np.vstack([dJv, dJw])
        djac.record(_rel(_fro((Jp - Jm) / (2 * h) - dJ), max(1.0, _fro(dJ))), 1e-6, f"state {i}")
    return [spd, pas, mdot, bias, grav, jac, djac]


def check_energy(rng, count: int, chain=None, duration: float = 1.0, dt: float = 1e-3) -> list:
    """Kinetic energy under gravity compensation, RK4."""
    chain = load_chain() if chain is None else chain
    res = SuiteResult("kinetic energy drift under gravity compensation [J]")
    for i in range(count):
        q, dq = random_state(rng, chain, speed=0.5)
        st = State(q, dq)
        ke0 = kinetic_energy(mass_matrix(chain, q), dq)
        comp = lambda t, qq, dd: gravity(chain, qq)
        t = 0.0
        for _ in range(int(round(duration / dt))):
            st = integrate(chain, st, comp, t, dt, "rk4")
            t += dt
        res.record(abs(kinetic_energy(mass_matrix(chain, st.q), st.dq) - ke0), 1e-6, f"run {i}")
    return [res]


# -- controller --------------------------------------------------------------

def _finv_at(ctl, t, q, active):
    """``F^-1`` of a fixed active set at configuration ``q``."""
    dyn = dynamics(ctl.chain, q, np.zeros_like(q))
    state = RobotState(q, np.zeros_like(q))
    data = [task_kinematics(ctl.chain, s, state, t, dyn.kin, dyn.tcp_jac) for s in ctl.tasks]
    nh = normalize(Hierarchy([TaskLevel(d.J, d.b_kin, d.sense, d.W, d.blocks) for d in data], ctl.chain.n))
    stack = ewhqp_primal(nh, active, dyn.M).factors
    return np.hstack([f.Zprev @ f.cod.Y for f in stack.levels if f.rank])


def check_controller(rng, count: int, case: str = "equal", h: float = 1e-6) -> list:
    sc = default_scenario(case)
    chain = sc.chain
    inv = SuiteResult("F F^-1 = E")
    iner = SuiteResult("F^-T M F^-1 = E")
    skw = SuiteResult("Gamma, Gamma_d, Gamma_s skew-symmetric")
    mom = SuiteResult("task momentum identity")
    vel = SuiteResult("first block maps to task velocity")
    dfi = SuiteResult("dF^-1 vs finite differences")
    for i in range(count):
        q, dq = random_state(rng, chain, spread=0.2)
        t = float(rng.uniform(0.0, sc.duration))
        ctl = make_controller(sc)
        out = ctl.compute(t, q, dq)
        tr, M = out.transform, out.dyn.M
        n = chain.n
        inv.record(_fro(tr.F @ tr.Finv - np.eye(n)), 1e-9, f"state {i}")
        iner.record(tr.inertia_residual(M), 1e-9, f"state {i}")
        Gd, Gs = split_gamma(tr.Gamma, tr.blocks)
        skw.record(max(_fro(G + G.T) for G in (tr.Gamma, Gd, Gs)), 1e-8, f"state {i}")
        err = 0.0
        for (k, a, b) in tr.blocks:
            lt = tr.levels[k - 1]
            P = lt.Zprev @ lt.Zprev.T @ M
            pred = sla.solve_triangular(lt.cod.L, lt.cod.U.T @ lt.R @ lt.A @ P @ dq, lower=True)
            err = max(err, _fro(pred - tr.xi[a:b]) / max(1.0, _fro(tr.xi)))
        mom.record(err, 1e-9, f"state {i}")
        k, a, b = tr.blocks[0]
        lt = tr.levels[k - 1]
        if lt.rank == lt.A.shape[0]:
            vel.record(_fro(lt.cod.U @ lt.cod.L @ tr.xi[a:b] - lt.R @ lt.A @ dq) / max(1.0, _fro(dq)),
                       1e-9, f"state {i}")
        Fp = _finv_at(ctl, t, q + h * dq, out.search.active)
        Fm = _finv_at(ctl, t, q - h * dq, out.search.active)
        fd = (Fp - Fm) / (2 * h)
        dfi.record(_fro(fd - tr.dFinv) / max(1e-12, _fro(tr.dFinv)), 1e-4, f"state {i}")
    return [inv, iner, skw, mom, vel, dfi]


SUITES = {
    "decomp": (check_factorizations, check_cod_rotation_rates, check_cod_fd_rates),
    "wmpi": (check_wmpi, check_projected_stack),
    "whqp": (check_whqp_oracle, check_whqp_invariance),
    "robot": (check_robot,),
    "controller": (check_controller,),
}


class UnknownSuite(KeyError):
    pass


def run_suite(name: str, seed: int = 0, count: int = 100) -> list:
    """Run one named suite (or ``all``) and return its results in order."""
    names = list(SUITES) if name == "all" else [name]
    if any(n not in SUITES for n in names):
        raise UnknownSuite(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    out = []
    for n in names:
        for fn in SUITES[n]:
            out.extend(fn(np.random.default_rng(seed), count))
    return out
