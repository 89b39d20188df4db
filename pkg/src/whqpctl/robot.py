"""Serial-chain rigid-body model and the task families used by the controller.

Kinematics follow the URDF convention: joint ``i`` has a fixed origin
transform relative to the previous joint frame, then moves about (or along)
its local axis.  Link ``i`` is rigidly attached to the frame of joint ``i``.

All derivatives are analytic.  Columns of the geometric Jacobian of a point
``c`` on link ``i`` are ``z_j x (c - p_j)`` (revolute) or ``z_j`` (prismatic);
their partials with respect to ``q_k`` are again cross products of axes with
Jacobian columns, which gives ``dM/dq`` and the Christoffel-based Coriolis
matrix with ``dM/dt = C + C^T`` up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
import numpy as np
import yaml
from numba import njit
from scipy.spatial.transform import Rotation

GRAVITY = np.array([0.0, 0.0, -9.81])

ORIENTATION = "OrientationTrack"
BOX = "PositionBox"
TRACK_REGULATE = "PositionTrackRegulate"
POSTURE = "JointPosture"
ALIGNED = "AlignedPosition"
KINDS = (ORIENTATION, BOX, TRACK_REGULATE, POSTURE, ALIGNED)
TASK_DIMS = {ORIENTATION: 3, BOX: 4, TRACK_REGULATE: 6, ALIGNED: 2}


class UnknownKind(ValueError):
    pass


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    T[:3, 3] = xyz
    return T


@dataclass(frozen=True)
class Joint:
    kind: str  # "revolute" or "prismatic"
    origin: np.ndarray  # 4x4, relative to the previous joint frame
    axis: np.ndarray  # unit vector in the joint frame
    limits: tuple = (-np.inf, np.inf)


@dataclass(frozen=True)
class Link:
    mass: float
    com: np.ndarray  # in the link frame
    inertia: np.ndarray  # about the COM, link frame


@dataclass
class SerialChain:
    joints: list
    links: list
    gravity_vector: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "chain"

    def __post_init__(self):
        if len(self.joints) < 1 or len(self.joints) != len(self.links):
            raise ValueError("need n >= 1 joints and one link per joint")
        for i, (j, lk) in enumerate(zip(self.joints, self.links)):
            if j.kind not in ("revolute", "prismatic"):
                raise ValueError(f"joint {i}: unknown type {j.kind}")
            if not lk.mass > 0:
                raise ValueError(f"link {i}: mass must be positive")
            I = lk.inertia
            if np.abs(I - I.T).max() > 1e-12 or np.linalg.eigvalsh(I).min() < 0.0:
                # point masses (zero inertia) are accepted
                raise ValueError(f"link {i}: inertia must be symmetric positive semidefinite")
        self.gravity_vector = np.asarray(self.gravity_vector, dtype=float)
        self.revolute = np.array([j.kind == "revolute" for j in self.joints])

    @property
    def n(self) -> int:
        return len(self.joints)

    def limits(self) -> np.ndarray:
        return np.array([j.limits for j in self.joints], dtype=float)

    def within_limits(self, q) -> bool:
        lim = self.limits()
        return bool(np.all(q >= lim[:, 0]) and np.all(q <= lim[:, 1]))


@dataclass(frozen=True)
class RobotState:
    q: np.ndarray
    dq: np.ndarray


def _inertia(a) -> np.ndarray:
    ixx, ixy, ixz, iyy, iyz, izz = a
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]], dtype=float)


def chain_from_dict(d: dict) -> SerialChain:
    joints = [Joint(j.get("type", "revolute"), transform(j.get("xyz", (0, 0, 0)), j.get("rpy", (0, 0, 0))),
                    np.asarray(j.get("axis", (0, 0, 1)), dtype=float) / np.linalg.norm(j.get("axis", (0, 0, 1))),
                    tuple(j.get("limits", (-np.inf, np.inf))))
              for j in d["joints"]]
    links = [Link(float(lk["mass"]), np.asarray(lk["com"], dtype=float), _inertia(lk["inertia"]))
             for lk in d["links"]]
    tool = d.get("tool", {})
    return SerialChain(joints, links, np.asarray(d.get("gravity", GRAVITY), dtype=float),
                       transform(tool.get("xyz", (0, 0, 0)), tool.get("rpy", (0, 0, 0))),
                       d.get("name", "chain"))


def load_chain(path=None) -> SerialChain:
    """Load a chain description; the bundled Panda-like arm by default."""
    if path is None:
        text = resources.files("whqpctl").joinpath("data/panda.yaml").read_text()
    else:
        text = Path(path).read_text()
    return chain_from_dict(yaml.safe_load(text))


# -- kinematics and dynamics ---------------------------------------------------
#
# The rigid-body sums run in one compiled kernel.  For a point c on link i the
# Jacobian columns are z_j x (c - p_j) (revolute) or z_j (prismatic), and
#   d(col j)/dq_k = z_k x col_j   for k < j, k revolute
#                 = z_j x col_k   for k >= j, j revolute
# which gives the inertia partials.  Along dq the rate of column j reduces to
#   w_{j-1} x col_j + z_j x sum_{k>=j} col_k dq_k.

@dataclass(frozen=True)
class Kinematics:
    frames: np.ndarray  # (n, 4, 4) joint frames after the joint motion
    z: np.ndarray  # (n, 3) joint axes in the world frame
    p: np.ndarray  # (n, 3) joint origins in the world frame
    tcp: np.ndarray  # 4x4 tool frame


@njit(cache=True)
def _cross3(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _kernel(origins, axes, rev, tool, mass, com, inertia, gvec, q, dq, with_partials):
    n = q.shape[0]
    frames = np.empty((n, 4, 4))
    z = np.empty((n, 3))
    p = np.empty((n, 3))
    T = np.eye(4)
    for i in range(n):
        T = T @ origins[i]
        a = axes[i]
        z[i] = np.ascontiguousarray(T[:3, :3]) @ a
        p[i] = T[:3, 3]
        mot = np.eye(4)
        if rev[i]:
            K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
            mot[:3, :3] = np.eye(3) + np.sin(q[i]) * K + (1.0 - np.cos(q[i])) * (K @ K)
        else:
            mot[:3, 3] = a * q[i]
        T = T @ mot
        frames[i] = T
    tcp = T @ tool

    # angular velocity of the frame before each joint
    w_prev = np.zeros((n, 3))
    for j in range(1, n):
        w_prev[j] = w_prev[j - 1]
        if rev[j - 1]:
            w_prev[j] += z[j - 1] * dq[j - 1]

    M = np.zeros((n, n))
    g = np.zeros(n)
    h = np.zeros(n)
    dM = np.zeros((n, n, n)) if with_partials else np.zeros((0, 0, 0))
    Jv = np.zeros((n, 3))
    Jw = np.zeros((n, 3))
    dJv = np.zeros((n, 3))
    dJw = np.zeros((n, 3))
    for i in range(n + 1):
        # links 0..n-1, then the tool point on the last link
        if i < n:
            R = np.ascontiguousarray(frames[i, :3, :3])
            c = R @ com[i] + frames[i, :3, 3]
            last = i
        else:
            c = tcp[:3, 3].copy()
            last = n - 1
        Jv[:] = 0.0
        Jw[:] = 0.0
        for j in range(last + 1):
            if rev[j]:
                Jv[j] = _cross3(z[j], c - p[j])
                Jw[j] = z[j]
            else:
                Jv[j] = z[j]
        rest = np.zeros(3)
        for j in range(last, -1, -1):
            rest = rest + Jv[j] * dq[j]
            dJv[j] = _cross3(w_prev[j], Jv[j])
            if rev[j]:
                dJv[j] += _cross3(z[j], rest)
            dJw[j] = _cross3(w_prev[j], Jw[j])
        if i == n:
            break
        m = mass[i]
        Iw = R @ inertia[i] @ np.ascontiguousarray(R.T)
        IJw = Jw @ Iw  # rows Iw Jw_j (Iw symmetric)
        M += m * (Jv @ Jv.T) + Jw @ IJw.T
        g -= m * (Jv @ gvec)
        acc = dJv.T @ dq
        alpha = dJw.T @ dq
        w = Jw.T @ dq
        moment = Iw @ alpha + _cross3(w, Iw @ w)
        h += m * (Jv @ acc) + Jw @ moment
        if with_partials:
            for k in range(last + 1):
                dv = np.zeros((n, 3))
                dw = np.zeros((n, 3))
                for j in range(last + 1):
                    if k < j and rev[k]:
                        dv[j] = _cross3(z[k], Jv[j])
                        dw[j] = _cross3(z[k], Jw[j])
                    elif k >= j and rev[j]:
                        dv[j] = _cross3(z[j], Jv[k])
                t = m * (dv @ Jv.T) + dw @ IJw.T
                dM[:, :, k] += t + t.T
                if rev[k]:
                    zk = z[k]
                    S = np.array([[0.0, -zk[2], zk[1]], [zk[2], 0.0, -zk[0]], [-zk[1], zk[0], 0.0]])
                    SI = S @ Iw
                    dI = SI + SI.T
                    dM[:, :, k] += Jw @ dI @ Jw.T
    return frames, z, p, tcp, M, g, h, dM, Jv.T.copy(), Jw.T.copy(), dJv.T.copy(), dJw.T.copy()


def _params(chain: SerialChain):
    cache = getattr(chain, "_kernel_params", None)
    if cache is None:
        cache = (np.array([j.origin for j in chain.joints]), np.array([j.axis for j in chain.joints]),
                 chain.revolute.copy(), np.ascontiguousarray(chain.tool),
                 np.array([lk.mass for lk in chain.links]), np.array([lk.com for lk in chain.links]),
                 np.array([lk.inertia for lk in chain.links]), np.asarray(chain.gravity_vector, dtype=float))
        chain._kernel_params = cache
    return cache


def _evaluate(chain, q, dq, with_partials):
    q = np.asarray(q, dtype=float)
    dq = np.zeros_like(q) if dq is None else np.asarray(dq, dtype=float)
    return _kernel(*_params(chain), q, dq, with_partials)


@dataclass(frozen=True)
class Dynamics:
    M: np.ndarray
    C: np.ndarray
    g: np.ndarray
    dM: np.ndarray  # dM[i, j, k] = dM_ij / dq_k
    Mdot: np.ndarray
    kin: Kinematics
    tcp_jac: tuple  # (Jv, Jw, dJv, dJw) of the tool point, 3 x n each


def forward_kinematics(chain: SerialChain, q) -> Kinematics:
    frames, z, p, tcp = _evaluate(chain, q, None, False)[:4]
    return Kinematics(frames, z, p, tcp)


def mass_matrix(chain: SerialChain, q) -> np.ndarray:
    M = _evaluate(chain, q, None, False)[4]
    return 0.5 * (M + M.T)


def gravity(chain: SerialChain, q) -> np.ndarray:
    """Gradient of the potential energy, ``-sum m_i Jv_i^T g``."""
    return _evaluate(chain, q, None, False)[5]


def potential_energy(chain: SerialChain, q) -> float:
    frames = forward_kinematics(chain, q).frames
    V = 0.0
    for i, lk in enumerate(chain.links):
        c = frames[i, :3, :3] @ lk.com + frames[i, :3, 3]
        V -= lk.mass * chain.gravity_vector @ c
    return V


def mass_and_bias(chain: SerialChain, q, dq):
    """``M``, Coriolis/centrifugal vector ``C dq`` and ``g`` (no inertia partials)."""
    out = _evaluate(chain, q, dq, False)
    return 0.5 * (out[4] + out[4].T), out[6], out[5]


def dynamics(chain: SerialChain, q, dq) -> Dynamics:
    """Inertia, Christoffel-based Coriolis matrix, gravity and inertia partials."""
    dq = np.asarray(dq, dtype=float)
    frames, z, p, tcp, M, g, _, dM, Jv, Jw, dJv, dJw = _evaluate(chain, q, dq, True)
    M = 0.5 * (M + M.T)
    Mdot = dM @ dq
    # Christoffel symbols of the first kind contracted with dq
    T2 = np.einsum("ikj,k->ij", dM, dq)
    C = 0.5 * (Mdot + T2 - T2.T)
    return Dynamics(M, C, g, dM, Mdot, Kinematics(frames, z, p, tcp), (Jv, Jw, dJv, dJw))


def coriolis_matrix(chain: SerialChain, q, dq) -> np.ndarray:
    return dynamics(chain, q, dq).C


def mass_matrix_partials(chain: SerialChain, q) -> np.ndarray:
    return dynamics(chain, q, np.zeros(chain.n)).dM


def forward_dynamics(chain: SerialChain, q, dq, tau) -> np.ndarray:
    M, h, g = mass_and_bias(chain, q, dq)
    return np.linalg.solve(M, tau - h - g)


def tcp_jacobians(chain: SerialChain, q, dq, kin: Kinematics = None):
    """Position/angular Jacobians (3 x n) of the tool frame and their time derivatives."""
    return tuple(_evaluate(chain, q, dq, False)[8:])


# -- quaternions (w, x, y, z) --------------------------------------------------

def quat_from_matrix(R) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


def quat_mul(a, b) -> np.ndarray:
    aw, av = a[0], a[1:]
    bw, bv = b[0], b[1:]
    return np.concatenate([[aw * bw - av @ bv], aw * bv + bw * av + np.cross(av, bv)])


def quat_conj(a) -> np.ndarray:
    return np.concatenate([[a[0]], -a[1:]])


def orientation_error(R, Rd):
    """Scalar and vector part of ``q * conj(q_d)`` on the short-rotation side."""
    qe = quat_from_matrix(R @ Rd.T)  # quaternion of q * conj(q_d)
    if qe[0] < 0.0:
        qe = -qe
    return qe[0], qe[1:]


def orientation_error_rate(eta, eps, w, wd) -> np.ndarray:
    """Time derivative of the error vector part for world angular velocities."""
    return skew(wd) @ eps + 0.5 * (eta * np.eye(3) - skew(eps)) @ (w - wd)


# -- tasks -------------------------------------------------------------------

@dataclass
class TaskSpec:
    """A priority level.

    ``params`` by kind:

    * OrientationTrack: ``profile(t) -> (R_d, w_d, dw_d)``
    * PositionBox: ``lower``, ``upper`` (xy bounds)
    * PositionTrackRegulate: ``trajectory(t) -> (s, ds, dds)``, ``center``
    * JointPosture: ``q0``
    * AlignedPosition: ``target``, ``angle(t) -> (alpha, dalpha)``
    """

    kind: str
    priority: int
    gains: np.ndarray
    weight: np.ndarray = None
    blocks: tuple = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(self.kind)
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=float))
        if np.any(self.gains <= 0):
            raise ValueError("gains must be positive")

    def dim(self, n: int) -> int:
        return n if self.kind == POSTURE else TASK_DIMS[self.kind]

    def gain_vector(self, n: int) -> np.ndarray:
        m = self.dim(n)
        return np.broadcast_to(self.gains, (m,)).copy() if self.gains.size == 1 else self.gains


@dataclass(frozen=True)
class TaskData:
    J: np.ndarray
    dJ: np.ndarray
    x_err: np.ndarray
    nu_d: np.ndarray
    dnu_d: np.ndarray
    sense: tuple
    b_kin: np.ndarray  # reference velocity (lower bound for inequality rows)
    db_kin: np.ndarray  # its time derivative along the current state
    W: np.ndarray
    blocks: tuple


def task_kinematics(chain: SerialChain, spec: TaskSpec, state: RobotState, t: float,
                    kin: Kinematics = None, tcp=None) -> TaskData:
    """Jacobian, its rate and the kinematic reference of one task."""
    n = chain.n
    q, dq = state.q, state.dq
    m = spec.dim(n)
    W = np.eye(m) if spec.weight is None else np.asarray(spec.weight, dtype=float)
    blocks = spec.blocks if spec.blocks is not None else (m,)
    if spec.kind == POSTURE:
        K = spec.gain_vector(n)
        q0 = np.asarray(spec.params["q0"], dtype=float)
        e = q - q0
        z = np.zeros(n)
        return TaskData(np.eye(n), np.zeros((n, n)), e, z, z, ("eq",) * n,
                        -K * e, -K * dq, W, blocks)
    kin = forward_kinematics(chain, q) if kin is None else kin
    Jv, Jw, dJv, dJw = tcp_jacobians(chain, q, dq, kin) if tcp is None else tcp
    p = kin.tcp[:3, 3]
    if spec.kind == ORIENTATION:
        K = spec.gain_vector(n)
        Rd, wd, dwd = spec.params["profile"](t)
        eta, eps = orientation_error(kin.tcp[:3, :3], Rd)
        deps = orientation_error_rate(eta, eps, Jw @ dq, wd)
        return TaskData(Jw, dJw, eps, wd, dwd, ("eq",) * 3, wd - K * eps, dwd - K * deps, W, blocks)
    if spec.kind == BOX:
        K = spec.gain_vector(n)
        lo = np.asarray(spec.params["lower"], dtype=float)
        hi = np.asarray(spec.params["upper"], dtype=float)
        S = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
        c = np.array([lo[0], -hi[0], lo[1], -hi[1]])
        y = S @ p
        dy = S @ Jv @ dq
        z = np.zeros(4)
        return TaskData(S @ Jv, S @ dJv, y - c, z, z, ("ge",) * 4, -K * (y - c), -K * dy, W, blocks)
    if spec.kind == TRACK_REGULATE:
        K = spec.gain_vector(n)
        s, ds, dds = spec.params["trajectory"](t)
        cd = np.asarray(spec.params["center"], dtype=float)
        dp = Jv @ dq
        J = np.vstack([Jv, Jv])
        dJ = np.vstack([dJv, dJv])
        err = np.concatenate([p - s, p - cd])
        nu = np.concatenate([ds, np.zeros(3)])
        dnu = np.concatenate([dds, np.zeros(3)])
        b = nu - K * err
        db = np.concatenate([dds - K[:3] * (dp - ds), -K[3:] * dp])
        return TaskData(J, dJ, err, nu, dnu, ("eq",) * 6, b, db, W, blocks)
    if spec.kind == ALIGNED:
        K = spec.gain_vector(n)
        alpha, dalpha = spec.params["angle"](t)
        u = np.array([[1.0, 0.0, 0.0], [np.cos(alpha), np.sin(alpha), 0.0]])
        du = np.array([[0.0, 0.0, 0.0], [-np.sin(alpha), np.cos(alpha), 0.0]]) * dalpha
        e = p - np.asarray(spec.params["target"], dtype=float)
        dp = Jv @ dq
        z = np.zeros(2)
        return TaskData(u @ Jv, u @ dJv + du @ Jv, u @ e, z, z, ("eq",) * 2,
                        -K * (u @ e), -K * (du @ e + u @ dp), W, blocks)
    raise UnknownKind(spec.kind)


def jacobian_dot(chain: SerialChain, spec: TaskSpec, state: RobotState, t: float = 0.0) -> np.ndarray:
    return task_kinematics(chain, spec, state, t).dJ
