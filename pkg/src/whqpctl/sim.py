"""Fixed-step simulation of the arm under the task-stack controller."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .controller import WhqpController
from .robot import (ALIGNED, BOX, ORIENTATION, POSTURE, TRACK_REGULATE, SerialChain, TaskSpec,
                    forward_dynamics, forward_kinematics, load_chain, orientation_error,
                    quat_from_matrix, quat_conj, quat_mul)

Q_HOME = np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0, np.pi / 2, np.pi / 4])
GAINS = {"orientation": 12.0, "box": 10.0, "track": 5.0, "posture": 14.0}
WEIGHT_CASES = {
    "track": np.diag([1.0, 1.0, 1.0, 1e-6, 1e-6, 1e-6]),
    "regulate": np.diag([1e-6, 1e-6, 1e-6, 1.0, 1.0, 1.0]),
    "equal": np.eye(6),
}
DIVERGENCE_LIMIT = 1e3


class IntegrationDiverged(RuntimeError):
    pass


def _axis_angle_quat(a, da, dda, th, dth, ddth):
    """Quaternion ``(cos th/2, sin th/2 a)`` with first and second time derivatives."""
    h, dh, ddh = 0.5 * th, 0.5 * dth, 0.5 * ddth
    c, s = np.cos(h), np.sin(h)
    q = np.concatenate([[c], s * a])
    dq = np.concatenate([[-s * dh], c * dh * a + s * da])
    ddq = np.concatenate([[-c * dh ** 2 - s * ddh],
                          (-s * dh ** 2 + c * ddh) * a + 2 * c * dh * da + s * dda])
    return q, dq, ddq


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class OrientationProfile:
    """``R_d = R0 Rot(a(t), theta(t))`` with ``a`` turning in the xy-plane of ``R0``."""

    R0: np.ndarray
    theta_max: float = 0.4
    omega_a: float = 0.2
    omega_theta: float = 0.5

    def __call__(self, t: float):
        wa, wt = self.omega_a, self.omega_theta
        a = np.array([np.cos(wa * t), np.sin(wa * t), 0.0])
        da = wa * np.array([-np.sin(wa * t), np.cos(wa * t), 0.0])
        dda = -wa ** 2 * a
        th = self.theta_max * np.sin(wt * t)
        dth = self.theta_max * wt * np.cos(wt * t)
        ddth = -self.theta_max * wt ** 2 * np.sin(wt * t)
        q, dq, ddq = _axis_angle_quat(a, da, dda, th, dth, ddth)
        w_s = 2.0 * quat_mul(dq, quat_conj(q))[1:]
        dw_s = 2.0 * quat_mul(ddq, quat_conj(q))[1:]
        return self.R0 @ quat_to_matrix(q), self.R0 @ w_s, self.R0 @ dw_s


def orientation_profile(t: float, R0=np.eye(3), theta_max=0.4, omega_a=0.2, omega_theta=0.5):
    """Desired rotation, angular velocity and angular acceleration (world frame)."""
    return OrientationProfile(np.asarray(R0, dtype=float), theta_max, omega_a, omega_theta)(t)


@dataclass(frozen=True)
class Spiral:
    """Planar spiral ``c + r(t) (cos phi, sin phi, 0)``, ``r = r0 + growth t``."""

    center: np.ndarray
    radius0: float = 0.12
    growth: float = 5e-3
    rate: float = 1.0
    phase: float = np.pi

    def __call__(self, t: float):
        r = self.radius0 + self.growth * t
        phi = self.phase + self.rate * t
        e = np.array([np.cos(phi), np.sin(phi), 0.0])
        et = np.array([-np.sin(phi), np.cos(phi), 0.0])
        s = self.center + r * e
        ds = self.growth * e + r * self.rate * et
        dds = 2 * self.growth * self.rate * et - r * self.rate ** 2 * e
        return s, ds, dds


@dataclass(frozen=True)
class AlignmentAngle:
    """Angle shrinking linearly from ``alpha0`` to zero at ``t_switch``, then held."""

    alpha0: float = 0.6
    t_switch: float = 1.0

    def __call__(self, t: float):
        if t >= self.t_switch:
            return 0.0, 0.0
        return self.alpha0 * (1.0 - t / self.t_switch), -self.alpha0 / self.t_switch


@dataclass
class Scenario:
    chain: SerialChain
    q0: np.ndarray
    dq0: np.ndarray
    tasks: list
    duration: float = 10.0
    dt: float = 1e-3
    integrator: str = "rk4"
    case: str = "equal"
    spiral: Spiral = None
    box: tuple = None  # ((x_lo, y_lo), (x_hi, y_hi))
    xi_mode: str = "whqp"
    switch_policy: str = "zero"

    def __post_init__(self):
        if not self.dt > 0 or self.duration < self.dt:
            raise ValueError("need dt > 0 and duration >= dt")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")
        if self.box is not None and not np.all(np.asarray(self.box[0]) < np.asarray(self.box[1])):
            raise ValueError("box lower bounds must be below upper bounds")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


def default_scenario(case: str = "equal", chain: SerialChain = None, duration: float = 10.0,
                     dt: float = 1e-3, q0=None, half_width: float = 0.15, radius0: float = 0.12,
                     growth: float = 5e-3, rate: float = 1.0, profile: dict = None) -> Scenario:
    """The four-level orientation / box / spiral / posture stack."""
    if case not in WEIGHT_CASES:
        raise ValueError(f"case must be one of {sorted(WEIGHT_CASES)}")
    chain = load_chain() if chain is None else chain
    q0 = Q_HOME.copy() if q0 is None else np.asarray(q0, dtype=float)
    T0 = forward_kinematics(chain, q0).tcp
    p0 = T0[:3, 3]
    # spiral starts at the initial tool position, box and spiral share the center
    center = p0 + np.array([radius0, 0.0, 0.0])
    spiral = Spiral(center, radius0, growth, rate, np.pi)
    lo = center[:2] - half_width
    hi = center[:2] + half_width
    prof = OrientationProfile(T0[:3, :3], **(profile or {}))
    tasks = [
        TaskSpec(ORIENTATION, 1, GAINS["orientation"], np.eye(3), (3,), {"profile": prof}),
        TaskSpec(BOX, 2, GAINS["box"], np.eye(4), (1, 1, 1, 1), {"lower": lo, "upper": hi}),
        TaskSpec(TRACK_REGULATE, 3, GAINS["track"], WEIGHT_CASES[case], (3, 3),
                 {"trajectory": spiral, "center": center}),
        TaskSpec(POSTURE, 4, GAINS["posture"], np.eye(chain.n), (chain.n,), {"q0": q0.copy()}),
    ]
    return Scenario(chain, q0, np.zeros(chain.n), tasks, duration, dt, "rk4", case, spiral, (lo, hi))


def singular_scenario(duration: float = 3.0, dt: float = 1e-3, t_switch: float = 1.0,
                      alpha0: float = 0.6, chain: SerialChain = None) -> Scenario:
    """Orientation / two position rows that become parallel / posture."""
    chain = load_chain() if chain is None else chain
    q0 = Q_HOME.copy()
    T0 = forward_kinematics(chain, q0).tcp
    target = T0[:3, 3] + np.array([0.05, 0.05, 0.0])
    prof = OrientationProfile(T0[:3, :3])
    tasks = [
        TaskSpec(ORIENTATION, 1, GAINS["orientation"], np.eye(3), (3,), {"profile": prof}),
        TaskSpec(ALIGNED, 2, GAINS["track"], np.eye(2), (2,),
                 {"target": target, "angle": AlignmentAngle(alpha0, t_switch)}),
        TaskSpec(POSTURE, 3, GAINS["posture"], np.eye(chain.n), (chain.n,), {"q0": q0.copy()}),
    ]
    return Scenario(chain, q0, np.zeros(chain.n), tasks, duration, dt, "rk4", "singular")


def load_scenario(path, **overrides) -> Scenario:
    """Scenario from a YAML mapping of :func:`default_scenario` keywords.

    Extra keys ``integrator``, ``xi_mode``, ``switch_policy`` and ``chain``
    (path to a chain file) are applied afterwards.  ``overrides`` replace
    values read from the file.
    """
    cfg = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: expected a mapping of scenario keys")
    cfg.update(overrides)
    extra = {k: cfg.pop(k) for k in ("integrator", "xi_mode", "switch_policy") if k in cfg}
    if "chain" in cfg:
        cfg["chain"] = load_chain(cfg["chain"])
    return replace(default_scenario(**cfg), **extra)


# -- integration --------------------------------------------------------------

@dataclass(frozen=True)
class State:
    q: np.ndarray
    dq: np.ndarray


def integrate(chain: SerialChain, state: State, torque: Callable, t: float, dt: float,
              method: str = "rk4", ddq0=None) -> State:
    """One step of ``M ddq + C dq + g = tau``.

    ``torque(t, q, dq)`` is evaluated at every stage; a constant callback
    gives a zero-order hold.  ``ddq0`` may pass a precomputed first-stage
    acceleration.
    """
    q, dq = state.q, state.dq

    def acc(tt, qq, vv):
        return forward_dynamics(chain, qq, vv, torque(tt, qq, vv))

    if method == "euler":
        a = acc(t, q, dq) if ddq0 is None else ddq0
        v = dq + dt * a
        return State(q + dt * v, v)
    k1v = acc(t, q, dq) if ddq0 is None else ddq0
    k1q = dq
    k2q = dq + 0.5 * dt * k1v
    k2v = acc(t + 0.5 * dt, q + 0.5 * dt * k1q, k2q)
    k3q = dq + 0.5 * dt * k2v
    k3v = acc(t + 0.5 * dt, q + 0.5 * dt * k2q, k3q)
    k4q = dq + dt * k3v
    k4v = acc(t + dt, q + dt * k3q, k4q)
    return State(q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q),
                 dq + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def kinetic_energy(M, dq) -> float:
    return 0.5 * float(dq @ M @ dq)


@dataclass(frozen=True)
class LogRecord:
    t: float
    q: np.ndarray
    dq: np.ndarray
    tau: np.ndarray
    p: np.ndarray
    quat: np.ndarray
    active: tuple
    slack: np.ndarray
    ke: float
    res_inertia: float
    res_skew: float
    switched: bool
    ranks: tuple


@dataclass
class TrajectoryLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def header(self) -> list:
        r = self.records[0]
        n, levels = r.q.size, r.slack.size
        return (["t"] + [f"q{i}" for i in range(n)] + [f"dq{i}" for i in range(n)]
                + [f"tau{i}" for i in range(n)] + ["px", "py", "pz", "qw", "qx", "qy", "qz", "active"]
                + [f"slack{k + 1}" for k in range(levels)] + ["ke", "res_inertia", "res_skew"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for r in self.records:
                active = ";".join(f"{k}:{i}" for k, i in r.active)
                w.writerow([repr(r.t)] + [repr(float(v)) for v in np.concatenate([r.q, r.dq, r.tau, r.p, r.quat])]
                           + [active] + [repr(float(v)) for v in r.slack]
                           + [repr(r.ke), repr(r.res_inertia), repr(r.res_skew)])


def step(scenario: Scenario, controller: WhqpController, state: State, t: float):
    """Control at ``(t, state)``, then integrate one step with the torque held."""
    out = controller.compute(t, state.q, state.dq, scenario.dt)
    dyn = out.dyn
    tr = out.transform
    ddq0 = np.linalg.solve(dyn.M, out.tau - dyn.C @ state.dq - dyn.g)
    nxt = integrate(scenario.chain, state, lambda *_: out.tau, t, scenario.dt, scenario.integrator, ddq0)
    if not np.all(np.isfinite(nxt.dq)) or np.linalg.norm(nxt.dq) > DIVERGENCE_LIMIT:
        raise IntegrationDiverged(f"|dq| exceeded {DIVERGENCE_LIMIT} at t = {t:.4f}")
    tcp = dyn.kin.tcp
    slack = np.sqrt(2.0 * np.maximum(out.search.objectives, 0.0))
    rec = LogRecord(t, state.q.copy(), state.dq.copy(), out.tau.copy(), tcp[:3, 3].copy(),
                    quat_from_matrix(tcp[:3, :3]), tuple(sorted(out.search.active)), slack,
                    kinetic_energy(dyn.M, state.dq), tr.inertia_residual(dyn.M), tr.skew_residual(),
                    out.switched, out.ranks)
    return nxt, rec


def make_controller(scenario: Scenario) -> WhqpController:
    return WhqpController(scenario.chain, scenario.tasks, xi_mode=scenario.xi_mode,
                          switch_policy=scenario.switch_policy)


def run(scenario: Scenario, progress: Callable = None) -> TrajectoryLog:
    controller = make_controller(scenario)
    state = State(np.asarray(scenario.q0, dtype=float).copy(), np.asarray(scenario.dq0, dtype=float).copy())
    log = TrajectoryLog()
    for i in range(scenario.steps):
        t = i * scenario.dt
        state, rec = step(scenario, controller, state, t)
        log.records.append(rec)
        if progress is not None:
            progress(i, rec)
    return log


def run_case(case: str, duration: float = 10.0, dt: float = 1e-3) -> TrajectoryLog:
    """Module-level entry point so cases can run in worker processes."""
    return run(default_scenario(case, duration=duration, dt=dt))


# -- summaries ----------------------------------------------------------------

def orientation_errors(scenario: Scenario, log: TrajectoryLog) -> np.ndarray:
    """Vector-part norm of the quaternion error against the orientation task profile."""
    spec = next((s for s in scenario.tasks if s.kind == ORIENTATION), None)
    if spec is None or not len(log):
        return np.zeros(len(log))
    prof = spec.params["profile"]
    return np.array([np.linalg.norm(orientation_error(quat_to_matrix(r.quat), prof(r.t)[0])[1])
                     for r in log.records])


def box_violation(scenario: Scenario, log: TrajectoryLog) -> np.ndarray:
    if scenario.box is None or not len(log):
        return np.zeros(len(log))
    lo, hi = (np.asarray(b, dtype=float) for b in scenario.box)
    xy = log.column("p")[:, :2]
    return np.maximum(0.0, np.maximum(lo - xy, xy - hi)).max(axis=1)


def summarize(scenario: Scenario, log: TrajectoryLog, settle: float = 0.5, window: float = 3.0) -> dict:
    """Scalar metrics of a run.

    Box violation is taken after ``settle`` seconds, distances to the spiral
    and to its center are RMS values over the final ``window`` seconds, and
    the transform residual maxima skip steps with an active-set change.
    """
    out = {"steps": len(log), "duration": scenario.steps * scenario.dt}
    if not len(log):
        return out
    t = log.column("t")
    eo = orientation_errors(scenario, log)
    out["orientation_error_final"] = float(eo[-1])
    out["orientation_error_max_after_2s"] = float(eo[t >= 2.0].max(initial=0.0))
    viol = box_violation(scenario, log)
    out["box_violation_max"] = float(viol[t >= settle].max(initial=0.0))
    sw = log.column("switched").astype(bool)
    out["switches"] = int(sw.sum())
    out["res_inertia_max"] = float(log.column("res_inertia")[~sw].max(initial=0.0))
    out["res_skew_max"] = float(log.column("res_skew")[~sw].max(initial=0.0))
    if scenario.spiral is not None:
        p = log.column("p")
        s = np.array([scenario.spiral(tt)[0] for tt in t])
        c = scenario.spiral.center
        fin = t >= t[-1] - window
        d_s = np.linalg.norm(p - s, axis=1)
        d_c = np.linalg.norm(p - c, axis=1)
        out["rms_spiral_final"] = float(np.sqrt(np.mean(d_s[fin] ** 2)))
        out["rms_center_final"] = float(np.sqrt(np.mean(d_c[fin] ** 2)))
        if scenario.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in scenario.box)
            inside = np.all((s[:, :2] >= lo) & (s[:, :2] <= hi), axis=1) & (t >= 2.0)
            out["rms_spiral_in_box"] = float(np.sqrt(np.mean(d_s[inside] ** 2))) if inside.any() else float("nan")
        out["distance_to_center_final"] = float(d_c[-1])
    ranks = log.column("ranks")
    out["ranks_initial"] = tuple(int(v) for v in ranks[0])
    out["ranks_final"] = tuple(int(v) for v in ranks[-1])
    return out


def write_summary(summary: dict, path) -> None:
    lines = []
    for key, val in summary.items():
        if isinstance(val, float):
            val = f"{val:.6e}"
        elif isinstance(val, tuple):
            val = " ".join(str(v) for v in val)
        lines.append(f"{key}: {val}")
    Path(path).write_text("\n".join(lines) + "\n")
