import numpy as np
import pytest

from whqpctl import verify
from whqpctl.controller import (BadPartition, GainSet, LevelReference, SingularTransform, WhqpController,
                                build_transform, control_torque, reference_xi, split_gamma)
from whqpctl.robot import ORIENTATION, POSTURE, TaskSpec, dynamics, forward_kinematics, load_chain
from whqpctl.sim import OrientationProfile, Q_HOME, default_scenario, make_controller
from whqpctl.whqp import Hierarchy, TaskLevel, active_search


def _skew(rng, n):
    X = rng.standard_normal((n, n))
    return X - X.T


def test_split_gamma_cases():
    Gd, Gs = split_gamma(np.zeros((4, 4)), (4,))
    assert not Gd.any() and not Gs.any()
    G = _skew(np.random.default_rng(0), 7)
    Gd, Gs = split_gamma(G, (7,))
    assert np.array_equal(Gd, G) and not Gs.any()
    Gd, Gs = split_gamma(G, (3, 4))
    assert not Gd[:3, 3:].any() and not Gd[3:, :3].any()
    assert np.array_equal(Gd + Gd.T, np.zeros((7, 7)))
    assert np.array_equal(Gd + Gs, G)
    with pytest.raises(BadPartition):
        split_gamma(G, (3, 3))


def _static_problem(rng, n=5):
    M = verify.random_spd(rng, n)
    h = Hierarchy([TaskLevel.equality(rng.standard_normal((2, n)), rng.standard_normal(2)),
                   TaskLevel.equality(np.eye(n), rng.standard_normal(n))])
    return M, h, active_search(h, M)


def test_static_case_has_zero_gamma():
    rng = np.random.default_rng(1)
    M, h, s = _static_problem(rng)
    n = M.shape[0]
    tr = build_transform(s, M, np.zeros((n, n)), np.zeros((n, n)), [np.zeros((2, n)), np.zeros((n, n))],
                         np.zeros(n))
    assert np.allclose(tr.Gamma, 0.0) and np.allclose(tr.dFinv, 0.0)
    assert tr.inertia_residual(M) < 1e-10
    np.testing.assert_allclose(tr.F @ tr.Finv, np.eye(n), atol=1e-10)


def test_single_configuration_task():
    rng = np.random.default_rng(2)
    n = 4
    M = verify.random_spd(rng, n)
    dq = rng.standard_normal(n)
    h = Hierarchy([TaskLevel.equality(np.eye(n), np.zeros(n))])
    s = active_search(h, M)
    tr = build_transform(s, M, np.zeros((n, n)), np.zeros((n, n)), [np.zeros((n, n))], dq)
    lv = s.factors.levels[0]
    np.testing.assert_allclose(tr.xi, (lv.Zprev @ lv.cod.Y).T @ M @ dq, atol=1e-12)
    # identity metric: F^-1 is orthogonal and xi has the norm of dq
    s1 = active_search(h)
    tr1 = build_transform(s1, np.eye(n), np.zeros((n, n)), np.zeros((n, n)), [np.zeros((n, n))], dq)
    np.testing.assert_allclose(tr1.Finv.T @ tr1.Finv, np.eye(n), atol=1e-12)
    assert np.linalg.norm(tr1.xi) == pytest.approx(np.linalg.norm(dq))


def test_missing_configuration_task_is_singular():
    rng = np.random.default_rng(3)
    M = verify.random_spd(rng, 4)
    h = Hierarchy([TaskLevel.equality(rng.standard_normal((2, 4)), np.zeros(2))])
    s = active_search(h, M)
    with pytest.raises(SingularTransform):
        build_transform(s, M, np.zeros((4, 4)), np.zeros((4, 4)), [np.zeros((2, 4))])


def test_zero_reference():
    rng = np.random.default_rng(4)
    M, h, s = _static_problem(rng)
    n = M.shape[0]
    tr = build_transform(s, M, np.zeros((n, n)), np.zeros((n, n)), [np.zeros((2, n)), np.zeros((n, n))])
    refs = [LevelReference(np.zeros(2), np.zeros(2), np.eye(2)), LevelReference(np.zeros(n), np.zeros(n), np.eye(n))]
    xi_r, dxi_r = reference_xi(tr, refs)
    assert not xi_r.any() and not dxi_r.any()


def test_reference_reproduces_prioritized_solution():
    rng = np.random.default_rng(5)
    M, h, s = _static_problem(rng)
    n = M.shape[0]
    tr = build_transform(s, M, np.zeros((n, n)), np.zeros((n, n)), [np.zeros((2, n)), np.zeros((n, n))])
    refs = [LevelReference(lv.b, np.zeros_like(lv.b), np.eye(lv.A.shape[0])) for lv in h.levels]
    xi_r, _ = reference_xi(tr, refs)
    dq_r = tr.Finv @ xi_r
    np.testing.assert_allclose(dq_r, s.x, atol=1e-10)
    # first level is feasible, so holding xi = xi_r satisfies it exactly
    np.testing.assert_allclose(h.levels[0].A @ dq_r, h.levels[0].b, atol=1e-10)


def test_torque_is_gravity_at_reference():
    rng = np.random.default_rng(6)
    M, h, s = _static_problem(rng)
    n = M.shape[0]
    tr = build_transform(s, M, np.zeros((n, n)), np.zeros((n, n)), [np.zeros((2, n)), np.zeros((n, n))])
    xi_r = rng.standard_normal(n)
    dq = tr.Finv @ xi_r
    g = rng.standard_normal(n)
    tau = control_torque(dq, tr, xi_r, np.zeros(n), np.eye(n), g)
    np.testing.assert_allclose(tau, g, atol=1e-12)


def test_equilibrium_at_targets():
    chain = load_chain()
    R0 = forward_kinematics(chain, Q_HOME).tcp[:3, :3]
    tasks = [TaskSpec(ORIENTATION, 1, 12.0, np.eye(3), (3,), {"profile": OrientationProfile(R0, theta_max=0.0)}),
             TaskSpec(POSTURE, 2, 14.0, np.eye(7), (7,), {"q0": Q_HOME.copy()})]
    ctl = WhqpController(chain, tasks)
    out = ctl.compute(0.0, Q_HOME, np.zeros(7))
    np.testing.assert_allclose(out.tau, dynamics(chain, Q_HOME, np.zeros(7)).g, atol=1e-10)


def test_controller_identities_suite():
    for res in verify.check_controller(np.random.default_rng(7), 10):
        assert res.ok, (res.name, res.failures[:3])


def test_controller_track_case_identities():
    for res in verify.check_controller(np.random.default_rng(8), 5, case="track"):
        assert res.ok, (res.name, res.failures[:3])


def test_dbar_defaults_to_kbar():
    sc = default_scenario("equal")
    g = GainSet.from_tasks(sc.chain, sc.tasks)
    for K, D in zip(g.Kbar, g.Dbar):
        assert np.array_equal(K, D)
    np.testing.assert_allclose(np.diag(g.Kbar[0]), 12.0)
    np.testing.assert_allclose(np.diag(g.Kbar[3]), 14.0)
    with pytest.raises(ValueError):
        GainSet((np.eye(2),), (-np.eye(2),))


def test_switch_policy_and_rate_limit():
    sc = default_scenario("equal")
    with pytest.raises(ValueError):
        WhqpController(sc.chain, sc.tasks, switch_policy="smooth")
    ctl = WhqpController(sc.chain, sc.tasks, torque_rate_limit=1.0)
    a = ctl.compute(0.0, sc.q0, np.zeros(7), 1e-3).tau
    b = ctl.compute(0.0, sc.q0 + 0.05, np.zeros(7), 1e-3).tau
    np.testing.assert_allclose(np.abs(b - a), 1e-3, rtol=1e-9)


def test_first_step_activity():
    sc = default_scenario("equal")
    out = make_controller(sc).compute(0.0, sc.q0, sc.dq0)
    eq_ids = {(k, i) for k in (1, 3, 4) for i in range(out.search.factors.levels[k - 1].A.shape[0])}
    assert eq_ids <= out.search.active
    assert not any(k == 2 for k, _ in out.search.active)
    assert not out.switched
