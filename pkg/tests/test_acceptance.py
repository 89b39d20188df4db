"""End-to-end acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line (also collected in the pytest terminal
summary) and then asserts.  Runtime limits are part of the criteria.
"""

import time

import numpy as np
import pytest

from whqpctl import verify
from whqpctl.sim import default_scenario, run, singular_scenario, summarize


def _worst(results):
    return max(r.worst for r in results)


def _ok(results):
    return all(r.ok for r in results)


def test_wmpi_penrose_conditions(report):
    t0 = time.perf_counter()
    res = verify.check_wmpi(np.random.default_rng(1), 500)
    elapsed = time.perf_counter() - t0
    ok = _ok(res) and res[0].checked == 500 and elapsed < 5.0
    report("1 weighted pseudoinverse", ok, f"500 instances, worst {_worst(res):.2e}, {elapsed:.1f}s")
    assert ok, [f for r in res for f in r.failures[:5]]


def test_projected_stack_properties(report):
    t0 = time.perf_counter()
    res = verify.check_projected_stack(np.random.default_rng(2), 200)
    elapsed = time.perf_counter() - t0
    ok = _ok(res) and elapsed < 10.0
    report("2 projected stack", ok, f"200 stacks, worst {_worst(res):.2e}, {elapsed:.1f}s")
    assert ok, [f for r in res for f in r.failures[:5]]


def test_whqp_matches_oracle(report):
    t0 = time.perf_counter()
    res = verify.check_whqp_oracle(np.random.default_rng(3), 1000, weighted=True, tol=1e-8)
    elapsed = time.perf_counter() - t0
    ok = _ok(res) and elapsed < 120.0
    report("3 active search vs oracle", ok,
           f"1000 hierarchies, objectives {res[0].worst:.2e}, slacks {res[1].worst:.2e}, {elapsed:.1f}s")
    assert ok, [f for r in res for f in r.failures[:5]]


def test_weighted_unweighted_consistency(report):
    t0 = time.perf_counter()
    ident = verify.check_whqp_oracle(np.random.default_rng(4), 300, weighted=False, tol=1e-8)
    inv = verify.check_whqp_invariance(np.random.default_rng(5), 300)
    scaling = [r for r in inv if r.name.startswith("within-level scaling")]
    elapsed = time.perf_counter() - t0
    ok = _ok(ident) and _ok(scaling) and scaling[0].worst < 1e-9 and elapsed < 30.0
    report("4 weight consistency", ok,
           f"identity weights {_worst(ident):.2e}, scaled A_k x {scaling[0].worst:.2e}, {elapsed:.1f}s")
    assert ok, [f for r in ident + scaling for f in r.failures[:5]]


def test_cod_differentiation(report):
    t0 = time.perf_counter()
    rot = verify.check_cod_rotation_rates(np.random.default_rng(6), 200)
    fd = verify.check_cod_fd_rates(np.random.default_rng(7), 200)
    elapsed = time.perf_counter() - t0
    ok = _ok(rot) and _ok(fd) and elapsed < 10.0
    report("5 COD rates", ok,
           f"product rule {rot[0].worst:.2e}, finite differences {fd[0].worst:.2e}, {elapsed:.1f}s")
    assert ok, [f for r in rot + fd for f in r.failures[:5]]


def test_dynamics_passivity_and_energy(report):
    t0 = time.perf_counter()
    rob = verify.check_robot(np.random.default_rng(8), 100)
    pas = [r for r in rob if r.name.startswith("passivity")][0]
    energy = verify.check_energy(np.random.default_rng(9), 3)
    elapsed = time.perf_counter() - t0
    ok = pas.ok and pas.worst < 1e-10 and _ok(energy) and elapsed < 20.0
    report("6 passivity and energy", ok,
           f"passivity {pas.worst:.2e} over 100 states, energy drift {energy[0].worst:.2e} J, {elapsed:.1f}s")
    assert ok, pas.failures[:5] + energy[0].failures[:5]


CASES = ("track", "equal", "regulate")


@pytest.fixture(scope="module")
def scenario_runs():
    out = {}
    for case in CASES:
        sc = default_scenario(case)
        t0 = time.perf_counter()
        log = run(sc)
        out[case] = (sc, log, summarize(sc, log), time.perf_counter() - t0)
    return out


@pytest.mark.parametrize("case", CASES)
def test_transform_invariants(report, scenario_runs, case):
    sc, log, s, elapsed = scenario_runs[case]
    ok = (len(log) == 10000 and s["res_inertia_max"] < 1e-9 and s["res_skew_max"] < 1e-8
          and elapsed < 60.0)
    report(f"7 transform invariants ({case})", ok,
           f"inertia {s['res_inertia_max']:.2e}, skew {s['res_skew_max']:.2e}, "
           f"{s['switches']} switch steps skipped, {elapsed:.1f}s")
    assert ok


def test_scenario_behavior(report, scenario_runs):
    sums = {case: scenario_runs[case][2] for case in CASES}
    total = sum(scenario_runs[case][3] for case in CASES)
    orient = max(s["orientation_error_max_after_2s"] for s in sums.values())
    box = max(s["box_violation_max"] for s in sums.values())
    sp = [sums[c]["rms_spiral_final"] for c in CASES]
    ce = [sums[c]["rms_center_final"] for c in CASES]
    ok_a = orient < 1e-2
    ok_b = box < 1e-3
    ok_c = sp[0] < sp[1] < sp[2] and ce[2] < ce[1] < ce[0]
    ok_t = total < 180.0
    report("8a orientation after 2 s", ok_a, f"worst {orient:.2e}")
    report("8b box after 0.5 s", ok_b, f"worst violation {box:.2e} m")
    report("8c weight-case ordering", ok_c,
           "spiral RMS " + " < ".join(f"{c} {v:.4f}" for c, v in zip(CASES, sp))
           + "; center RMS " + " < ".join(f"{c} {v:.4f}" for c, v in zip(CASES[::-1], ce[::-1])))
    report("8 runtime", ok_t, f"{total:.1f}s for three cases")
    assert ok_a and ok_b and ok_c and ok_t


def test_singular_level_is_absorbed(report):
    t0 = time.perf_counter()
    sc = singular_scenario()
    log = run(sc)
    elapsed = time.perf_counter() - t0
    t = log.column("t")
    ranks = log.column("ranks")
    before = ranks[t < sc.tasks[1].params["angle"].t_switch]
    after = ranks[t >= sc.tasks[1].params["angle"].t_switch]
    ok = (len(log) == sc.steps
          and np.all(before[:, 1] == 2) and np.all(after[:, 1] == 1)
          and np.all(after[:, 2] == before[0, 2] + 1)
          and np.all(ranks.sum(axis=1) == sc.chain.n)
          and np.all(np.isfinite(log.column("tau")))
          and elapsed < 60.0)
    report("9 singular level", ok,
           f"ranks {before[0].tolist()} -> {after[-1].tolist()}, {elapsed:.1f}s")
    assert ok
