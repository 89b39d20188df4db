import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whqpctl import verify
from whqpctl.whqp import (CycleDetected, DimensionMismatch, EnumerationBoundExceeded, Hierarchy,
                          InvalidLevel, IterationLimitExceeded, ParseError, TaskLevel, active_search,
                          ewhqp_dual, ewhqp_primal, format_problem, level_objectives, normalize,
                          oracle_lex_solve, parse_problem)


def ineq(A, b, sense="ge", W=None, hi=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    return TaskLevel(A, b, (sense,) * m, W, (1,) * m, hi)


def test_single_feasible_equality_level():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((2, 4))
    b = rng.standard_normal(2)
    h = Hierarchy([TaskLevel.equality(A, b, verify.random_spd(rng, 2))])
    sol = ewhqp_primal(h, {(1, 0), (1, 1)})
    np.testing.assert_allclose(A @ sol.x, b, atol=1e-12)
    assert sol.eta == 1 and np.allclose(sol.w[0], 0.0)


def test_strict_priority_sacrifices_lower_level():
    h = Hierarchy([TaskLevel.equality([[1.0]], [1.0], [[3.0]]), TaskLevel.equality([[1.0]], [0.0], [[7.0]])])
    sol = ewhqp_primal(h, {(1, 0), (2, 0)})
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.w[1][0] == pytest.approx(-1.0)
    assert sol.eta == 1


def test_weighted_compromise_frozen():
    # x = 0 and x = 3 with weights 1 and 2: x = 2, objective (1*4 + 2*1)/2 = 3
    h = Hierarchy([TaskLevel.equality([[1.0], [1.0]], [0.0, 3.0], np.diag([1.0, 2.0]), (1, 1))])
    s = active_search(h)
    assert s.x[0] == pytest.approx(2.0)
    assert level_objectives(h, s.x)[0] == pytest.approx(3.0)


def test_infeasible_pair_symmetric_compromise():
    h = Hierarchy([TaskLevel([[1.0], [1.0]], [1.0, 0.0], ("ge", "le"), np.eye(2), (1, 1))])
    objs, x = oracle_lex_solve(h)
    assert x[0] == pytest.approx(0.5) and objs[0] == pytest.approx(0.25)
    s = active_search(h)
    assert s.x[0] == pytest.approx(0.5) and s.objectives[0] == pytest.approx(0.25)


def test_lower_bound_held_against_lower_level():
    h = Hierarchy([ineq([[1.0, 0.0]], [1.0]), TaskLevel.equality(np.eye(2), [0.0, 0.0])])
    s = active_search(h)
    np.testing.assert_allclose(s.x, [1.0, 0.0], atol=1e-12)
    assert (1, 0) in s.active and (1, 0) in s.locked
    # positive multiplier: the row is needed against the pull of level 2
    assert s.lam[(1, 0)] > 0
    objs, _ = oracle_lex_solve(h)
    np.testing.assert_allclose(s.objectives, objs, atol=1e-12)


def test_prior_row_needed_by_middle_level_stays_locked():
    # level 2 leans on x1 >= 1, level 3 would like it released
    h = Hierarchy([ineq([[1.0, 0.0]], [1.0]),
                   TaskLevel.equality([[1.0, 0.0]], [0.0]),
                   TaskLevel.equality([[1.0, 0.0]], [5.0])])
    s = active_search(h)
    assert (1, 0) in s.locked and (1, 0) in s.active
    assert s.x[0] == pytest.approx(1.0)
    np.testing.assert_allclose(ewhqp_primal(h, s.active).x, s.x, atol=1e-12)


def test_equality_only_reduction():
    rng = np.random.default_rng(1)
    h = Hierarchy([TaskLevel.equality(rng.standard_normal((2, 3)), rng.standard_normal(2)),
                   TaskLevel.equality(rng.standard_normal((2, 3)), rng.standard_normal(2))])
    s = active_search(h)
    assert s.active == frozenset(normalize(h).all_ids())
    np.testing.assert_allclose(s.x, ewhqp_primal(h, s.active).x, atol=1e-12)
    objs, _ = oracle_lex_solve(h)
    np.testing.assert_allclose(s.objectives, objs, atol=1e-10)


def test_dual_zero_for_slack_free_level():
    rng = np.random.default_rng(2)
    h = Hierarchy([TaskLevel.equality(rng.standard_normal((2, 4)), rng.standard_normal(2))])
    sol = ewhqp_primal(h, {(1, 0), (1, 1)})
    lam = ewhqp_dual(h, {(1, 0), (1, 1)}, sol, 1)
    assert np.allclose(list(lam.values()), 0.0, atol=1e-12)


def test_dual_stationarity():
    for res in verify.check_whqp_invariance(np.random.default_rng(3), 40):
        assert res.ok, res.failures[:3]


def test_dual_invalid_level():
    h = Hierarchy([TaskLevel.equality([[1.0]], [1.0])])
    sol = ewhqp_primal(h, {(1, 0)})
    with pytest.raises(InvalidLevel):
        ewhqp_dual(h, {(1, 0)}, sol, 2)


def test_range_rows_split_and_respected():
    h = Hierarchy([ineq([[1.0]], [2.0], "range", hi=[3.0]), TaskLevel.equality([[1.0]], [10.0])])
    nh = normalize(h)
    assert nh.levels[0].A.shape == (2, 1)
    s = active_search(h)
    assert s.x[0] == pytest.approx(3.0)


def test_validation_errors():
    with pytest.raises(DimensionMismatch):
        Hierarchy([TaskLevel.equality(np.eye(2), [0, 0]), TaskLevel.equality(np.eye(3), [0, 0, 0])])
    with pytest.raises(ValueError):
        TaskLevel([[1.0]], [1.0], ("range",), None, None, [0.5])
    with pytest.raises(ValueError):
        TaskLevel(np.eye(2), [0, 0], ("ge", "ge"), [[2.0, 0.5], [0.5, 2.0]], (2,))
    with pytest.raises(ValueError):
        TaskLevel(np.eye(2), [0, 0], ("eq", "eq"), [[2.0, 0.5], [0.5, 2.0]], (1, 1))
    with pytest.raises(ValueError):
        ewhqp_primal(Hierarchy([TaskLevel.equality([[1.0]], [1.0])]), set())


def test_enumeration_bound():
    h = Hierarchy([ineq(np.ones((13, 1)), np.zeros(13))])
    with pytest.raises(EnumerationBoundExceeded):
        oracle_lex_solve(h)


def test_iteration_cap():
    h = Hierarchy([ineq([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]), TaskLevel.equality(np.eye(2), [0.0, 0.0])])
    with pytest.raises(IterationLimitExceeded):
        active_search(h, max_iter=1)


def test_cycle_error_is_runtime_error():
    assert issubclass(CycleDetected, RuntimeError)


def test_oracle_agreement_small_suite():
    for weighted in (True, False):
        for res in verify.check_whqp_oracle(np.random.default_rng(4), 60, weighted=weighted):
            assert res.ok, res.failures[:3]


def test_metric_does_not_change_objectives():
    rng = np.random.default_rng(5)
    for _ in range(30):
        h = verify.random_hierarchy(rng)
        M = verify.random_spd(rng, h.n, 1e3)
        a = level_objectives(h, active_search(h, M).x)
        b = level_objectives(h, active_search(h).x)
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)


def test_warm_start_gives_same_objectives():
    rng = np.random.default_rng(6)
    for _ in range(30):
        h = verify.random_hierarchy(rng)
        cold = active_search(h)
        warm = active_search(h, warm_start=cold.active)
        np.testing.assert_allclose(warm.objectives, cold.objectives, rtol=1e-8, atol=1e-10)


PROBLEM = """\
# two levels
n 2
level
weight_blocks 1 1
W diag 1 2
row ge 1 0 1
row le 0 1 -1

level
row eq 1 1 0
"""


def test_parse_and_format_round_trip():
    h = parse_problem(PROBLEM)
    assert h.n == 2 and len(h) == 2
    assert h.levels[0].sense == ("ge", "le")
    np.testing.assert_allclose(h.levels[0].W, np.diag([1.0, 2.0]))
    h2 = parse_problem(format_problem(h))
    for a, b in zip(h.levels, h2.levels):
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.b, b.b)
        assert a.sense == b.sense


@pytest.mark.parametrize("text,line", [
    ("n 2\nlevel\nrow eq 1 2\n", 3),
    ("n 2\nlevel\nrow bogus 1 2 3\n", 3),
    ("n 2\nrow eq 1 2 3\n", 2),
    ("n 1\nlevel\nW diag 1 2\nrow eq 1 1\n", 3),
    ("n 1\nlevel\nrow range 1 2 1\n", 2),
    ("level\nrow eq 1 1\n", 2),
    ("n x\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ParseError) as err:
        parse_problem(text)
    assert err.value.lineno == line


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lexicographic_optimality_property(seed):
    rng = np.random.default_rng(seed)
    h = verify.random_hierarchy(rng)
    s = active_search(h)
    objs, xo = oracle_lex_solve(h)
    np.testing.assert_allclose(s.objectives, objs, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(verify.slack_vector(h, s.x), verify.slack_vector(h, xo), atol=1e-8)
    assert s.locked <= s.active


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extra_level_keeps_higher_priorities(seed):
    rng = np.random.default_rng(seed)
    h = verify.random_hierarchy(rng, levels=int(rng.integers(1, 4)))
    extra = TaskLevel.equality(rng.standard_normal((2, h.n)), rng.standard_normal(2))
    a = level_objectives(h, active_search(h).x)
    b = level_objectives(Hierarchy(h.levels + [extra], h.n), active_search(Hierarchy(h.levels + [extra], h.n)).x)
    np.testing.assert_allclose(b[:-1], a, rtol=1e-8, atol=1e-10)
