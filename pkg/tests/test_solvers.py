import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subfw.core import ActiveSet, Atom, ContractError, StepKind, TraceRecord
from subfw.domains import FiniteAtoms, L1Ball, LatentGroupBall, make_overlapping_groups
from subfw.objectives import LeastSquares, QuadraticObjective
from subfw.solvers import (
    SolverConfig,
    checkpoint_every,
    compute_gaps,
    count_drops,
    max_step_progress_check,
    plan_step,
    solve,
    variant2_step,
)


def small_lasso(seed=0, n=30, d=40, radius=3.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    x = np.zeros(d)
    x[rng.choice(d, 4, replace=False)] = rng.choice([-1.0, 1.0], 4)
    y = X @ x + 0.1 * rng.standard_normal(n)
    return LeastSquares(X, y), L1Ball(d, radius)


def same_trace(a, b):
    assert len(a) == len(b)
    for r, q in zip(a, b):
        assert r.step == q.step and r.gamma == q.gamma and r.extra["atom"] == q.extra["atom"]
        assert r.objective == q.objective and r.support_size == q.support_size


# -- oracle equivalence -------------------------------------------------------


def test_rfw_with_full_sampling_is_fw():
    obj, ball = small_lasso()
    a = solve(obj, ball, SolverConfig("fw", max_iters=200, tol=0))
    b = solve(obj, ball, SolverConfig("rfw-v1", eta=1.0, max_iters=200, tol=0, seed=3))
    same_trace(a.trace, b.trace)
    np.testing.assert_array_equal(a.x, b.x)


def test_rafw_with_full_sampling_is_afw():
    obj, ball = small_lasso(1)
    a = solve(obj, ball, SolverConfig("afw", max_iters=300, tol=0))
    b = solve(obj, ball, SolverConfig("rafw", p=ball.n_units, max_iters=300, tol=0, seed=9))
    same_trace(a.trace, b.trace)
    np.testing.assert_array_equal(a.x, b.x)
    assert any(r.step in (StepKind.AWAY, StepKind.DROP, StepKind.BAD_DROP) for r in a.trace)


def naive_fw(X, y, radius, iters):
    """Textbook dense FW on the l1 ball with exact line search."""
    x = np.zeros(X.shape[1])
    g = X.T @ (X @ x - y)
    i = np.argmax(np.abs(g))
    x[i] = -radius * np.sign(g[i]) if g[i] != 0 else radius
    out = []
    for _ in range(iters):
        g = X.T @ (X @ x - y)
        i = np.argmax(np.abs(g))
        s = np.zeros_like(x)
        s[i] = -radius * np.sign(g[i]) if g[i] != 0 else radius
        d = s - x
        Xd = X @ d
        gamma = min(max(-(X @ x - y) @ Xd / (Xd @ Xd), 0.0), 1.0) if Xd @ Xd > 0 else 0.0
        x = x + gamma * d
        out.append(x.copy())
    return out


def test_fw_matches_naive_reference():
    obj, ball = small_lasso(2)
    iterates = []
    solve(obj, ball, SolverConfig("fw", max_iters=50, tol=0), callback=lambda t, a: iterates.append(a.iterate.copy()))
    ref = naive_fw(obj.op.XT.T, obj.y, ball.radius, 50)
    for mine, theirs in zip(iterates, ref):
        np.testing.assert_allclose(mine, theirs, atol=1e-10)


# -- step rules ---------------------------------------------------------------


@pytest.mark.parametrize("gap, gamma", [(3.0, 0.3), (15.0, 1.0), (-2.0, 0.0)])
def test_variant2_step(gap, gamma):
    got, raw = variant2_step(gap, 10.0)
    assert got == pytest.approx(gamma, abs=1e-15) and raw == gap / 10.0


def test_plan_step_rules():
    assert plan_step(1.0, 1.0, 3, 0.5) == ("fw", 1.0)
    assert plan_step(1.0, 5.0, 1, 1.0) == ("fw", 1.0)
    kind, gmax = plan_step(1.0, 2.0, 2, 0.25)
    assert kind == "away" and gmax == pytest.approx(1 / 3)


def test_checkpoint_schedule():
    assert checkpoint_every(0.5, 2) == 4
    assert checkpoint_every(0.05, 2) == 40
    assert checkpoint_every(1 / 3, 1) == 3
    obj, ball = small_lasso()
    res = solve(obj, ball, SolverConfig("rfw-v1", eta=0.5, max_iters=14, tol=0))
    assert [r.iter for r in res.trace if r.full_gap is not None] == [4, 8, 12, 13]


def test_cost_accounting_rfw():
    obj, ball = small_lasso()
    res = solve(obj, ball, SolverConfig("rfw-v1", eta=0.25, max_iters=9, tol=0))
    costs = [r.grad_coords_cum for r in res.trace]
    # x0 costs one full gradient, sampled steps 10 coordinates, checkpoints all 40
    steps = np.diff([40] + costs)
    assert steps.tolist() == [10] * 8 + [40]


# -- invariants on runs -------------------------------------------------------


@pytest.mark.parametrize("algo, kw", [("fw", {}), ("rfw-v1", {"eta": 0.2}), ("afw", {}), ("rafw", {"p": 5})])
def test_monotone_objective(algo, kw):
    obj, ball = small_lasso(4)
    res = solve(obj, ball, SolverConfig(algo, max_iters=400, tol=0, seed=1, **kw))
    f = [r.objective for r in res.trace] + [obj.value()]
    assert all(b <= a + 1e-10 * abs(a) for a, b in zip(f, f[1:]))


def test_variant2_never_moves_uphill_when_clipped():
    obj, ball = small_lasso(5)
    C = 4 * ball.radius**2 * obj.lipschitz_bound()
    res = solve(obj, ball, SolverConfig("rfw-v2", eta=0.1, curvature=C, max_iters=300, tol=0, seed=2))
    for r in res.trace:
        assert 0.0 <= r.gamma <= 1.0
        if r.raw_gamma <= 0:
            assert r.gamma == 0.0
    f = [r.objective for r in res.trace]
    # with C above the true curvature the quadratic model bounds f from above
    assert all(b <= a + 1e-10 * abs(a) for a, b in zip(f, f[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["fw", "rfw-v1", "afw", "rafw"]))
def test_iterates_stay_feasible(seed, algo):
    obj, ball = small_lasso(seed % 7, n=15, d=20, radius=1.5)
    kw = {"p": 3} if algo == "rafw" else ({"eta": 0.3} if algo == "rfw-v1" else {})
    worst = []
    res = solve(
        obj, ball, SolverConfig(algo, max_iters=150, tol=0, seed=seed, **kw),
        callback=lambda t, a: worst.append(np.abs(a.iterate).sum()),
    )
    assert max(worst) <= ball.radius + 1e-9
    assert abs(res.active.weight_sum() - 1) <= 1e-9


def test_lemma1_and_drop_bound_on_runs():
    for seed in range(5):
        obj, ball = small_lasso(seed)
        res = solve(obj, ball, SolverConfig("rafw", p=4, max_iters=500, tol=0, seed=seed))
        assert max_step_progress_check(res.trace)
        assert count_drops(res.trace) <= (len(res.trace) + 1) // 2
        assert all(r.partial_gap >= 0 for r in res.trace)


def test_singleton_support_forces_fw_step():
    obj, ball = small_lasso(6)
    res = solve(obj, ball, SolverConfig("rafw", p=2, max_iters=300, tol=0, seed=0))
    for r in res.trace:
        if r.support_size == 1:
            assert r.step in (StepKind.FW, StepKind.FW_FULL)


@pytest.mark.parametrize("start", range(5))
def test_rafw_reaches_vertex_optimum(start):
    c = np.zeros(5)
    c[2] = 1.0
    obj = QuadraticObjective(c)
    simplex = FiniteAtoms.simplex(5)
    x0 = ActiveSet.single(simplex.atoms[start], 5)
    res = solve(obj, simplex, SolverConfig("rafw", p=1, max_iters=200, tol=0, seed=start), x0=x0)
    assert obj.value(res.x) <= 1e-10
    assert res.active.support_size == 1


def test_early_stop_and_converged_flag():
    obj, ball = small_lasso(0, radius=0.5)
    res = solve(obj, ball, SolverConfig("afw", max_iters=5000, tol=1e-8))
    assert res.converged and res.trace[-1].full_gap <= 1e-8
    short = solve(obj, ball, SolverConfig("fw", max_iters=3, tol=0))
    assert not short.converged and len(short.trace) == 3


# -- gaps ---------------------------------------------------------------------


def test_compute_gaps_examples():
    g = np.array([1.0, -2.0, 0.5])
    x = np.array([0.2, 0.3, 0.5])
    s, v = Atom([1], [1.0]), Atom([0], [1.0])
    assert compute_gaps(g, s, s, x).partial_gap == 0.0
    rep = compute_gaps(g, s, v, x, full_atom=s)
    assert rep.pairwise_gap == rep.partial_gap == 3.0
    assert rep.away_gap == pytest.approx(1.0 - g @ x)
    assert rep.full_fw_gap == pytest.approx(g @ x + 2.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_partial_gap_below_pairwise_gap(seed):
    rng = np.random.default_rng(seed)
    simplex = FiniteAtoms.simplex(6)
    g = rng.standard_normal(6)
    active = ActiveSet(6, simplex.atoms[:3], rng.dirichlet(np.ones(3)))
    sample = rng.choice(6, 2, replace=False)
    pool = [simplex.atoms[i] for i in sample] + active.atoms()
    s = min(pool, key=lambda a: a.dot(g))
    v = max(active.atoms(), key=lambda a: a.dot(g))
    full = min(simplex.atoms, key=lambda a: a.dot(g))
    rep = compute_gaps(g, s, v, active.iterate, full_atom=full)
    assert rep.partial_gap <= rep.pairwise_gap + 1e-15


def test_progress_check_rejects_corrupted_trace():
    obj, ball = small_lasso()
    res = solve(obj, ball, SolverConfig("rafw", p=3, max_iters=50, tol=0))
    assert max_step_progress_check(res.trace)
    bad = list(res.trace)
    r = bad[10]
    bad[10] = TraceRecord(r.iter, r.step, r.gamma, r.gamma_max, -1e-3, r.away_gap, r.full_gap, r.objective, r.support_size, r.grad_coords_cum)
    assert not max_step_progress_check(bad)


def test_progress_check_rebuilds_descent_from_csv(tmp_path):
    from subfw.core import read_trace_csv, write_trace_csv

    obj, ball = small_lasso(3)
    res = solve(obj, ball, SolverConfig("rafw", p=3, max_iters=200, tol=0))
    write_trace_csv(res.trace, tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv")
    assert all(math.isnan(r.descent) for r in back)
    assert max_step_progress_check(back)


# -- contracts ----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ContractError):
        SolverConfig("rfw-v2", eta=0.5)
    with pytest.raises(ContractError):
        SolverConfig("rafw", p=0)
    with pytest.raises(ContractError):
        SolverConfig("rfw-v1", eta=0.5, p=2)
    with pytest.raises(ContractError):
        SolverConfig("nope")
    with pytest.raises(ContractError):
        SolverConfig("fw", max_iters=0)


def lgl_problem(seed=0):
    rng = np.random.default_rng(seed)
    groups = make_overlapping_groups(30, 5, 2)
    X = rng.standard_normal((20, 30))
    return LeastSquares(X, rng.standard_normal(20)), LatentGroupBall(groups, 2.0)


@pytest.mark.parametrize("algo", ["afw", "rafw"])
def test_away_solvers_refuse_lgl(algo):
    obj, ball = lgl_problem()
    with pytest.raises(ContractError, match="finite set"):
        solve(obj, ball, SolverConfig(algo, max_iters=5))


def test_lgl_rfw_feasible_and_monotone():
    obj, ball = lgl_problem(1)
    res = solve(obj, ball, SolverConfig("rfw-v1", eta=0.3, max_iters=200, tol=0, seed=4))
    for atom in res.active.atoms():
        assert np.linalg.norm(atom.values) <= ball.radius + 1e-9
    assert abs(res.active.weight_sum() - 1) <= 1e-9
    f = [r.objective for r in res.trace]
    assert all(b <= a + 1e-10 * abs(a) for a, b in zip(f, f[1:]))


def test_infeasible_start_rejected():
    obj, ball = small_lasso()
    far = ActiveSet.single(Atom([0], [10.0]), 40)
    with pytest.raises(ContractError):
        solve(obj, ball, SolverConfig("fw", max_iters=2), x0=far)


def test_runs_are_deterministic():
    obj, ball = small_lasso()
    a = solve(obj, ball, SolverConfig("rafw", p=3, max_iters=100, tol=0, seed=11))
    b = solve(obj, ball, SolverConfig("rafw", p=3, max_iters=100, tol=0, seed=11))
    same_trace(a.trace, b.trace)
