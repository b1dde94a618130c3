"""Monte-Carlo and analytic checks of the randomized oracles' guarantees.

Each ``check_*`` function returns a JSON-ready report
``{claim, trials, estimate, std_error, bound, pass}`` (plus a ``details``
dict).  ``negative_control=True`` swaps in a deliberately false version of the
claim, which the checker is expected to reject.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .core import ActiveSet, Atom, ContractError, ConvergenceBoundInputs, apply_away_step
from .domains import FiniteAtoms, L1Ball, SubsampleSpec, _scores
from .objectives import QuadraticObjective, curvature_upper_bound
from .solvers import SolverConfig, count_drops, max_step_progress_check, plan_step, solve

EXACT_LIMIT = 5_000_000
BLOCK = 100_000


@dataclass
class MonteCarloResult:
    trials: int
    successes: int
    estimate: float
    std_error: float
    lower_bound_claimed: float
    exact: Optional[float] = None
    inconclusive: bool = False

    @classmethod
    def from_counts(cls, successes, trials, bound, exact=None):
        if trials == 0:
            return cls(0, 0, float("nan"), float("nan"), bound, exact, inconclusive=True)
        est = successes / trials
        return cls(trials, successes, est, math.sqrt(est * (1.0 - est) / trials), bound, exact)

    def within(self, value, sigmas=3.0):
        return abs(self.estimate - value) <= sigmas * self.std_error

    def meets_bound(self, sigmas=3.0):
        return not self.inconclusive and self.estimate >= self.lower_bound_claimed - sigmas * self.std_error


def _block_rngs(seed, trials):
    """Per-block generators seeded ``seed XOR block index``."""
    for b, lo in enumerate(range(0, trials, BLOCK)):
        yield np.random.default_rng(int(seed) ^ b), min(BLOCK, trials - lo)


# -- Lemma 2 ------------------------------------------------------------------


def exact_subset_max_probability(values, p):
    """Fraction of the ``C(m, p)`` subsets whose maximum is the global maximum."""
    v = np.asarray(values, dtype=float)
    m = v.size
    is_max = v == v.max()
    combos = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(m), p)),
        dtype=np.int16,
        count=math.comb(m, p) * p,
    ).reshape(-1, p)
    return float(np.mean(is_max[combos].any(axis=1)))


def subset_max_probability(values, p, trials, seed, exact_limit=EXACT_LIMIT):
    """Probability that a uniform ``p``-subset contains a global maximizer.

    The Monte-Carlo estimate comes with the exact value whenever the number
    of subsets is at most ``exact_limit``.
    """
    v = np.asarray(values, dtype=float)
    m = v.size
    if not 1 <= p <= m:
        raise ContractError("need 1 <= p <= m")
    if trials < 1:
        raise ContractError("need at least one trial")
    is_max = v == v.max()
    hits = 0
    for rng, n in _block_rngs(seed, trials):
        keys = rng.random((n, m))
        picked = np.argpartition(keys, p - 1, axis=1)[:, :p] if p < m else np.broadcast_to(np.arange(m), (n, m))
        hits += int(is_max[picked].any(axis=1).sum())
    exact = exact_subset_max_probability(v, p) if math.comb(m, p) <= exact_limit else None
    return MonteCarloResult.from_counts(hits, trials, p / m, exact)


# -- Lemma 3 ------------------------------------------------------------------


def conditional_match_probability(problem, state, p, trials, seed):
    """P(sampled pairwise gap equals the full one | no bad drop), from a frozen state.

    Parameters
    ----------
    problem : tuple
        ``(objective, domain)`` with a finite domain of at most 30 units.
    state : ActiveSet
        The frozen ``(x_t, S_t)``.
    p : int
        Atoms sampled outside the support per iteration.
    """
    obj, domain = problem
    if not domain.is_finite or domain.n_units > 30:
        raise ContractError("need a finite domain with at most 30 atoms")
    obj.set_iterate(state.iterate)
    g = obj.gradient()
    support = state.atoms()
    sscores = state.inner_products(g)
    vpos = int(np.argmax(sscores))
    v, v_score = support[vpos], float(sscores[vpos])
    alpha = state.weight_of(v)
    c = state.coords()
    gdotx = float(np.dot(g[c], state.iterate[c]))
    full_score = float(_scores([domain.full_lmo(g)], g)[0])
    eligible = domain.eligible_units(state)
    spec = SubsampleSpec.count(p, seed)
    m = min(p, eligible.size)
    away_z = None
    outcome = {}
    valid = matched = 0
    for _ in range(trials):
        units = eligible[spec.draw(eligible.size, m)] if m else eligible
        s, s_score = domain.candidate_lmo(g, units, support, sscores)
        if s.key not in outcome:
            direction, gmax = plan_step(gdotx - s_score, v_score - gdotx, state.support_size, alpha)
            if direction == "away":
                if away_z is None:
                    q = obj.iterate_image() - obj.atom_image(v)
                    gamma = obj.line_search(q, gmax)
                    _, kind = apply_away_step(state.copy(), v, gamma, gmax)
                    away_z = kind.z
                z = away_z
            else:
                z = 1
            outcome[s.key] = (z, s_score == full_score)
        z, hit = outcome[s.key]
        valid += z
        matched += z and hit
    bound = (min(p, domain.n_units) / domain.n_units) ** 2
    return MonteCarloResult.from_counts(matched, valid, bound)


# -- rate bounds --------------------------------------------------------------


def theorem1_bound(inputs, T):
    """Sublinear bound ``2 (C + eps0) / (eta T + 2)``."""
    if T < 0:
        raise ContractError("T must be non-negative")
    return 2.0 * (inputs.curvature + inputs.initial_gap) / (inputs.eta * T + 2.0)


def theorem2_bound(inputs, T):
    """Linear-rate factor ``(1 - eta^2 rho)^max(0, floor((T - s) / 2))`` relative to h_0."""
    if inputs.geometric_ratio is None:
        raise ContractError("the linear bound needs a geometric ratio")
    k = max(0, (T - inputs.initial_support) // 2)
    return (1.0 - inputs.eta**2 * inputs.geometric_ratio) ** k


def empirical_rate_check(traces, bound_fn, f_star, horizon=None, rtol=1e-12):
    """Compare the mean suboptimality across runs with ``bound_fn(T)`` for every T.

    Parameters
    ----------
    traces : list of list of TraceRecord
    bound_fn : callable
        Maps T to the bound on ``E[f(x_T)] - f_star``.
    f_star : float
        Optimal value; required.
    horizon : int, optional
        Largest T to check (default: shortest trace).
    rtol : float
        Relative slack absorbing rounding in the mean (e.g. at T = 0, where
        mean and bound are the same number).

    Returns
    -------
    dict
        ``violations`` (list of T), ``mean_h`` and ``bound`` arrays.
    """
    if f_star is None or not math.isfinite(f_star):
        raise ContractError("empirical rate checks need a known optimal value")
    if not traces:
        raise ContractError("no traces")
    n = min(len(t) for t in traces)
    if horizon is not None:
        n = min(n, horizon + 1)
    h = np.array([[r.objective - f_star for r in t[:n]] for t in traces])
    mean_h = h.mean(axis=0)
    bound = np.array([bound_fn(T) for T in range(n)])
    violations = [int(T) for T in np.flatnonzero(mean_h > bound * (1.0 + rtol))]
    return {"violations": violations, "mean_h": mean_h, "bound": bound}


def fit_linear_rate(values):
    """Least-squares line through ``log10(values)``; returns (slope, intercept, r2)."""
    y = np.log10(np.asarray(values, dtype=float))
    x = np.arange(y.size, dtype=float)
    if y.size < 3:
        raise ContractError("need at least three points")
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


def final_two_thirds_fit(trace, level=None):
    """Fit the log full-gap at checkpoints over the final two-thirds of a trajectory.

    With ``level``, the trajectory is cut at the first checkpoint at or below
    it.  Returns (slope per iteration, r2).
    """
    pts = [(r.iter, r.full_gap) for r in trace if r.full_gap is not None and r.full_gap > 0]
    if level is not None:
        cut = next((k for k, (_, g) in enumerate(pts) if g <= level), len(pts) - 1)
        pts = pts[: cut + 1]
    pts = pts[len(pts) // 3 :]
    if len(pts) < 3:
        raise ContractError("trajectory too short to fit")
    it, gap = map(np.asarray, zip(*pts))
    fit = stats.linregress(it.astype(float), np.log10(gap))
    return float(fit.slope), float(fit.rvalue**2)


# -- problem builders ---------------------------------------------------------


def random_active_set(domain, size, rng):
    """Active set on ``size`` distinct random atoms with Dirichlet weights."""
    if isinstance(domain, L1Ball):
        coords = rng.choice(domain.dim, size=size, replace=False)
        signs = rng.choice([-1.0, 1.0], size=size)
        atoms = [Atom([int(i)], [s * domain.radius]) for i, s in zip(coords, signs)]
    else:
        atoms = [domain.atoms[k] for k in rng.choice(domain.n_units, size=size, replace=False)]
    w = rng.dirichlet(np.ones(size)) if size > 1 else np.ones(1)
    w = w / math.fsum(w)
    return ActiveSet(domain.dim, atoms, w)


def _lasso(seed):
    # imported lazily: bench depends on this module's runners
    from .bench import LassoScenario, generate_lasso

    obj, _ = generate_lasso(LassoScenario(), seed)
    return obj, L1Ball(obj.dim, LassoScenario().radius)


def theorem1_problem(d=20, radius=1.0, seed=0, nnz=3, fill=0.95):
    """Quadratic ``1/2 ||x - c||^2`` on the l1 ball; ``c`` has ``nnz`` entries and ``||c||_1 = fill * radius``.

    A sparse center close to the boundary keeps the iterates zig-zagging for a
    while, so the sublinear bound is reasonably tight over the first hundred
    iterations (a loose bound would make the negative control vacuous).
    """
    rng = np.random.default_rng(seed)
    c = np.zeros(d)
    c[:nnz] = rng.standard_normal(nnz)
    c *= fill * radius / np.abs(c).sum()
    return QuadraticObjective(c), L1Ball(d, radius)


def lemma3_problem():
    """Five-atom simplex quadratic with a frozen two-atom state."""
    c = np.array([0.05, 0.3, 0.25, 0.2, 0.2])
    domain = FiniteAtoms.simplex(5)
    state = ActiveSet(5, [domain.atoms[0], domain.atoms[1]], [0.6, 0.4])
    return QuadraticObjective(c), domain, state


def theorem2_problem(d=20, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.dirichlet(np.ones(d))
    return QuadraticObjective(c), FiniteAtoms.simplex(d)


def _report(claim, trials, estimate, std_error, bound, passed, **details):
    return {
        "claim": claim,
        "trials": int(trials),
        "estimate": float(estimate),
        "std_error": float(std_error),
        "bound": float(bound),
        "pass": bool(passed),
        "details": details,
    }


# -- claim runners ------------------------------------------------------------


def check_lemma1(seeds=5, max_iters=1000, seed=0, eta=0.25, negative_control=False):
    """Every RAFW iteration on lasso instances satisfies the descent inequality."""
    traces = []
    for k in range(seeds):
        obj, dom = _lasso(seed + k)
        res = solve(obj, dom, SolverConfig("rafw", eta=eta, max_iters=max_iters, tol=0.0, seed=seed + k))
        traces.append(res.trace)
    if negative_control:
        # plant a negative pairwise gap in the middle of the first run
        bad = traces[0][len(traces[0]) // 2]
        bad.partial_gap = -abs(bad.partial_gap) - 1.0
    ok = [max_step_progress_check([r]) for t in traces for r in t]
    return _report(
        "lemma1", len(ok), float(np.mean(ok)), 0.0, 1.0, all(ok), runs=seeds, violations=len(ok) - sum(ok)
    )


def check_lemma2(m=10, p=3, trials=100_000, seed=0, negative_control=False):
    rng = np.random.default_rng(seed)
    values = rng.permutation(m).astype(float)
    res = subset_max_probability(values, p, trials, seed)
    bound = p / m + (0.1 if negative_control else 0.0)
    res.lower_bound_claimed = bound
    ok = res.meets_bound()
    if res.exact is not None:
        ok = ok and res.exact >= bound - 1e-12 and res.within(res.exact)
    return _report(
        "lemma2", trials, res.estimate, res.std_error, bound, ok, m=m, p=p, exact=res.exact
    )


def check_lemma3(p=1, trials=100_000, seed=0, negative_control=False):
    obj, domain, state = lemma3_problem()
    res = conditional_match_probability((obj, domain), state, p, trials, seed)
    if negative_control:
        res.lower_bound_claimed = 1.0
    ok = res.meets_bound()
    return _report(
        "lemma3",
        res.trials,
        res.estimate,
        res.std_error,
        res.lower_bound_claimed,
        ok,
        p=p,
        atoms=domain.n_units,
        sampled_trials=trials,
        inconclusive=res.inconclusive,
    )


def theorem1_runs(etas=(0.2, 0.5, 1.0), seeds=200, horizon=100, seed=0, algorithm="rfw-v2"):
    """Traces of RFW on the bound-check quadratic, keyed by eta.

    Variant 2 steps with the same curvature bound the check uses.
    """
    obj, dom = theorem1_problem()
    curvature = curvature_upper_bound(obj, dom.diameter)
    out = {}
    for eta in etas:
        cfg = dict(eta=eta, max_iters=horizon + 1, tol=0.0, curvature=curvature)
        out[eta] = [solve(obj, dom, SolverConfig(algorithm, seed=seed + k, **cfg)).trace for k in range(seeds)]
    return obj, dom, out


def check_theorem1(etas=(0.2, 0.5, 1.0), seeds=200, horizon=100, seed=0, negative_control=False, runs=None):
    obj, dom, runs = runs or theorem1_runs(etas, seeds, horizon, seed)
    curvature = curvature_upper_bound(obj, dom.diameter)
    if negative_control:
        curvature /= 100.0
    eps0 = next(iter(runs.values()))[0][0].objective
    violations, worst = {}, 0.0
    for eta, traces in runs.items():
        inputs = ConvergenceBoundInputs(curvature=curvature, eta=eta, initial_gap=eps0)
        rep = empirical_rate_check(traces, lambda T: theorem1_bound(inputs, T), 0.0, horizon)
        violations[str(eta)] = rep["violations"]
        worst = max(worst, float(np.max(rep["mean_h"] / rep["bound"])))
    total = sum(len(v) for v in violations.values())
    checked = sum(min(len(t[0]), horizon + 1) for t in runs.values())
    return _report(
        "theorem1",
        seeds * len(runs),
        worst,
        0.0,
        1.0,
        total == 0,
        curvature=curvature,
        initial_gap=eps0,
        violations=violations,
        points_checked=checked,
    )


def fit_geometric_ratio(trace, f_star=0.0, s=1, floor=1e-12):
    """Largest rho for which an AFW trace obeys ``h_T / h_0 <= (1 - rho)^floor((T - s)/2)``.

    A fitted stand-in for the geometric constants, not a certified value.
    """
    h = np.array([r.objective - f_star for r in trace])
    rho = 1.0
    for T in range(s + 2, h.size):
        ratio = h[T] / h[0]
        if ratio <= floor:
            break
        k = (T - s) // 2
        rho = min(rho, 1.0 - ratio ** (1.0 / k))
    return min(max(rho, 1e-9), 0.999)


def check_theorem2(seeds=50, p=5, horizon=150, seed=0, negative_control=False):
    obj, dom = theorem2_problem()
    afw = solve(obj, dom, SolverConfig("afw", max_iters=horizon + 1, tol=0.0))
    rho = fit_geometric_ratio(afw.trace)
    eta = p / dom.n_units
    traces = [
        solve(obj, dom, SolverConfig("rafw", p=p, max_iters=horizon + 1, tol=0.0, seed=seed + k)).trace
        for k in range(seeds)
    ]
    h0 = traces[0][0].objective
    if negative_control:
        # claim a contraction ten times faster than the fit, with no eta^2 penalty
        inputs = ConvergenceBoundInputs(1.0, 1.0, h0, geometric_ratio=min(0.999, 1.0 - (1.0 - rho) ** 10))
    else:
        inputs = ConvergenceBoundInputs(1.0, eta, h0, geometric_ratio=rho)
    # stop where the runs reach the floating-point floor
    live = [T for T in range(horizon + 1) if np.mean([t[T].objective for t in traces]) > 1e-12 * h0]
    rep = empirical_rate_check(traces, lambda T: h0 * theorem2_bound(inputs, T), 0.0, live[-1])
    worst = float(np.max(rep["mean_h"] / rep["bound"]))
    return _report(
        "theorem2",
        seeds,
        worst,
        0.0,
        1.0,
        not rep["violations"],
        fitted_rho=float(rho),
        eta=eta,
        violations=rep["violations"],
        note="rho is fitted from a deterministic AFW run, not computed from geometric constants",
    )


def dropbound_runs(seeds=50, max_iters=1000, seed=0, sizes=(1, 5, 20), eta=0.25):
    """RAFW lasso runs from random starts with support sizes cycling through ``sizes``."""
    out = []
    for k in range(seeds):
        obj, dom = _lasso(seed + k)
        s = sizes[k % len(sizes)]
        x0 = random_active_set(dom, s, np.random.default_rng(seed + k))
        res = solve(obj, dom, SolverConfig("rafw", eta=eta, max_iters=max_iters, tol=0.0, seed=seed + k), x0=x0)
        out.append((s, res.trace))
    return out


def check_dropbound(seeds=50, max_iters=1000, seed=0, negative_control=False, runs=None):
    runs = runs or dropbound_runs(seeds, max_iters, seed)
    bad, worst = [], 0.0
    for k, (s, trace) in enumerate(runs):
        T = len(trace)
        bound = s // 2 if negative_control else (T + s) // 2
        drops = count_drops(trace)
        worst = max(worst, drops / max(bound, 1))
        if drops > bound:
            bad.append(k)
    n = len(runs)
    return _report("dropbound", n, (n - len(bad)) / n, 0.0, 1.0, not bad, failing_runs=bad, worst_ratio=worst)


CLAIMS = {
    "lemma1": check_lemma1,
    "lemma2": check_lemma2,
    "lemma3": check_lemma3,
    "theorem1": check_theorem1,
    "theorem2": check_theorem2,
    "dropbound": check_dropbound,
}
