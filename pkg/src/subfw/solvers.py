"""Frank-Wolfe solvers with full and subsampled linear minimization oracles.

``run_fw`` and ``run_afw`` are the deterministic baselines; ``run_rfw``
(Variants 1 and 2) and ``run_rafw`` subsample the atoms.  All four work on a
least-squares objective from :mod:`subfw.objectives` whose tracked residual
makes ``<grad f(x), x>`` and every exact line search cheap, so the only
gradient coordinates a randomized iteration pays for are the sampled ones
(plus the support's coordinates for RAFW).
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ActiveSet,
    ContractError,
    InvariantError,
    StepKind,
    TraceRecord,
    apply_away_step,
    apply_fw_step,
)
from .domains import SubsampleSpec, _scores

ALGORITHMS = ("fw", "rfw-v1", "rfw-v2", "afw", "rafw")
RESYNC_EVERY = 1000
LEMMA1_TOL = 1e-12


@dataclass
class SolverConfig:
    """Solver settings.

    Parameters
    ----------
    algorithm : str
        One of ``fw``, ``rfw-v1``, ``rfw-v2``, ``afw``, ``rafw``.
    eta, p : float, int, optional
        Subsampling rate or count.  RFW accepts either (default ``eta=1``);
        RAFW needs ``p`` or derives it as ``max(1, floor(eta * |A|))``.
    max_iters : int
        Iteration budget T.
    tol : float
        Stop once a full FW gap at or below ``tol`` is observed.
    checkpoint_k : int
        Randomized solvers compute the full gap every ``k * floor(1/eta)``
        iterations.
    curvature : float, optional
        Curvature bound used as the step scale of ``rfw-v2``.
    seed : int
        Seed of the run's only random generator.
    """

    algorithm: str
    eta: Optional[float] = None
    p: Optional[int] = None
    max_iters: int = 1000
    tol: float = 1e-6
    checkpoint_k: int = 2
    curvature: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if self.tol < 0:
            raise ContractError("tol must be non-negative")
        if self.checkpoint_k < 1:
            raise ContractError("checkpoint_k must be at least 1")
        if self.eta is not None and self.p is not None:
            raise ContractError("give eta or p, not both")
        if self.p is not None and (int(self.p) != self.p or self.p < 1):
            raise ContractError("p must be a positive integer")
        if self.eta is not None and not 0.0 < self.eta <= 1.0:
            raise ContractError("eta must lie in (0, 1]")
        if self.algorithm == "rfw-v2" and not (self.curvature is not None and self.curvature > 0):
            raise ContractError("rfw-v2 needs a positive curvature bound")

    def subsample(self):
        seed = int(self.seed)
        if self.p is not None:
            return SubsampleSpec.count(int(self.p), seed)
        return SubsampleSpec.rate(1.0 if self.eta is None else self.eta, seed)


@dataclass
class SolveResult:
    active: ActiveSet
    trace: list
    converged: bool
    initial_objective: float
    extra: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.active.iterate.copy()

    @property
    def last_full_gap(self):
        for r in reversed(self.trace):
            if r.full_gap is not None:
                return r.full_gap
        return None


@dataclass
class GapReport:
    partial_gap: float
    away_gap: float
    pairwise_gap: Optional[float] = None
    full_fw_gap: Optional[float] = None


def compute_gaps(gradient, s_t, v_t, x_t, full_atom=None):
    """Pairwise, away and (optionally) full gaps at ``x_t``.

    ``partial_gap = <-g, s_t - v_t>``, ``away_gap = <-g, x_t - v_t>``; with
    ``full_atom`` also ``pairwise_gap = <-g, full_atom - v_t>`` and
    ``full_fw_gap = <-g, full_atom - x_t>``.
    """
    g = np.asarray(gradient, dtype=float)
    gx = float(np.dot(g, x_t))
    sv, vv = s_t.dot(g), v_t.dot(g)
    rep = GapReport(partial_gap=vv - sv, away_gap=vv - gx)
    if full_atom is not None:
        fv = full_atom.dot(g)
        rep.pairwise_gap = vv - fv
        rep.full_fw_gap = gx - fv
    return rep


def max_step_progress_check(trace, tol=LEMMA1_TOL):
    """True iff every record has ``g_t >= 0`` and ``<-grad, d_t> >= g_t / 2``.

    Uses the recorded descent when present; otherwise (a trace read back from
    CSV) it is rebuilt from the gaps and the step kind.
    """
    for r in trace:
        g = r.partial_gap
        if not g >= -tol:
            return False
        descent = r.descent
        if math.isnan(descent):
            descent = g - r.away_gap if r.step in (StepKind.FW, StepKind.FW_FULL) else r.away_gap
        if not descent >= 0.5 * g - tol:
            return False
    return True


def count_drops(trace):
    return sum(1 for r in trace if r.step.is_drop)


# -- shared pieces ------------------------------------------------------------


def initial_active_set(obj, domain):
    """Single atom from one full oracle call at ``x = 0``; returns (active, coords charged)."""
    obj.set_iterate(np.zeros(obj.dim))
    atom = domain.full_lmo(obj.gradient())
    return ActiveSet.single(atom, obj.dim), obj.dim


def _start(obj, domain, x0):
    if x0 is None:
        active, cost = initial_active_set(obj, domain)
    else:
        active, cost = x0.copy(), 0
        if active.dim != obj.dim:
            raise ContractError("x0 dimension does not match the objective")
        active.check()
        if hasattr(domain, "contains") and not domain.contains(active.iterate):
            raise ContractError("x0 lies outside the domain")
    obj.set_iterate(active.iterate)
    return active, cost


def _gdotx(g, active):
    c = active.coords()
    return float(np.dot(g[c], active.iterate[c]))


def _score(atom, g):
    return float(_scores([atom], g)[0])


def checkpoint_every(eta, k):
    return int(k) * int(math.floor(1.0 / eta + 1e-12))


def _is_checkpoint(t, every, T):
    return (t > 0 and t % every == 0) or t == T - 1


def plan_step(fw_gap, away_gap, support_size, away_weight):
    """FW-versus-away decision; returns ``("fw", 1.0)`` or ``("away", gamma_max)``.

    Ties go to the FW direction, and a singleton support always takes it.
    """
    if support_size == 1 or fw_gap >= away_gap:
        return "fw", 1.0
    if away_weight >= 1.0:
        raise InvariantError("away direction chosen on an atom of weight one")
    return "away", away_weight / (1.0 - away_weight)


def variant2_step(gap, curvature):
    """Curvature-scaled step ``clip(gap / C, 0, 1)``; also returns the raw ratio."""
    raw = gap / curvature
    return min(max(raw, 0.0), 1.0), raw


def _fw_image(obj, s):
    return obj.atom_image(s) - obj.iterate_image()


def _away_image(obj, v):
    return obj.iterate_image() - obj.atom_image(v)


def _resync(obj, active, t):
    if (t + 1) % RESYNC_EVERY == 0:
        active.recompute_iterate()
        obj.set_iterate(active.iterate)


def _take_away_step(obj, active, step, v, fw_gap, away_gap, s):
    """Line search and update for a planned step; returns (kind, gamma, gamma_max, descent, atom)."""
    direction, gamma_max = step
    if direction == "fw":
        q = _fw_image(obj, s)
        gamma = obj.line_search(q, 1.0)
        obj.update_residual(None, gamma, image=q)
        apply_fw_step(active, s, gamma)
        kind = StepKind.FW_FULL if gamma == 1.0 else StepKind.FW
        return kind, gamma, 1.0, fw_gap, s
    q = _away_image(obj, v)
    gamma = obj.line_search(q, gamma_max)
    obj.update_residual(None, gamma, image=q)
    _, kind = apply_away_step(active, v, gamma, gamma_max)
    return kind, gamma, gamma_max, away_gap, v


def _callback(callback, t, active):
    if callback is not None:
        callback(t, active)


# -- deterministic baselines --------------------------------------------------


def run_fw(obj, domain, config, x0=None, callback=None):
    """Frank-Wolfe with exact line search and a full oracle every iteration."""
    active, cost = _start(obj, domain, x0)
    f0 = obj.value()
    trace, converged = [], False
    T = config.max_iters
    for t in range(T):
        g = obj.gradient()
        cost += obj.dim
        f = obj.value()
        gdotx = obj.grad_dot_iterate()
        s = domain.full_lmo(g)
        gap = gdotx - _score(s, g)
        q = _fw_image(obj, s)
        gamma = obj.line_search(q, 1.0)
        size = active.support_size
        obj.update_residual(None, gamma, image=q)
        apply_fw_step(active, s, gamma)
        kind = StepKind.FW_FULL if gamma == 1.0 else StepKind.FW
        trace.append(TraceRecord(t, kind, gamma, 1.0, gap, float("nan"), gap, f, size, cost, descent=gap, extra={"atom": s.key}))
        _resync(obj, active, t)
        _callback(callback, t, active)
        if gap <= config.tol:
            converged = True
            break
    return SolveResult(active, trace, converged, f0)


def run_afw(obj, domain, config, x0=None, callback=None):
    """Away-steps Frank-Wolfe with a full oracle every iteration."""
    if not domain.is_finite:
        raise ContractError("away steps need a finite set of atoms; the lgl domain is a continuous family")
    active, cost = _start(obj, domain, x0)
    f0 = obj.value()
    trace, converged = [], False
    for t in range(config.max_iters):
        g = obj.gradient()
        cost += obj.dim
        f = obj.value()
        gdotx = _gdotx(g, active)
        s = domain.full_lmo(g)
        s_score = _score(s, g)
        v, alpha, v_score = active.away_atom(g)
        fw_gap, away_gap = gdotx - s_score, v_score - gdotx
        size = active.support_size
        step = plan_step(fw_gap, away_gap, size, alpha)
        kind, gamma, gmax, descent, moved = _take_away_step(obj, active, step, v, fw_gap, away_gap, s)
        trace.append(
            TraceRecord(t, kind, gamma, gmax, v_score - s_score, away_gap, fw_gap, f, size, cost, descent=descent, extra={"atom": moved.key})
        )
        _resync(obj, active, t)
        _callback(callback, t, active)
        if fw_gap <= config.tol:
            converged = True
            break
    return SolveResult(active, trace, converged, f0)


# -- randomized solvers -------------------------------------------------------


def run_rfw(obj, domain, config, x0=None, callback=None):
    """Randomized Frank-Wolfe (Variant 1: line search, Variant 2: curvature step).

    Each iteration draws ``m = max(1, floor(eta |A|))`` sampling units,
    evaluates the gradient only on their coordinates and moves toward the best
    sampled atom.  Every ``k floor(1/eta)`` iterations, and at the last
    iteration, the full gradient is computed (and charged) to record the full
    FW gap and test the stopping rule.

    Returns
    -------
    SolveResult
    """
    if config.algorithm not in ("rfw-v1", "rfw-v2"):
        raise ContractError(f"run_rfw cannot run {config.algorithm!r}")
    variant2 = config.algorithm == "rfw-v2"
    spec = config.subsample()
    active, cost = _start(obj, domain, x0)
    f0 = obj.value()
    every = checkpoint_every(spec.eta(domain.n_units), config.checkpoint_k)
    trace, converged = [], False
    T = config.max_iters
    for t in range(T):
        f = obj.value()
        gdotx = obj.grad_dot_iterate()
        full_gap = None
        if _is_checkpoint(t, every, T):
            g = obj.gradient()
            cost += obj.dim
            full_gap = gdotx - _score(domain.full_lmo(g), g)
            provider = g.__getitem__
        else:
            provider = _counting_provider(obj)
        s, coords, vals = domain.sampled_lmo(provider, spec)
        if full_gap is None:
            cost += coords.size
        view = np.full(obj.dim, np.nan)
        view[coords] = vals
        gap = gdotx - _score(s, view)
        q = _fw_image(obj, s)
        raw = None
        if variant2:
            gamma, raw = variant2_step(gap, config.curvature)
        else:
            gamma = obj.line_search(q, 1.0)
        size = active.support_size
        obj.update_residual(None, gamma, image=q)
        apply_fw_step(active, s, gamma)
        kind = StepKind.FW_FULL if gamma == 1.0 else StepKind.FW
        trace.append(
            TraceRecord(t, kind, gamma, 1.0, gap, float("nan"), full_gap, f, size, cost, descent=gap, raw_gamma=raw, extra={"atom": s.key})
        )
        _resync(obj, active, t)
        _callback(callback, t, active)
        if full_gap is not None and full_gap <= config.tol:
            converged = True
            break
    return SolveResult(active, trace, converged, f0)


def _counting_provider(obj):
    def provider(coords):
        vals, _ = obj.partial_gradient(coords)
        return vals

    return provider


def rafw_sample_size(config, domain):
    """Number p of atoms sampled per RAFW iteration."""
    if config.p is not None:
        return int(config.p)
    eta = 1.0 if config.eta is None else config.eta
    return SubsampleSpec.rate(eta).size(domain.n_units)


def run_rafw(obj, domain, config, x0=None, callback=None):
    """Randomized away-steps Frank-Wolfe.

    Each iteration samples ``min(p, |A \\ S_t|)`` atoms outside the support,
    runs the FW oracle over them together with the support and the away oracle
    over the support, and takes whichever direction promises more decrease.
    The gradient is evaluated on the sampled atoms' coordinates and the
    support's coordinates only.

    Raises
    ------
    ContractError
        On domains that are not a finite atom family (the lgl ball).
    """
    if not domain.is_finite:
        raise ContractError("RAFW needs a finite set of atoms; the lgl domain is a continuous family")
    p = rafw_sample_size(config, domain)
    spec = SubsampleSpec.count(p, int(config.seed))
    active, cost = _start(obj, domain, x0)
    f0 = obj.value()
    every = checkpoint_every(min(p, domain.n_units) / domain.n_units, config.checkpoint_k)
    trace, converged = [], False
    T = config.max_iters
    for t in range(T):
        f = obj.value()
        eligible = domain.eligible_units(active)
        units = eligible[spec.draw(eligible.size, min(p, eligible.size))] if eligible.size else eligible
        full_atom = full_gap = None
        if _is_checkpoint(t, every, T):
            g = obj.gradient()
            cost += obj.dim
            full_atom = domain.full_lmo(g)
        else:
            need = np.union1d(domain.unit_coords(units), active.coords())
            vals, n = obj.partial_gradient(need)
            cost += n
            g = np.full(obj.dim, np.nan)
            g[need] = vals
        support = active.atoms()
        sscores = active.inner_products(g)
        s, s_score = domain.candidate_lmo(g, units, support, sscores)
        vpos = int(np.argmax(sscores))
        v, v_score = support[vpos], float(sscores[vpos])
        alpha = active.weight_of(v)
        gdotx = _gdotx(g, active)
        if full_atom is not None:
            full_gap = gdotx - _score(full_atom, g)
        fw_gap, away_gap = gdotx - s_score, v_score - gdotx
        size = active.support_size
        step = plan_step(fw_gap, away_gap, size, alpha)
        kind, gamma, gmax, descent, moved = _take_away_step(obj, active, step, v, fw_gap, away_gap, s)
        trace.append(
            TraceRecord(t, kind, gamma, gmax, v_score - s_score, away_gap, full_gap, f, size, cost, descent=descent, extra={"atom": moved.key})
        )
        _resync(obj, active, t)
        _callback(callback, t, active)
        if full_gap is not None and full_gap <= config.tol:
            converged = True
            break
    return SolveResult(active, trace, converged, f0, extra={"p": p})


_RUNNERS = {"fw": run_fw, "rfw-v1": run_rfw, "rfw-v2": run_rfw, "afw": run_afw, "rafw": run_rafw}


def solve(obj, domain, config, x0=None, callback=None):
    """Dispatch on ``config.algorithm``."""
    return _RUNNERS[config.algorithm](obj, domain, config, x0=x0, callback=callback)
