"""Synthetic lasso / latent group lasso experiments and their summaries.

A run directory holds ``traces/<algo>_<seed>.csv``, ``summary.json``,
``scenario.json`` and ``timing.json``.  Each seed generates its own problem
instance and seeds the solver's generator.  Wall-clock times live in their
own file so the summary stays reproducible bit for bit.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import ContractError, write_trace_csv
from .domains import L1Ball, LatentGroupBall, make_overlapping_groups
from .objectives import LeastSquares, write_fwmat, write_fwvec
from .solvers import SolverConfig, solve

SUPPORT_TOL = 1e-8
GAP_LEVELS = (1e-2, 1e-4, 1e-6)


@dataclass
class LassoScenario:
    name: str = "lasso"
    n: int = 200
    d: int = 500
    density: float = 0.10
    noise: float = 1.0
    radius: float = 40.0
    eta_rfw: float = 0.05
    eta_rafw: float = 0.25
    p: int = None
    max_iters: int = 3000
    tol: float = 1e-6
    checkpoint_k: int = 2


@dataclass
class LglScenario:
    name: str = "lgl"
    n: int = 500
    d: int = 10000
    group_size: int = 10
    overlap: int = 3
    density: float = 0.01
    noise: float = 1.0
    radius: float = 14.0
    eta_rfw: float = 0.1
    eta_rafw: float = 0.1
    p: int = None
    max_iters: int = 1000
    tol: float = 1e-6
    checkpoint_k: int = 2
    chunk_cols: int = 500


def generate_lasso(scenario, seed):
    """Gaussian design, sparse +-1 ground truth, ``y = X x* + noise * eps``.

    Returns
    -------
    (LeastSquares, ndarray)
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((scenario.n, scenario.d))
    x_star = np.zeros(scenario.d)
    k = int(math.floor(scenario.density * scenario.d))
    idx = rng.choice(scenario.d, size=k, replace=False)
    x_star[idx] = rng.choice([-1.0, 1.0], size=k)
    y = X @ x_star + scenario.noise * rng.standard_normal(scenario.n)
    return LeastSquares(X, y), x_star


def generate_lgl(scenario, seed):
    """Latent group lasso instance; returns (objective, x*, groups, rescale factor).

    Active groups are disjoint and Gaussian-filled; the ground truth is scaled
    down into the radius-``radius`` ball when its group norm exceeds it.
    """
    rng = np.random.default_rng(seed)
    groups = make_overlapping_groups(scenario.d, scenario.group_size, scenario.overlap)
    target = int(math.floor(scenario.density * scenario.d))
    order = rng.permutation(len(groups))
    taken = np.zeros(scenario.d, dtype=bool)
    active = []
    for k in order:
        if taken.sum() >= target:
            break
        g = groups.groups[k]
        if not taken[g].any():
            taken[g] = True
            active.append(int(k))
    x_star = np.zeros(scenario.d)
    x_star[taken] = rng.standard_normal(int(taken.sum()))
    # with disjoint blocks the sum of block norms is a feasible decomposition
    norm = sum(float(np.linalg.norm(x_star[groups.groups[k]])) for k in active)
    scale = 1.0
    if norm > scenario.radius:
        scale = scenario.radius / norm
        x_star *= scale
    X = rng.standard_normal((scenario.n, scenario.d))
    y = X @ x_star + scenario.noise * rng.standard_normal(scenario.n)
    return LeastSquares(X, y), x_star, groups, scale


def make_problem(scenario, seed):
    """(objective, domain, x*, metadata) for either scenario."""
    if scenario.name == "lasso":
        obj, x_star = generate_lasso(scenario, seed)
        meta = {"x_star_l1": float(np.abs(x_star).sum()), "x_star_inside_ball": bool(np.abs(x_star).sum() <= scenario.radius)}
        return obj, L1Ball(scenario.d, scenario.radius), x_star, meta
    if scenario.name == "lgl":
        obj, x_star, groups, scale = generate_lgl(scenario, seed)
        return obj, LatentGroupBall(groups, scenario.radius), x_star, {"rescale": scale}
    raise ContractError(f"unknown scenario {scenario.name!r}")


def solver_config(scenario, algorithm, seed, max_iters=None):
    kw = {}
    if algorithm.startswith("rfw") or algorithm == "rafw":
        if scenario.p is not None:
            kw["p"] = scenario.p
        else:
            kw["eta"] = scenario.eta_rafw if algorithm == "rafw" else scenario.eta_rfw
    return SolverConfig(
        algorithm,
        max_iters=max_iters or scenario.max_iters,
        tol=scenario.tol,
        checkpoint_k=scenario.checkpoint_k,
        seed=seed,
        **kw,
    )


def recovered_support_fraction(x, x_star, tol=SUPPORT_TOL):
    true = np.abs(x_star) > 0
    if not true.any():
        return 1.0
    return float(np.sum((np.abs(x) > tol) & true) / true.sum())


def cost_to_reach(trace, level):
    """Cumulative gradient coordinates at the first full gap <= ``level`` (inf if never)."""
    for r in trace:
        if r.full_gap is not None and r.full_gap <= level:
            return r.grad_coords_cum
    return math.inf


def _run_one(job):
    scenario, algorithm, seed, out_dir, max_iters = job
    obj, domain, x_star, _ = make_problem(scenario, seed)
    t0 = time.perf_counter()
    res = solve(obj, domain, solver_config(scenario, algorithm, seed, max_iters))
    elapsed = time.perf_counter() - t0
    path = Path(out_dir) / "traces" / f"{algorithm}_{seed}.csv"
    write_trace_csv(res.trace, path)
    return {
        "algorithm": algorithm,
        "seed": seed,
        "trace": res.trace,
        "recovered": recovered_support_fraction(res.x, x_star),
        "converged": res.converged,
        "seconds": elapsed,
    }


def _median(values):
    v = np.asarray(values, dtype=float)
    m = float(np.median(v))
    return None if math.isinf(m) else m


def summarize(results):
    """Per-algorithm medians across seeds."""
    out = {}
    for algo in dict.fromkeys(r["algorithm"] for r in results):
        runs = [r for r in results if r["algorithm"] == algo]
        by_iter = {}
        for r in runs:
            for rec in r["trace"]:
                if rec.full_gap is not None:
                    by_iter.setdefault(rec.iter, []).append((rec.full_gap, rec.grad_coords_cum))
        gap_traj = [
            [it, float(np.median([g for g, _ in v])), float(np.median([c for _, c in v])), len(v)]
            for it, v in sorted(by_iter.items())
        ]
        longest = max(len(r["trace"]) for r in runs)
        support = [
            [t, float(np.median([r["trace"][t].support_size for r in runs if t < len(r["trace"])]))]
            for t in range(longest)
        ]
        out[algo] = {
            "seeds": [r["seed"] for r in runs],
            "median_full_gap": gap_traj,
            "median_full_gap_columns": ["iter", "full_gap", "grad_coords_cum", "runs"],
            "median_support_size": support,
            "recovered_support_fraction": float(np.median([r["recovered"] for r in runs])),
            "median_cost_to_reach": {f"{lvl:g}": _median([cost_to_reach(r["trace"], lvl) for r in runs]) for lvl in GAP_LEVELS},
            "converged_runs": sum(r["converged"] for r in runs),
        }
    return out


def _workers():
    try:
        return max(1, int(os.environ.get("SUBFW_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(scenario, algorithms, seeds, out_dir, max_iters=None):
    """Run every (algorithm, seed) pair and write traces, summary and scenario files.

    Seeds run in worker processes when ``SUBFW_THREADS`` is above one.

    Returns
    -------
    dict
        The summary written to ``summary.json``.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    if "rafw" in algorithms and scenario.name == "lgl":
        raise ContractError("RAFW needs a finite set of atoms; the lgl scenario is a continuous family")
    jobs = [(scenario, a, int(s), str(out), max_iters) for s in seeds for a in algorithms]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    summary = summarize(results)
    meta = {s: make_problem(scenario, int(s))[3] for s in seeds} if scenario.name == "lasso" else {}
    if scenario.name == "lgl":
        meta = {s: {"rescale": generate_lgl(scenario, int(s))[3]} for s in seeds}
    report = dict(asdict(scenario), seeds=[int(s) for s in seeds], algorithm=list(algorithms))
    report["instances"] = {str(k): v for k, v in meta.items()}
    (out / "scenario.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    timing = {}
    for r in results:
        timing.setdefault(r["algorithm"], {})[str(r["seed"])] = r["seconds"]
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return summary


def scenario_from_dict(spec):
    """Build a scenario from the JSON schema ``{name, n, d, radius, eta|p, seeds, algorithm, ...}``.

    Returns ``(scenario, algorithms, seeds)``.
    """
    spec = dict(spec)
    name = spec.pop("name", "lasso")
    cls = {"lasso": LassoScenario, "lgl": LglScenario}.get(name)
    if cls is None:
        raise ContractError(f"unknown scenario {name!r}")
    seeds = spec.pop("seeds", [0])
    algorithms = spec.pop("algorithm", spec.pop("algorithms", ["fw", "rfw-v1"]))
    if isinstance(algorithms, str):
        algorithms = [algorithms]
    eta = spec.pop("eta", None)
    if eta is not None:
        spec["eta_rfw"] = spec["eta_rafw"] = float(eta)
    allowed = {f.name for f in fields(cls)}
    unknown = set(spec) - allowed
    if unknown:
        raise ContractError(f"unknown scenario keys: {sorted(unknown)}")
    return cls(name=name, **spec), list(algorithms), [int(s) for s in seeds]


def write_matrix_files(obj, path_prefix):
    """Write ``<prefix>.fwmat`` and ``<prefix>.fwvec`` for an in-memory objective."""
    if not hasattr(obj.op, "XT"):
        raise ContractError("only in-memory objectives can be written")
    mat, vec = f"{path_prefix}.fwmat", f"{path_prefix}.fwvec"
    write_fwmat(mat, obj.op.XT.T)
    write_fwvec(vec, obj.y)
    return mat, vec
