"""Sampled oracles on a lasso problem: gap versus gradient coefficients.

Frank-Wolfe pays for a full gradient every iteration.  The randomized variant
looks at a 5% sample of coordinates per step and only computes the full
gradient at its periodic gap checkpoints.  Giving both the same budget of
gradient coefficients shows how far each one gets.

Run with ``python demos/lasso_sampling_budget.py [seed]``.
"""

import sys

from subfw.bench import LassoScenario, cost_to_reach, make_problem
from subfw.solvers import SolverConfig, solve

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scenario = LassoScenario()
obj, ball, x_star, meta = make_problem(scenario, seed)
print(f"lasso {scenario.n}x{scenario.d}, radius {scenario.radius}, ||x*||_1 = {meta['x_star_l1']:g}")

budget_iters = 1000
fw = solve(obj, ball, SolverConfig("fw", max_iters=budget_iters, tol=0.0))
budget = fw.trace[-1].grad_coords_cum

# a sampled step reads eta*d coordinates, a checkpoint every k/eta steps reads d
per_step = scenario.eta_rfw * scenario.d + scenario.d * scenario.eta_rfw / scenario.checkpoint_k
rfw = solve(obj, ball, SolverConfig("rfw-v1", eta=scenario.eta_rfw, max_iters=int(budget / per_step), tol=0.0, seed=seed))

print(f"\nbudget: {budget} gradient coefficients")
print(f"{'':>8}{'iterations':>12}{'last gap':>12}")
for name, res in (("FW", fw), ("RFW", rfw)):
    print(f"{name:>8}{len(res.trace):>12}{res.last_full_gap:>12.4g}")

print("\ncoefficients needed to reach a full gap level")
for level in (1000.0, 300.0, 100.0, 30.0):
    print(f"  gap <= {level:>6g}:  FW {cost_to_reach(fw.trace, level):>10}   RFW {cost_to_reach(rfw.trace, level):>10}")
