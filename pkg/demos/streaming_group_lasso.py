"""Latent group lasso with the design matrix streamed from disk.

The matrix is written in the column-major FWMAT1 format and read back in
column chunks, so a gradient never holds more than ``n x chunk_cols``
values.  The randomized oracle samples 10% of the overlapping groups and
only touches the columns of the sampled groups.  The same seed gives the
same trajectory whether the matrix lives in memory or on disk.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from subfw.bench import LglScenario, make_problem
from subfw.objectives import read_chunked_matrix, write_fwmat
from subfw.solvers import SolverConfig, solve

d = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
scenario = LglScenario(n=200, d=d)
mem, ball, x_star, meta = make_problem(scenario, 0)
print(f"{len(ball.groups)} groups of size {scenario.group_size}, overlap {scenario.overlap}; x* rescaled by {meta['rescale']:.3f}")

with tempfile.TemporaryDirectory() as tmp:
    path = write_fwmat(Path(tmp) / "design.fwmat", mem.op.XT.T)
    disk = read_chunked_matrix(path, scenario.chunk_cols, target=mem.y)
    g_mem, g_disk = mem.gradient(), disk.gradient()
    print("relative gradient difference:", float(np.max(np.abs(g_mem - g_disk)) / np.max(np.abs(g_mem))))

    cfg = SolverConfig("rfw-v1", eta=scenario.eta_rfw, max_iters=300, tol=0.0, seed=1)
    a, b = solve(mem, ball, cfg), solve(disk, ball, cfg)
    # atom keys are rounded directions, so compare what the trace records instead
    same_kinds = all(r.step == q.step for r, q in zip(a.trace, b.trace))
    dgamma = max(abs(r.gamma - q.gamma) for r, q in zip(a.trace, b.trace))
    print(f"same step kinds: {same_kinds}; max step-size difference {dgamma:.3g}")
    print(f"last full gaps {a.last_full_gap:.6g} / {b.last_full_gap:.6g}")
    print(f"objective {a.trace[0].objective:.4g} -> {mem.value(a.x):.4g}")
