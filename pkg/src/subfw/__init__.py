"""Frank-Wolfe solvers with subsampled linear minimization oracles."""

__version__ = "0.1.0"
