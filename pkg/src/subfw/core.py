"""Atoms, active sets and iteration traces shared by every solver."""

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DROP_TOL = 1e-12
RENORM_TOL = 1e-12
RECOMPUTE_EVERY = 1000


class ContractError(ValueError):
    """Raised when an operation is called outside its documented domain."""


class InvariantError(RuntimeError):
    """Raised when a state the algorithm guarantees cannot occur shows up."""


class Atom:
    """Sparse extreme point of an atomic domain.

    Parameters
    ----------
    indices : array-like of int
        Strictly increasing coordinate indices.
    values : array-like of float
        Nonzero entries matching ``indices``.
    key : str, optional
        Identity string. Derived from the entries when omitted; continuous
        atom families pass their own (group id plus quantized direction).
    """

    __slots__ = ("indices", "values", "key")

    def __init__(self, indices, values, key=None):
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        val = np.asarray(values, dtype=float).reshape(-1)
        if idx.shape != val.shape:
            raise ContractError("indices and values differ in length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ContractError("atom indices must be non-negative and strictly ascending")
        if np.any(val == 0.0):
            raise ContractError("atoms store no zero values")
        idx.setflags(write=False)
        val.setflags(write=False)
        self.indices = idx
        self.values = val
        if key is None:
            key = ";".join(f"{i}:{v!r}" for i, v in zip(idx.tolist(), val.tolist()))
        self.key = key

    def __eq__(self, other):
        return isinstance(other, Atom) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Atom({self.key!r})"

    @property
    def nnz(self):
        return self.indices.size

    def dot(self, vector):
        """Inner product with a dense vector (only the atom's coordinates are read)."""
        return float(np.dot(vector[self.indices], self.values))

    def to_dense(self, dim):
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out


def signed_unit_atom(index, value):
    """Atom ``value * e_index``."""
    return Atom([index], [value])


class StepKind(enum.Enum):
    FW = "FW"
    FW_FULL = "FW_FULL"
    AWAY = "AWAY"
    DROP = "DROP"
    BAD_DROP = "BAD_DROP"

    @property
    def z(self):
        """Indicator that is zero exactly for bad drop steps."""
        return 0 if self is StepKind.BAD_DROP else 1

    @property
    def is_drop(self):
        return self in (StepKind.DROP, StepKind.BAD_DROP)


class ActiveSet:
    """Convex decomposition ``x = sum_v alpha_v v`` with a cached dense iterate.

    Weights live in an insertion-ordered dict keyed by ``Atom.key``; the
    insertion order is the tie-break order for the away oracle.
    """

    def __init__(self, dim, atoms=(), weights=()):
        self.dim = int(dim)
        self._entries = {}
        self.iterate = np.zeros(self.dim)
        self._steps = 0
        self._flat = None
        atoms = list(atoms)
        weights = [float(w) for w in weights]
        if len(atoms) != len(weights):
            raise ContractError("atoms and weights differ in length")
        for atom, w in zip(atoms, weights):
            if w <= DROP_TOL:
                continue
            if atom.key in self._entries:
                self._entries[atom.key][1] += w
            else:
                self._entries[atom.key] = [atom, w]
        if not self._entries:
            raise ContractError("an active set needs at least one atom")
        total = sum(e[1] for e in self._entries.values())
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"weights must sum to one, got {total!r}")
        self.recompute_iterate()

    @classmethod
    def single(cls, atom, dim):
        return cls(dim, [atom], [1.0])

    def copy(self):
        new = ActiveSet.__new__(ActiveSet)
        new.dim = self.dim
        new._entries = {k: [a, w] for k, (a, w) in self._entries.items()}
        new.iterate = self.iterate.copy()
        new._steps = self._steps
        new._flat = self._flat
        return new

    def __deepcopy__(self, memo):
        return self.copy()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, atom):
        return atom.key in self._entries

    @property
    def support_size(self):
        return len(self._entries)

    @property
    def weights(self):
        """Mapping key -> weight (a fresh dict)."""
        return {k: w for k, (_, w) in self._entries.items()}

    def atoms(self):
        return [a for a, _ in self._entries.values()]

    def weight_of(self, atom):
        return self._entries[atom.key][1]

    def weight_sum(self):
        return math.fsum(w for _, w in self._entries.values())

    def dense_from_weights(self):
        x = np.zeros(self.dim)
        for atom, w in self._entries.values():
            x[atom.indices] += w * atom.values
        return x

    def recompute_iterate(self):
        self.iterate = self.dense_from_weights()

    def check(self, tol=1e-9):
        """Raise InvariantError if the cached state violates the convexity invariants."""
        if not self._entries:
            raise InvariantError("empty support")
        if abs(self.weight_sum() - 1.0) > tol:
            raise InvariantError(f"weights sum to {self.weight_sum()!r}")
        if min(w for _, w in self._entries.values()) <= DROP_TOL:
            raise InvariantError("non-positive weight stored")
        drift = np.max(np.abs(self.dense_from_weights() - self.iterate), initial=0.0)
        if drift > tol:
            raise InvariantError(f"cached iterate drifted by {drift:g}")

    def _flatten(self):
        if self._flat is None:
            entries = list(self._entries.values())
            rows = np.repeat(np.arange(len(entries)), [a.nnz for a, _ in entries])
            cols = np.concatenate([a.indices for a, _ in entries])
            vals = np.concatenate([a.values for a, _ in entries])
            self._flat = (rows, cols, vals, np.unique(cols))
        return self._flat

    def coords(self):
        """Sorted union of coordinates touched by supported atoms."""
        return self._flatten()[3]

    def inner_products(self, vector):
        """``<v, vector>`` for every supported atom, in insertion order."""
        rows, cols, vals, _ = self._flatten()
        return np.bincount(rows, weights=vector[cols] * vals, minlength=len(self._entries))

    def away_atom(self, gradient):
        """Supported atom maximizing ``<gradient, v>`` (first one on ties) and its weight."""
        scores = self.inner_products(gradient)
        pos = int(np.argmax(scores))
        atom, w = list(self._entries.values())[pos]
        return atom, w, float(scores[pos])

    # mutation -----------------------------------------------------------

    def _tick(self):
        self._steps += 1
        total = math.fsum(w for _, w in self._entries.values())
        if abs(total - 1.0) > RENORM_TOL:
            for entry in self._entries.values():
                entry[1] /= total
            self.iterate /= total
        if self._steps % RECOMPUTE_EVERY == 0:
            self.recompute_iterate()

    def _remove(self, key):
        del self._entries[key]
        self._flat = None

    def _prune(self):
        small = [(k, a, w) for k, (a, w) in self._entries.items() if w <= DROP_TOL]
        for k, atom, w in small:
            self.iterate[atom.indices] -= w * atom.values
            self._remove(k)


def apply_fw_step(active, s_t, gamma):
    """Move ``gamma`` of the mass onto ``s_t``; mutates and returns ``active``."""
    if not 0.0 <= gamma <= 1.0 or math.isnan(gamma):
        raise ContractError(f"FW step size must lie in [0, 1], got {gamma!r}")
    if gamma == 0.0:
        return active
    if gamma == 1.0:
        active._entries = {s_t.key: [s_t, 1.0]}
        active._flat = None
        x = np.zeros(active.dim)
        x[s_t.indices] = s_t.values
        active.iterate = x
        active._tick()
        return active
    keep = 1.0 - gamma
    for entry in active._entries.values():
        entry[1] *= keep
    if s_t.key in active._entries:
        active._entries[s_t.key][1] += gamma
    else:
        active._entries[s_t.key] = [s_t, gamma]
        active._flat = None
    active.iterate *= keep
    active.iterate[s_t.indices] += gamma * s_t.values
    active._prune()
    active._tick()
    return active


def gamma_max_for(away_weight):
    """Largest feasible away step ``alpha / (1 - alpha)``."""
    if not 0.0 < away_weight < 1.0:
        raise ContractError(f"away weight must lie in (0, 1), got {away_weight!r}")
    return away_weight / (1.0 - away_weight)


def apply_away_step(active, v_t, gamma, gamma_max):
    """Shift mass away from ``v_t``; mutates ``active`` and returns it with the step kind.

    A step with ``gamma == gamma_max`` (or one leaving the away weight below the
    drop tolerance) removes ``v_t`` and is a DROP, or a BAD_DROP when
    ``gamma_max < 1``.
    """
    if v_t.key not in active._entries:
        raise ContractError("away atom is not in the support")
    alpha = active._entries[v_t.key][1]
    if alpha >= 1.0:
        raise InvariantError("away step requested on a singleton support")
    if not 0.0 <= gamma <= gamma_max or math.isnan(gamma):
        raise ContractError(f"away step size {gamma!r} outside [0, {gamma_max!r}]")
    grow = 1.0 + gamma
    for entry in active._entries.values():
        entry[1] *= grow
    new_alpha = grow * alpha - gamma
    active.iterate *= grow
    active.iterate[v_t.indices] -= gamma * v_t.values
    if gamma >= gamma_max or new_alpha <= DROP_TOL:
        active._remove(v_t.key)
        # removing the atom outright: cancel its residue in the cache too
        if new_alpha != 0.0:
            active.iterate[v_t.indices] -= new_alpha * v_t.values
        kind = StepKind.DROP if gamma_max >= 1.0 else StepKind.BAD_DROP
    else:
        active._entries[v_t.key][1] = new_alpha
        kind = StepKind.AWAY
    active._prune()
    active._tick()
    return active, kind


@dataclass
class TraceRecord:
    """Telemetry for iteration ``iter``.

    Gaps, ``objective`` and ``support_size`` describe the iterate the step
    started from; ``grad_coords_cum`` includes the coordinates evaluated during
    this iteration.  ``descent`` (``<-grad, d_t>``) and ``raw_gamma`` are kept
    for diagnostics and are not written to CSV.
    """

    iter: int
    step: StepKind
    gamma: float
    gamma_max: float
    partial_gap: float
    away_gap: float
    full_gap: Optional[float]
    objective: float
    support_size: int
    grad_coords_cum: int
    descent: float = float("nan")
    raw_gamma: Optional[float] = None
    extra: dict = field(default_factory=dict)


TRACE_HEADER = (
    "iter,step_kind,gamma,gamma_max,partial_gap,away_gap,full_gap,"
    "objective,support_size,grad_coords_cum"
)


def _fmt(x):
    return format(float(x), ".17g")


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in trace:
            row = [
                str(r.iter),
                r.step.value,
                _fmt(r.gamma),
                _fmt(r.gamma_max),
                _fmt(r.partial_gap),
                _fmt(r.away_gap),
                "" if r.full_gap is None else _fmt(r.full_gap),
                _fmt(r.objective),
                str(r.support_size),
                str(r.grad_coords_cum),
            ]
            fh.write(",".join(row) + "\n")


def read_trace_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if ",".join(reader.fieldnames) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header in {path}")
        for row in reader:
            out.append(
                TraceRecord(
                    iter=int(row["iter"]),
                    step=StepKind(row["step_kind"]),
                    gamma=float(row["gamma"]),
                    gamma_max=float(row["gamma_max"]),
                    partial_gap=float(row["partial_gap"]),
                    away_gap=float(row["away_gap"]),
                    full_gap=float(row["full_gap"]) if row["full_gap"] else None,
                    objective=float(row["objective"]),
                    support_size=int(row["support_size"]),
                    grad_coords_cum=int(row["grad_coords_cum"]),
                )
            )
    return out


@dataclass
class ConvergenceBoundInputs:
    """Constants entering the sublinear and linear rate bounds.

    ``geometric_ratio`` is a user-supplied (or fitted) stand-in for
    mu / (4 C^A); nothing in this package computes it from first principles.
    """

    curvature: float
    eta: float
    initial_gap: float
    geometric_ratio: Optional[float] = None
    initial_support: int = 1

    def __post_init__(self):
        vals = [self.curvature, self.eta, self.initial_gap]
        if self.geometric_ratio is not None:
            vals.append(self.geometric_ratio)
        if not all(math.isfinite(v) for v in vals):
            raise ContractError("bound inputs must be finite")
        if self.curvature < 0 or self.initial_gap < 0:
            raise ContractError("curvature and initial gap must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ContractError("eta must lie in (0, 1]")
        if self.geometric_ratio is not None and not 0.0 < self.geometric_ratio < 1.0:
            raise ContractError("geometric ratio must lie in (0, 1)")
        if self.initial_support < 0:
            raise ContractError("initial support must be non-negative")
