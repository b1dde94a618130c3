"""Linear minimization oracles over atomic domains.

Three domains are provided: the l1 ball, the latent group lasso ball (a
continuous family of hyper-disks, one per group) and an explicit finite
list of atoms.  Each offers a full oracle and a subsampled one that only
asks for the gradient coordinates it needs.

A *gradient provider* is any callable mapping a sorted integer array of
coordinates to the gradient values at those coordinates.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Atom, ContractError


@dataclass
class SubsampleSpec:
    """How many atoms (or sampling units) an oracle call looks at.

    ``mode`` is ``"rate"`` (``value`` is eta in (0, 1]) or ``"count"``
    (``value`` is an integer p >= 1).  The generator is owned by the spec and
    advanced by every draw.
    """

    mode: str
    value: float
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.mode == "rate":
            if not 0.0 < self.value <= 1.0:
                raise ContractError(f"sampling rate must lie in (0, 1], got {self.value!r}")
        elif self.mode == "count":
            if int(self.value) != self.value or self.value < 1:
                raise ContractError(f"sample count must be a positive integer, got {self.value!r}")
            self.value = int(self.value)
        else:
            raise ContractError(f"unknown sampling mode {self.mode!r}")

    @classmethod
    def rate(cls, eta, seed=0):
        return cls("rate", eta, np.random.default_rng(seed))

    @classmethod
    def count(cls, p, seed=0):
        return cls("count", p, np.random.default_rng(seed))

    def size(self, population):
        """Effective sample size for a population of ``population`` units."""
        if population < 1:
            raise ContractError("cannot sample from an empty population")
        if self.mode == "rate":
            # round first so that e.g. 0.29 * 100 counts as 29
            m = math.floor(round(self.value * population, 9))
        else:
            m = self.value
        return int(min(max(1, m), population))

    def eta(self, population):
        return self.size(population) / population if self.mode == "count" else float(self.value)

    def draw(self, population, m=None):
        """Uniform ``m``-subset of ``range(population)`` without replacement, sorted."""
        if m is None:
            m = self.size(population)
        if m >= population:
            return np.arange(population)
        return np.sort(self.rng.choice(population, size=m, replace=False))


def _take(provider, coords):
    coords = np.asarray(coords, dtype=np.int64)
    return coords, np.asarray(provider(coords), dtype=float)


def _signed_atom(i, g_i, radius):
    # sign opposite to the gradient; positive when the gradient vanishes
    return Atom([int(i)], [-radius if g_i > 0 else radius])


def l1_full_lmo(gradient, radius):
    """Minimizer of ``<v, gradient>`` over ``{+-radius e_i}``.

    Ties go to the lowest index; a zero gradient coordinate yields the
    positive atom.
    """
    g = np.asarray(gradient, dtype=float)
    if g.size == 0:
        raise ContractError("empty gradient")
    i = int(np.argmax(np.abs(g)))
    return _signed_atom(i, g[i], radius)


def l1_subsampled_lmo(gradient_provider, radius, spec, dim):
    """l1 oracle restricted to a uniform sample of coordinates.

    Each sampled coordinate carries both signed atoms, so the sample size is
    computed against ``dim``.  Returns ``(atom, coords_evaluated)``.
    """
    atom, coords, _ = L1Ball(dim, radius).sampled_lmo(gradient_provider, spec)
    return atom, coords.size


@dataclass
class GroupStructure:
    """Coordinate groups (possibly overlapping) covering ``range(dim)``."""

    groups: list
    dim: int

    def __post_init__(self):
        self.groups = [np.unique(np.asarray(g, dtype=np.int64)) for g in self.groups]
        if not self.groups or any(g.size == 0 for g in self.groups):
            raise ContractError("groups must be non-empty")
        flat = np.concatenate(self.groups)
        if flat.min() < 0 or flat.max() >= self.dim:
            raise ContractError("group index out of range")
        if np.unique(flat).size != self.dim:
            raise ContractError("groups do not cover every coordinate")
        self._flat = flat
        self._owner = np.repeat(np.arange(len(self.groups)), [g.size for g in self.groups])

    def __len__(self):
        return len(self.groups)

    def norms(self, gradient, group_ids=None):
        """Euclidean norm of each group block (all groups, or ``group_ids``) of a dense vector."""
        if group_ids is None:
            flat, owner, k = self._flat, self._owner, len(self.groups)
        else:
            blocks = [self.groups[j] for j in group_ids]
            flat = np.concatenate(blocks)
            owner = np.repeat(np.arange(len(blocks)), [b.size for b in blocks])
            k = len(blocks)
        vals = gradient[flat]
        # one common scale keeps tiny or huge entries from under/overflowing when squared
        scale = float(np.max(np.abs(vals))) if vals.size else 0.0
        if scale == 0.0 or not np.isfinite(scale):
            scale = 1.0
        return scale * np.sqrt(np.bincount(owner, weights=(vals / scale) ** 2, minlength=k))

    def coords_of(self, group_ids):
        return np.unique(np.concatenate([self.groups[k] for k in group_ids]))


def make_overlapping_groups(d, group_size, overlap):
    """Contiguous groups of ``group_size`` consecutive coordinates.

    Groups start every ``group_size - overlap`` coordinates.  If the regular
    grid stops short of ``d - 1`` the last group is shifted right to end there,
    or, when shifting would open a hole, one extra group ending at ``d - 1`` is
    appended.
    """
    if not 0 <= overlap < group_size <= d:
        raise ContractError(f"need 0 <= overlap < group_size <= d, got {overlap}, {group_size}, {d}")
    step = group_size - overlap
    starts = list(range(0, d - group_size + 1, step))
    last_end = starts[-1] + group_size
    if last_end < d:
        shift = d - last_end
        if len(starts) > 1 and shift <= overlap:
            starts[-1] = d - group_size
        else:
            starts.append(d - group_size)
    return GroupStructure([np.arange(s, s + group_size) for s in starts], d)


def _disk_atom(gid, coords, block, radius):
    peak = float(np.max(np.abs(block)))
    if peak == 0.0:
        return Atom([int(coords[0])], [radius], key=f"g{gid}|axis")
    unit = block / peak
    direction = -unit / float(np.sqrt(np.dot(unit, unit)))
    keep = direction != 0.0
    q = np.round(direction, 12) + 0.0
    key = f"g{gid}|" + ",".join(repr(v) for v in q.tolist())
    return Atom(coords[keep], radius * direction[keep], key=key)


def lgl_full_lmo(gradient_provider, groups, radius):
    """Latent group lasso oracle: the hyper-disk atom of the group with the largest gradient norm."""
    coords, vals = _take(gradient_provider, np.arange(groups.dim))
    g = np.empty(groups.dim)
    g[coords] = vals
    return LatentGroupBall(groups, radius).full_lmo(g)


def lgl_subsampled_lmo(gradient_provider, groups, radius, spec):
    """Latent group lasso oracle over a uniform sample of groups.

    Returns ``(atom, coords_evaluated)`` where the count is the size of the
    union of the sampled groups.
    """
    atom, coords, _ = LatentGroupBall(groups, radius).sampled_lmo(gradient_provider, spec)
    return atom, coords.size


def finite_lmo(gradient, atoms, subset=None):
    """Minimizer of ``<a, gradient>`` over ``atoms`` (or ``atoms[subset]``), first on ties."""
    if not atoms:
        raise ContractError("empty atom list")
    pool = range(len(atoms)) if subset is None else list(subset)
    if len(pool) == 0:
        raise ContractError("empty subset")
    g = np.asarray(gradient, dtype=float)
    scores = _scores([atoms[k] for k in pool], g)
    return atoms[pool[int(np.argmin(scores))]]


def _scores(atoms, g):
    # bincount accumulates in entry order, so an atom scores identically
    # here and in ActiveSet.inner_products
    rows = np.repeat(np.arange(len(atoms)), [a.nnz for a in atoms])
    cols = np.concatenate([a.indices for a in atoms])
    vals = np.concatenate([a.values for a in atoms])
    return np.bincount(rows, weights=g[cols] * vals, minlength=len(atoms))


def _pick(positions, scores):
    order = np.lexsort((positions, scores))
    return order[0]


class L1Ball:
    """``{x : ||x||_1 <= radius}``; atoms ``+-radius e_i``, sampled by coordinate."""

    is_finite = True
    name = "l1"

    def __init__(self, dim, radius):
        if radius <= 0:
            raise ContractError("radius must be positive")
        self.dim = int(dim)
        self.radius = float(radius)

    @property
    def n_units(self):
        return self.dim

    @property
    def atom_count(self):
        return 2 * self.dim

    @property
    def diameter(self):
        return 2.0 * self.radius

    def full_lmo(self, gradient):
        return l1_full_lmo(gradient, self.radius)

    def sampled_lmo(self, provider, spec):
        coords, vals = _take(provider, spec.draw(self.dim))
        k = int(np.argmax(np.abs(vals)))
        return _signed_atom(coords[k], vals[k], self.radius), coords, vals

    def unit_coords(self, units):
        return np.asarray(units, dtype=np.int64)

    def position(self, atom):
        return 2 * int(atom.indices[0]) + (0 if atom.values[0] > 0 else 1)

    def eligible_units(self, active):
        counts = np.zeros(self.dim, dtype=np.int64)
        for a in active.atoms():
            counts[a.indices[0]] += 1
        return np.flatnonzero(counts < 2)

    def candidate_lmo(self, g, units, support_atoms, support_scores):
        """Best atom over the support plus both signs of every sampled coordinate.

        Ties resolve by canonical position (coordinate, positive sign first),
        matching :meth:`full_lmo` when every coordinate is a candidate.
        """
        units = np.asarray(units, dtype=np.int64)
        gu = g[units]
        pos = np.concatenate([2 * units, 2 * units + 1, [self.position(a) for a in support_atoms]])
        sc = np.concatenate([self.radius * gu, -self.radius * gu, support_scores])
        k = int(_pick(pos, sc))
        n = units.size
        if k < n:
            return Atom([int(units[k])], [self.radius]), float(sc[k])
        if k < 2 * n:
            return Atom([int(units[k - n])], [-self.radius]), float(sc[k])
        return support_atoms[k - 2 * n], float(sc[k])

    def contains(self, x, tol=1e-9):
        return float(np.sum(np.abs(x))) <= self.radius + tol


class FiniteAtoms:
    """Convex hull of an explicit atom list; each atom is its own sampling unit."""

    is_finite = True
    name = "finite"

    def __init__(self, atoms, dim):
        if not atoms:
            raise ContractError("empty atom list")
        self.atoms = list(atoms)
        self.dim = int(dim)
        self._pos = {a.key: k for k, a in enumerate(self.atoms)}
        self.radius = max(float(np.linalg.norm(a.values)) for a in self.atoms)

    @classmethod
    def simplex(cls, dim, radius=1.0):
        return cls([Atom([i], [radius]) for i in range(dim)], dim)

    @property
    def n_units(self):
        return len(self.atoms)

    atom_count = n_units

    @property
    def diameter(self):
        dense = np.array([a.to_dense(self.dim) for a in self.atoms])
        sq = np.sum(dense**2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2 * dense @ dense.T
        return float(np.sqrt(max(d2.max(), 0.0)))

    def full_lmo(self, gradient):
        return finite_lmo(gradient, self.atoms)

    def sampled_lmo(self, provider, spec):
        units = spec.draw(len(self.atoms))
        coords, vals = _take(provider, self.unit_coords(units))
        g = np.full(self.dim, np.nan)
        g[coords] = vals
        return finite_lmo(g, self.atoms, units), coords, vals

    def unit_coords(self, units):
        if len(units) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([self.atoms[k].indices for k in units]))

    def position(self, atom):
        return self._pos[atom.key]

    def eligible_units(self, active):
        taken = {self._pos[a.key] for a in active.atoms()}
        return np.array([k for k in range(len(self.atoms)) if k not in taken], dtype=np.int64)

    def candidate_lmo(self, g, units, support_atoms, support_scores):
        cand = [self.atoms[k] for k in units]
        sc = np.concatenate([_scores(cand, g) if cand else np.zeros(0), support_scores])
        pos = np.concatenate([np.asarray(units, dtype=np.int64), [self.position(a) for a in support_atoms]])
        k = int(_pick(pos, sc))
        atom = cand[k] if k < len(cand) else support_atoms[k - len(cand)]
        return atom, float(sc[k])

    def contains(self, x, tol=1e-9):
        # membership is certified by the maintained convex decomposition
        return True


class LatentGroupBall:
    """Latent group lasso ball: convex hull of the radius-``radius`` disks on each group."""

    is_finite = False
    name = "lgl"

    def __init__(self, groups, radius):
        if radius <= 0:
            raise ContractError("radius must be positive")
        self.groups = groups
        self.dim = groups.dim
        self.radius = float(radius)

    @property
    def n_units(self):
        return len(self.groups)

    atom_count = n_units

    @property
    def diameter(self):
        return 2.0 * self.radius

    def full_lmo(self, gradient):
        g = np.asarray(gradient, dtype=float)
        k = int(np.argmax(self.groups.norms(g)))
        coords = self.groups.groups[k]
        return _disk_atom(k, coords, g[coords], self.radius)

    def sampled_lmo(self, provider, spec):
        gids = spec.draw(len(self.groups))
        coords, vals = _take(provider, self.groups.coords_of(gids))
        g = np.full(self.dim, np.nan)
        g[coords] = vals
        j = int(np.argmax(self.groups.norms(g, gids)))
        k = int(gids[j])
        gc = self.groups.groups[k]
        return _disk_atom(k, gc, g[gc], self.radius), coords, vals

    def contains(self, x, tol=1e-9):
        return True
