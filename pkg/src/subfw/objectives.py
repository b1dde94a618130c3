"""Least-squares objectives with incrementally maintained residuals.

Every objective here has the form ``f(x) = 1/2 ||X x - y||^2`` for some
linear operator ``X``; the quadratic test objective is the diagonal case.
The residual ``r = X x - y`` is tracked so that gradient coordinates
(``X[:, j]^T r``), exact line searches and ``<grad f(x), x>`` are all cheap.

The design matrix may be held in memory or streamed from an ``FWMAT1`` file
(column-major doubles) a chunk of columns at a time.
"""

import os
import struct

import numpy as np

from .core import ContractError

MAT_MAGIC = b"FWMAT1\0\0"
VEC_MAGIC = b"FWVEC1\0\0"
_MAT_HEADER = 24
_VEC_HEADER = 16


class FormatError(ValueError):
    """Base class for FWMAT1 / FWVEC1 read failures."""


class MalformedHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


# -- file formats -------------------------------------------------------------


def write_fwmat(path, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ContractError("matrix must be two-dimensional")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(MAT_MAGIC + struct.pack("<QQ", n, d))
        # column-major: column j is the contiguous run X.T[j]
        fh.write(np.ascontiguousarray(X.T, dtype="<f8").tobytes())
    return path


def write_fwvec(path, v):
    v = np.asarray(v, dtype="<f8").reshape(-1)
    with open(path, "wb") as fh:
        fh.write(VEC_MAGIC + struct.pack("<Q", v.size))
        fh.write(v.tobytes())
    return path


def read_fwmat_header(path):
    with open(path, "rb") as fh:
        head = fh.read(_MAT_HEADER)
    if len(head) < _MAT_HEADER or head[:8] != MAT_MAGIC:
        raise MalformedHeaderError(f"{path}: not an FWMAT1 file")
    n, d = struct.unpack("<QQ", head[8:])
    expected = _MAT_HEADER + 8 * n * d
    size = os.path.getsize(path)
    if size < expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} bytes, found {size}")
    if size > expected:
        raise MalformedHeaderError(f"{path}: {size - expected} trailing bytes after payload")
    return int(n), int(d)


def read_fwmat(path):
    n, d = read_fwmat_header(path)
    with open(path, "rb") as fh:
        fh.seek(_MAT_HEADER)
        data = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
    return data.reshape(d, n).T.astype(float)


def read_fwvec(path, expected_len=None):
    with open(path, "rb") as fh:
        head = fh.read(_VEC_HEADER)
        if len(head) < _VEC_HEADER or head[:8] != VEC_MAGIC:
            raise MalformedHeaderError(f"{path}: not an FWVEC1 file")
        (n,) = struct.unpack("<Q", head[8:])
        payload = fh.read()
    if len(payload) < 8 * n:
        raise TruncatedPayloadError(f"{path}: expected {8 * n} payload bytes, found {len(payload)}")
    if len(payload) > 8 * n:
        raise MalformedHeaderError(f"{path}: trailing bytes after payload")
    if expected_len is not None and n != expected_len:
        raise DimensionMismatchError(f"{path}: vector has length {n}, expected {expected_len}")
    return np.frombuffer(payload, dtype="<f8").astype(float)


# -- linear operators ---------------------------------------------------------


class DenseOperator:
    """In-memory design matrix stored column-major (``XT[j]`` is column j)."""

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        self.n, self.dim = X.shape
        self.XT = np.ascontiguousarray(X.T)

    def image(self, indices, values):
        return np.asarray(values) @ self.XT[indices]

    def matvec(self, x):
        return x @ self.XT

    def rmatvec(self, r, indices=None):
        if indices is None:
            return self.XT @ r
        return self.XT[indices] @ r

    def lipschitz(self):
        return None


class DiagonalOperator:
    def __init__(self, diag):
        self.diag = np.asarray(diag, dtype=float)
        self.n = self.dim = self.diag.size

    def image(self, indices, values):
        out = np.zeros(self.n)
        out[indices] = self.diag[indices] * values
        return out

    def matvec(self, x):
        return self.diag * x

    def rmatvec(self, r, indices=None):
        if indices is None:
            return self.diag * r
        return self.diag[indices] * r[indices]

    def lipschitz(self):
        return float(np.max(self.diag**2))


class ChunkedOperator:
    """Design matrix streamed from an FWMAT1 file in blocks of ``chunk_cols`` columns.

    At most ``n * chunk_cols`` matrix entries are resident at any time.  Every
    call re-reads what it needs; nothing is cached between calls.
    """

    def __init__(self, path, chunk_cols=500):
        if chunk_cols < 1:
            raise ContractError("chunk_cols must be at least 1")
        self.path = os.fspath(path)
        self.n, self.dim = read_fwmat_header(self.path)
        self.chunk_cols = int(chunk_cols)
        self._fh = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_fh"] = None
        return state

    def _file(self):
        if self._fh is None or self._fh.closed:
            self._fh = open(self.path, "rb")
        return self._fh

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def _read_cols(self, start, stop):
        fh = self._file()
        fh.seek(_MAT_HEADER + 8 * self.n * start)
        count = (stop - start) * self.n
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise TruncatedPayloadError(f"{self.path}: short read")
        return np.frombuffer(buf, dtype="<f8").reshape(stop - start, self.n)

    def _chunks(self, indices):
        """Yield ``(block, positions, local)`` for every chunk holding some of ``indices``."""
        indices = np.asarray(indices, dtype=np.int64)
        cid = indices // self.chunk_cols
        bounds = np.flatnonzero(np.diff(cid)) + 1
        for sel in np.split(np.arange(indices.size), bounds):
            if sel.size == 0:
                continue
            c = int(cid[sel[0]])
            start = c * self.chunk_cols
            stop = min(start + self.chunk_cols, self.dim)
            yield self._read_cols(start, stop), sel, indices[sel] - start

    def image(self, indices, values):
        values = np.asarray(values, dtype=float)
        out = np.zeros(self.n)
        fh = self._file()
        indices = np.asarray(indices, dtype=np.int64)
        for lo in range(0, indices.size, self.chunk_cols):
            idx = indices[lo : lo + self.chunk_cols]
            cols = np.empty((idx.size, self.n))
            for k, j in enumerate(idx):
                fh.seek(_MAT_HEADER + 8 * self.n * int(j))
                cols[k] = np.frombuffer(fh.read(8 * self.n), dtype="<f8")
            out += values[lo : lo + self.chunk_cols] @ cols
        return out

    def matvec(self, x):
        nz = np.flatnonzero(x)
        return self.image(nz, x[nz])

    def rmatvec(self, r, indices=None):
        if indices is None:
            out = np.empty(self.dim)
            for start in range(0, self.dim, self.chunk_cols):
                stop = min(start + self.chunk_cols, self.dim)
                out[start:stop] = self._read_cols(start, stop) @ r
            return out
        out = np.empty(len(indices))
        for block, sel, local in self._chunks(indices):
            out[sel] = block[local] @ r
        return out

    def lipschitz(self):
        return None


def power_iteration(op, iters=100, rtol=1e-6, seed=0):
    """Estimate ``||X||_2^2`` (largest eigenvalue of ``X^T X``) by power iteration."""
    v = np.random.default_rng(seed).standard_normal(op.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.rmatvec(op.matvec(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        prev, lam = lam, float(np.dot(op.matvec(v), op.matvec(v)))
        if abs(lam - prev) <= rtol * lam:
            break
    return lam


# -- objectives ---------------------------------------------------------------


class LeastSquares:
    """``f(x) = 1/2 ||X x - y||^2`` with a tracked residual.

    Parameters
    ----------
    X : array-like or operator
        ``n x d`` matrix, or one of the operator classes of this module.
    y : array-like
        Targets of length ``n``.
    """

    def __init__(self, X, y):
        self.op = X if hasattr(X, "rmatvec") else DenseOperator(X)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.y.size != self.op.n:
            raise DimensionMismatchError(f"targets have length {self.y.size}, matrix has {self.op.n} rows")
        self.n, self.dim = self.op.n, self.op.dim
        self._L = None
        self.set_iterate(np.zeros(self.dim))

    def set_iterate(self, x):
        """Reset the tracked point (full residual recompute)."""
        x = self._check(x)
        self.residual = self.op.matvec(x) - self.y

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ContractError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        return x

    def _residual(self, x):
        return self.residual if x is None else self.op.matvec(self._check(x)) - self.y

    def value(self, x=None):
        r = self._residual(x)
        return 0.5 * float(np.dot(r, r))

    def gradient(self, x=None):
        return self.op.rmatvec(self._residual(x))

    def partial_gradient(self, coords, x=None):
        """Gradient entries at ``coords`` and how many were computed."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.size == 0:
            return np.zeros(0), 0
        if coords.min() < 0 or coords.max() >= self.dim:
            raise IndexError("gradient coordinate out of range")
        r = self._residual(x)
        if coords.size == self.dim and np.array_equal(coords, np.arange(self.dim)):
            return self.op.rmatvec(r), self.dim
        return self.op.rmatvec(r, coords), int(coords.size)

    def atom_image(self, atom):
        return self.op.image(atom.indices, atom.values)

    def iterate_image(self):
        """``X x`` at the tracked point."""
        return self.residual + self.y

    def grad_dot_iterate(self):
        """``<grad f(x), x> = <r, X x>``, at no gradient cost."""
        return float(np.dot(self.residual, self.residual + self.y))

    def update_residual(self, direction, gamma, image=None):
        """Advance the tracked residual by ``gamma * X direction``.

        ``direction`` is a dense vector or an ``(indices, values)`` pair;
        pass ``image`` when ``X direction`` is already known.
        """
        if gamma == 0.0:
            return
        if image is None:
            if isinstance(direction, tuple):
                image = self.op.image(*direction)
            else:
                image = self.op.matvec(np.asarray(direction, dtype=float))
        self.residual = self.residual + gamma * image

    def line_search(self, image, gamma_max):
        """Minimizer over ``[0, gamma_max]`` of ``f`` along a direction with image ``image``."""
        qq = float(np.dot(image, image))
        if qq == 0.0:
            return 0.0
        gamma = -float(np.dot(self.residual, image)) / qq
        return min(max(gamma, 0.0), gamma_max)

    def quadratic_coefficients(self, x, direction):
        """``(<r, Xd>, ||Xd||^2)`` so that ``f(x + t d) = f(x) + t a + t^2 b / 2``."""
        r = self._residual(x)
        q = self.op.matvec(self._check(direction))
        return float(np.dot(r, q)), float(np.dot(q, q))

    def lipschitz_bound(self):
        """Upper bound on the gradient Lipschitz constant ``||X||_2^2``.

        Exact for diagonal operators; otherwise a power-iteration estimate
        inflated by 1%.
        """
        if self._L is None:
            exact = self.op.lipschitz()
            self._L = exact if exact is not None else 1.01 * power_iteration(self.op)
        return self._L


class QuadraticObjective(LeastSquares):
    """``f(x) = 1/2 sum_i w_i (x_i - c_i)^2``; minimum 0 at ``center``."""

    def __init__(self, center, scale=None):
        center = np.asarray(center, dtype=float)
        w = np.ones_like(center) if scale is None else np.asarray(scale, dtype=float)
        if np.any(w <= 0):
            raise ContractError("scale must be positive")
        root = np.sqrt(w)
        self.center = center
        super().__init__(DiagonalOperator(root), root * center)

    @property
    def minimizer(self):
        return self.center.copy()


def read_chunked_matrix(path, chunk_cols=500, target=None, expected_shape=None):
    """Least-squares objective whose design matrix is streamed from ``path``.

    ``target`` is an FWVEC1 path or an array.  ``expected_shape`` (n, d)
    raises :class:`DimensionMismatchError` when the file disagrees.
    """
    op = ChunkedOperator(path, chunk_cols)
    if expected_shape is not None and tuple(expected_shape) != (op.n, op.dim):
        raise DimensionMismatchError(f"{path}: matrix is {op.n}x{op.dim}, expected {tuple(expected_shape)}")
    if target is None:
        raise ContractError("a target vector is required")
    y = read_fwvec(target, expected_len=op.n) if isinstance(target, (str, os.PathLike)) else target
    return LeastSquares(op, y)


# -- functional surface -------------------------------------------------------


def gradient(obj, x):
    return obj.gradient(x)


def partial_gradient(obj, x, coords):
    return obj.partial_gradient(coords, x)


def update_residual(obj, direction, gamma):
    obj.update_residual(direction, gamma)


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def golden_section(fun, lo, hi, tol=1e-10):
    """Minimize a unimodal ``fun`` on ``[lo, hi]`` to an interval of width ``tol``."""
    a, b = float(lo), float(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    mid = 0.5 * (a + b)
    cands = [(fun(lo), lo), (fun(mid), mid), (fun(hi), hi)]
    return min(cands)[1]


def exact_line_search(obj, x, direction, gamma_max):
    """Minimizer of ``f(x + gamma d)`` over ``[0, gamma_max]``.

    Closed form for least-squares objectives; golden-section search on any
    other object exposing ``value(x)``.
    """
    if not gamma_max > 0:
        raise ContractError("gamma_max must be positive")
    x = np.asarray(x, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if hasattr(obj, "quadratic_coefficients"):
        a, b = obj.quadratic_coefficients(x, direction)
        if b == 0.0:
            return 0.0
        return min(max(-a / b, 0.0), gamma_max)
    return golden_section(lambda t: obj.value(x + t * direction), 0.0, gamma_max)


def curvature_upper_bound(obj, domain_diameter):
    """``diam^2 * L``, an upper bound on the curvature constant."""
    return float(domain_diameter) ** 2 * obj.lipschitz_bound()
