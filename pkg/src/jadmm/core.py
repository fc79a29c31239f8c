"""Block-partitioned vectors/operators and the shared problem data model.

The decision variable of a separable program is a stack of N blocks
``x = (x_1, ..., x_N)`` coupled only through ``sum_i A_i x_i = c``.  This
module holds the immutable containers for that structure (:class:`BlockVector`,
:class:`BlockOperator`), the separable objective with its per-block oracles,
the joint primal/dual state :class:`Iterate`, and the block-diagonal metrics
used by the convergence diagnostics.

All payloads are dense float64.  Every container is immutable after
construction (backing arrays are marked read-only), so instances can be shared
freely across worker threads.
"""

import numpy as np

from . import kernels

__all__ = [
    "ShapeError",
    "BlockVector",
    "BlockOperator",
    "Iterate",
    "ZeroTerm",
    "L1Term",
    "QuadraticTerm",
    "BoxTerm",
    "CustomTerm",
    "SeparableObjective",
    "MetricSpec",
    "ExplicitMetric",
    "ScaledIdentityMetric",
    "CompositeMetric",
    "apply",
    "metric_norm_sq",
]


class ShapeError(ValueError):
    """Structural mismatch between block-partitioned objects."""


def _readonly(a):
    a.flags.writeable = False
    return a


def _as_vector(a, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{what} must be 1-D, got shape {a.shape}")
    return a


class BlockVector:
    """Immutable partitioned vector x = (x_1, ..., x_N), stored packed."""

    __slots__ = ("_data", "_offsets")

    def __init__(self, blocks):
        blocks = list(blocks)
        if len(blocks) < 1:
            raise ShapeError("BlockVector needs at least one block")
        parts = []
        for i, b in enumerate(blocks):
            b = _as_vector(b, f"block {i}")
            if b.size < 1:
                raise ShapeError(f"block {i} is empty")
            parts.append(b)
        self._data = _readonly(np.concatenate(parts))
        sizes = np.array([p.size for p in parts], dtype=np.int64)
        self._offsets = _readonly(np.concatenate(([0], np.cumsum(sizes))))

    @classmethod
    def from_packed(cls, data, sizes):
        """Build from a packed array and block sizes (data is copied)."""
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.ndim != 1 or sizes.size < 1 or np.any(sizes < 1):
            raise ShapeError(f"invalid block sizes {sizes}")
        data = _as_vector(data, "packed data")
        if data.size != int(sizes.sum()):
            raise ShapeError(f"packed length {data.size} != sum of sizes {int(sizes.sum())}")
        obj = cls.__new__(cls)
        obj._data = _readonly(data.copy())
        obj._offsets = _readonly(np.concatenate(([0], np.cumsum(sizes))))
        return obj

    @classmethod
    def _wrap(cls, data, offsets):
        # internal zero-copy constructor; data must already be read-only
        obj = cls.__new__(cls)
        obj._data = data
        obj._offsets = offsets
        return obj

    @classmethod
    def zeros(cls, sizes):
        sizes = np.asarray(sizes, dtype=np.int64)
        return cls.from_packed(np.zeros(int(sizes.sum())), sizes)

    @property
    def n_blocks(self):
        return self._offsets.size - 1

    @property
    def sizes(self):
        return tuple(int(d) for d in np.diff(self._offsets))

    @property
    def size(self):
        return self._data.size

    @property
    def data(self):
        """Read-only packed view of the full vector."""
        return self._data

    @property
    def offsets(self):
        return self._offsets

    def block(self, i):
        return self._data[self._offsets[i]:self._offsets[i + 1]]

    def blocks(self):
        return [self.block(i) for i in range(self.n_blocks)]

    def norm(self):
        return float(np.linalg.norm(self._data))

    def __repr__(self):
        return f"BlockVector(N={self.n_blocks}, sizes={self.sizes})"


class BlockOperator:
    """Immutable partitioned operator A = [A_1, ..., A_N] with right-hand side c.

    Each ``A_i`` is dense ``m x n_i``; all blocks share the row count m.  The
    stacked transpose ``A^T`` is kept as one C-contiguous ``(n, m)`` array so
    per-block rows are contiguous for the kernels.
    """

    __slots__ = ("_blocks", "_rhs", "_packed_t", "_offsets")

    def __init__(self, blocks, rhs):
        blocks = list(blocks)
        if len(blocks) < 1:
            raise ShapeError("BlockOperator needs at least one block")
        mats = []
        for i, a in enumerate(blocks):
            a = np.asarray(a, dtype=np.float64)
            if a.ndim != 2:
                raise ShapeError(f"operator block {i} must be 2-D, got shape {a.shape}")
            if a.shape[1] < 1:
                raise ShapeError(f"operator block {i} has no columns")
            mats.append(a)
        m = mats[0].shape[0]
        for i, a in enumerate(mats):
            if a.shape[0] != m:
                raise ShapeError(f"operator block {i} has {a.shape[0]} rows, expected {m}")
        rhs = _as_vector(rhs, "rhs")
        if rhs.size != m:
            raise ShapeError(f"rhs has length {rhs.size}, expected {m}")
        self._blocks = tuple(_readonly(np.ascontiguousarray(a)) for a in mats)
        self._rhs = _readonly(rhs.copy())
        self._packed_t = _readonly(np.ascontiguousarray(np.vstack([a.T for a in mats])))
        sizes = np.array([a.shape[1] for a in mats], dtype=np.int64)
        self._offsets = _readonly(np.concatenate(([0], np.cumsum(sizes))))

    @classmethod
    def stacked_identity(cls, n, N, rhs=None):
        """N identity blocks of size n (the exchange-problem operator)."""
        eye = np.eye(n)
        if rhs is None:
            rhs = np.zeros(n)
        return cls([eye] * N, rhs)

    @property
    def n_blocks(self):
        return len(self._blocks)

    @property
    def m(self):
        return self._rhs.size

    @property
    def n(self):
        return int(self._offsets[-1])

    @property
    def col_sizes(self):
        return tuple(int(d) for d in np.diff(self._offsets))

    @property
    def col_offsets(self):
        return self._offsets

    @property
    def rhs(self):
        return self._rhs

    @property
    def packed_t(self):
        """Stacked transpose, shape (n, m); rows of block i are contiguous."""
        return self._packed_t

    def block(self, i):
        return self._blocks[i]

    @property
    def blocks(self):
        return self._blocks

    def check_conforms(self, x):
        if not isinstance(x, BlockVector):
            raise ShapeError(f"expected BlockVector, got {type(x).__name__}")
        if x.n_blocks != self.n_blocks:
            raise ShapeError(f"operator has {self.n_blocks} blocks, vector has {x.n_blocks}")
        for i, (na, nx) in enumerate(zip(self.col_sizes, x.sizes)):
            if na != nx:
                raise ShapeError(f"block {i}: operator expects length {na}, vector has {nx}")

    def block_products(self, x):
        """All per-block products A_i x_i stacked into an (N, m) array."""
        self.check_conforms(x)
        out = np.empty((self.n_blocks, self.m))
        kernels.block_products(self._packed_t, self._offsets, x.data, 0, self.n_blocks, out)
        return out

    def apply(self, x):
        """Sum_i A_i x_i, reduced over per-block products in fixed block order."""
        return self.block_products(x).sum(axis=0)

    def __repr__(self):
        return f"BlockOperator(N={self.n_blocks}, m={self.m}, col_sizes={self.col_sizes})"


def apply(A, x):
    """Apply a :class:`BlockOperator` to a conforming :class:`BlockVector`.

    Returns ``sum_i A_i x_i`` (length m).  Raises :class:`ShapeError` naming
    the offending block on mismatch.
    """
    return A.apply(x)


class Iterate:
    """Joint solver state u = (x, lambda)."""

    __slots__ = ("x", "lam")

    def __init__(self, x, lam):
        if not isinstance(x, BlockVector):
            raise ShapeError("Iterate.x must be a BlockVector")
        self.x = x
        self.lam = _readonly(_as_vector(lam, "lambda").copy())

    def __repr__(self):
        return f"Iterate(x={self.x!r}, m={self.lam.size})"


# ---------------------------------------------------------------------------
# separable objective
# ---------------------------------------------------------------------------

class ProxUnavailable(ValueError):
    """The requested oracle is not defined for this objective term."""


class ZeroTerm:
    """f_i = 0."""

    kind = "zero"

    def value(self, x):
        return 0.0

    def prox(self, b, t):
        return np.asarray(b, dtype=np.float64).copy()

    def linmin(self, g):
        raise ProxUnavailable("zero term has no linear-shifted minimizer (unbounded below)")


class L1Term:
    """f_i(x) = ||x||_1."""

    kind = "l1"

    def value(self, x):
        return float(np.abs(x).sum())

    def prox(self, b, t):
        from .prox import shrink
        return shrink(b, t)

    def linmin(self, g):
        raise ProxUnavailable("l1 term has no linear-shifted minimizer (unbounded below)")


class QuadraticTerm:
    """f_i(x) = 1/2 ||C x - d||^2 with cached factorizations.

    The same shifted normal system ``(C^T C + r I) x = C^T d + r b`` is solved
    every iteration; the Cholesky factor is cached per shift r.
    """

    kind = "quadratic"

    def __init__(self, C, d):
        C = np.asarray(C, dtype=np.float64)
        d = _as_vector(d, "d")
        if C.ndim != 2:
            raise ShapeError(f"C must be 2-D, got shape {C.shape}")
        if C.shape[0] != d.size:
            raise ShapeError(f"C has {C.shape[0]} rows but d has length {d.size}")
        self.C = _readonly(np.ascontiguousarray(C))
        self.d = _readonly(d.copy())
        self._gram = _readonly(np.ascontiguousarray(C.T @ C))
        self._ctd = _readonly(C.T @ d)
        self._chol_cache = {}
        self._pinv_cache = None

    @property
    def dim(self):
        return self.C.shape[1]

    @property
    def gram(self):
        return self._gram

    @property
    def ctd(self):
        return self._ctd

    def value(self, x):
        r = self.C @ x - self.d
        return 0.5 * float(np.dot(r, r))

    def _chol(self, shift):
        L = self._chol_cache.get(shift)
        if L is None:
            L = np.linalg.cholesky(self._gram + shift * np.eye(self.dim))
            self._chol_cache[shift] = L
        return L

    def solve_shifted(self, shift, rhs):
        """Solve (C^T C + shift I) x = rhs via the cached Cholesky factor."""
        from scipy.linalg import cho_solve
        return cho_solve((self._chol(shift), True), rhs)

    def prox(self, b, t):
        """argmin 1/2||Cx-d||^2 + 1/(2t)||x-b||^2."""
        r = 1.0 / t
        return self.solve_shifted(r, self._ctd + r * np.asarray(b, dtype=np.float64))

    def _pinv_factors(self):
        # min-norm solve data for singular C^T C: thin SVD of C
        if self._pinv_cache is None:
            u, s, vt = np.linalg.svd(self.C, full_matrices=False)
            tol = max(self.C.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
            r = int((s > tol).sum())
            self._pinv_cache = (vt[:r].T.copy(), s[:r].copy())
        return self._pinv_cache

    def linmin(self, g, singular="error"):
        """argmin f(x) - g^T x, i.e. solve C^T C x = C^T d + g.

        ``singular="lstsq"`` returns the min-norm stationary point through the
        pseudo-inverse when C^T C is singular; the default raises.
        """
        rhs = self._ctd + g
        V, s = self._pinv_factors()
        if V.shape[1] < self.dim and singular != "lstsq":
            raise ProxUnavailable("C^T C is singular; linear-shifted subproblem unbounded")
        return V @ ((V.T @ rhs) / (s * s))


class BoxTerm:
    """Indicator of the box [lo, hi] (componentwise)."""

    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("box has lo > hi")

    def value(self, x):
        inside = np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12)
        return 0.0 if inside else np.inf

    def prox(self, b, t):
        return np.clip(b, self.lo, self.hi)

    def linmin(self, g):
        raise ProxUnavailable("box term linear-shifted minimizer not implemented")


class CustomTerm:
    """User-supplied oracles: value, optional prox, optional linmin."""

    kind = "custom"

    def __init__(self, value_fn, prox_fn=None, linmin_fn=None):
        self._value = value_fn
        self._prox = prox_fn
        self._linmin = linmin_fn

    def value(self, x):
        return float(self._value(x))

    def prox(self, b, t):
        if self._prox is None:
            raise ProxUnavailable("custom term has no prox oracle")
        return np.asarray(self._prox(b, t), dtype=np.float64)

    def linmin(self, g):
        if self._linmin is None:
            raise ProxUnavailable("custom term has no linear-shifted minimizer")
        return np.asarray(self._linmin(g), dtype=np.float64)


class SeparableObjective:
    """Ordered list of N block terms f_1, ..., f_N."""

    def __init__(self, terms):
        terms = tuple(terms)
        if len(terms) < 1:
            raise ShapeError("objective needs at least one term")
        self.terms = terms

    @property
    def n_blocks(self):
        return len(self.terms)

    def term(self, i):
        return self.terms[i]

    def block_values(self, x):
        """Per-block objective values f_i(x_i) as an (N,) array."""
        if x.n_blocks != self.n_blocks:
            raise ShapeError(f"objective has {self.n_blocks} terms, vector has {x.n_blocks}")
        return np.array([t.value(x.block(i)) for i, t in enumerate(self.terms)])

    def value(self, x):
        return float(self.block_values(x).sum())


# ---------------------------------------------------------------------------
# block-diagonal metrics
# ---------------------------------------------------------------------------

class ExplicitMetric:
    """x-part block given as an explicit symmetric matrix."""

    def __init__(self, M):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ShapeError(f"metric block must be square, got {M.shape}")
        self.M = _readonly(np.ascontiguousarray(M))

    def quad(self, z):
        return float(z @ self.M @ z)


class ScaledIdentityMetric:
    """x-part block tau * I."""

    def __init__(self, tau):
        self.tau = float(tau)

    def quad(self, z):
        return self.tau * float(np.dot(z, z))


class CompositeMetric:
    """x-part block P_i + rho A_i^T A_i, evaluated without materializing.

    For the prox-linear choice P_i = tau I - rho A_i^T A_i the sum collapses
    to tau I and is evaluated by that exact cancellation.
    """

    def __init__(self, prox_block, rho, A_block):
        from .prox import ProxNone, ProxStandard, ProxLinear, ProxExplicit
        self.prox_block = prox_block
        self.rho = float(rho)
        self.A_block = A_block
        self._kinds = (ProxNone, ProxStandard, ProxLinear, ProxExplicit)
        if not isinstance(prox_block, self._kinds):
            raise TypeError(f"unsupported prox block {type(prox_block).__name__}")

    def quad(self, z):
        from .prox import ProxNone, ProxStandard, ProxLinear, ProxExplicit
        p = self.prox_block
        if isinstance(p, ProxLinear):
            return p.tau * float(np.dot(z, z))
        az = self.A_block @ z
        base = self.rho * float(np.dot(az, az))
        if isinstance(p, ProxNone):
            return base
        if isinstance(p, ProxStandard):
            return base + p.tau * float(np.dot(z, z))
        if isinstance(p, ProxExplicit):
            return base + float(z @ p.P @ z)
        raise TypeError(f"unsupported prox block {type(p).__name__}")


class MetricSpec:
    """Block-diagonal PSD metric on (x, lambda) or on x alone.

    ``x_parts`` holds one metric block per x-block; ``lam_weight`` is the
    scalar weight of the lambda part (``1/(gamma rho)`` for the solver metric)
    or None for x-only metrics.
    """

    def __init__(self, x_parts, lam_weight=None):
        self.x_parts = tuple(x_parts)
        self.lam_weight = None if lam_weight is None else float(lam_weight)

    @classmethod
    def solver_metric(cls, A, rho, gamma, prox):
        """The contraction metric G = diag(P_i + rho A_i^T A_i, I/(gamma rho))."""
        parts = [CompositeMetric(prox.blocks[i], rho, A.block(i)) for i in range(A.n_blocks)]
        return cls(parts, 1.0 / (gamma * rho))

    @classmethod
    def identity(cls, sizes, lam_weight=None):
        return cls([ScaledIdentityMetric(1.0) for _ in sizes], lam_weight)

    def x_quad(self, x):
        if x.n_blocks != len(self.x_parts):
            raise ShapeError(f"metric has {len(self.x_parts)} blocks, vector has {x.n_blocks}")
        return sum(p.quad(x.block(i)) for i, p in enumerate(self.x_parts))


def metric_norm_sq(G, u):
    """Quadratic form u^T G u for an Iterate or BlockVector.

    Tiny negative values from round-off (within ``1e-12 * ||u||^2``) are
    clamped to zero so PSD semantics survive floating point.
    """
    if isinstance(u, Iterate):
        q = G.x_quad(u.x)
        eucl = float(np.dot(u.x.data, u.x.data)) + float(np.dot(u.lam, u.lam))
        if G.lam_weight is None:
            raise ShapeError("metric has no lambda part but an Iterate was given")
        q += G.lam_weight * float(np.dot(u.lam, u.lam))
    elif isinstance(u, BlockVector):
        q = G.x_quad(u)
        eucl = float(np.dot(u.data, u.data))
    else:
        raise ShapeError(f"expected Iterate or BlockVector, got {type(u).__name__}")
    if q < 0.0 and -q <= 1e-12 * eucl:
        return 0.0
    return q
