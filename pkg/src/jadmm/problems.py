"""Reproducible generators for the two experiment families.

Both generators draw every random quantity from the versioned Gaussian stream
in :mod:`jadmm.rng` in a documented, fixed call order, so an instance is a
pure function of its arguments (seed included) and regenerates bit-identically.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import BlockOperator, BlockVector, L1Term, QuadraticTerm, SeparableObjective, ShapeError
from .rng import GaussianStream, GENERATOR_ID

__all__ = [
    "Problem",
    "ExchangeInstance",
    "BasisPursuitInstance",
    "gen_exchange",
    "gen_basis_pursuit",
    "partition",
    "split_to_blocks",
]


@dataclass(frozen=True)
class Problem:
    """A separable program: minimize objective subject to A x = rhs."""
    operator: BlockOperator
    objective: SeparableObjective

    def __post_init__(self):
        if self.operator.n_blocks != self.objective.n_blocks:
            raise ShapeError(
                f"operator has {self.operator.n_blocks} blocks, "
                f"objective has {self.objective.n_blocks}"
            )


@dataclass(frozen=True)
class ExchangeInstance:
    """Quadratic exchange problem: min sum 1/2||C_i x_i - d_i||^2 s.t. sum x_i = 0.

    The planted solution satisfies sum_i x*_i = 0 exactly (the last block is
    the negated running sum of the others) and d_i = C_i x*_i, so the optimal
    objective value is 0.
    """
    n: int
    N: int
    p: int
    seed: int
    C: tuple = field(repr=False)
    d: tuple = field(repr=False)
    x_star: BlockVector = field(repr=False)

    def operator(self):
        return BlockOperator.stacked_identity(self.n, self.N)

    def objective(self):
        return SeparableObjective([QuadraticTerm(Ci, di) for Ci, di in zip(self.C, self.d)])

    def problem(self):
        return Problem(self.operator(), self.objective())

    def metadata(self):
        return {
            "kind": "exchange",
            "n": self.n,
            "N": self.N,
            "p": self.p,
            "seed": self.seed,
            "generator": GENERATOR_ID,
        }


@dataclass(frozen=True)
class BasisPursuitInstance:
    """Basis pursuit: min ||x||_1 s.t. A x = c, with a planted k-sparse x*."""
    m: int
    n: int
    N: int
    k: int
    sigma: float
    seed: int
    A: np.ndarray = field(repr=False)
    x_star: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    def operator(self):
        return partition(self.A, self.N, rhs=self.c)

    def objective(self):
        return SeparableObjective([L1Term() for _ in range(self.N)])

    def problem(self):
        return Problem(self.operator(), self.objective())

    def x_star_blocks(self):
        return split_to_blocks(self.x_star, self.N)

    def metadata(self):
        return {
            "kind": "bp",
            "m": self.m,
            "n": self.n,
            "N": self.N,
            "k": self.k,
            "sigma": self.sigma,
            "seed": self.seed,
            "generator": GENERATOR_ID,
        }


def _block_sizes(n, N):
    if N > n:
        raise ShapeError(f"cannot partition {n} columns into {N} blocks")
    if N < 1:
        raise ShapeError("N must be >= 1")
    q, r = divmod(n, N)
    return [q + 1] * r + [q] * (N - r)


def partition(A_dense, N, rhs=None):
    """Partition a dense matrix into N contiguous column blocks (ceiling-first).

    Block widths are ceil(n/N) for the first ``n mod N`` blocks and floor(n/N)
    after; concatenating the blocks reproduces ``A_dense`` exactly.
    """
    A_dense = np.asarray(A_dense, dtype=np.float64)
    if A_dense.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {A_dense.shape}")
    sizes = _block_sizes(A_dense.shape[1], N)
    if rhs is None:
        rhs = np.zeros(A_dense.shape[0])
    blocks = []
    pos = 0
    for w in sizes:
        blocks.append(A_dense[:, pos:pos + w])
        pos += w
    return BlockOperator(blocks, rhs)


def split_to_blocks(x, N):
    """Split a dense vector into the same ceiling-first block layout."""
    x = np.asarray(x, dtype=np.float64)
    sizes = _block_sizes(x.size, N)
    return BlockVector.from_packed(x, sizes)


def gen_exchange(n, N, p, seed):
    """Generate an exchange instance.

    Draw order: x*_1 ... x*_{N-1} (one ``normals(n)`` call each), then
    x*_N = -(x*_1 + ... + x*_{N-1}) as a left-fold running sum, then
    C_1 ... C_N (row-major ``p x n`` fills); finally d_i = C_i x*_i.
    """
    if n < 1 or N < 1 or p < 1:
        raise ShapeError(f"dimensions must be positive, got n={n}, N={N}, p={p}")
    stream = GaussianStream(seed)
    xs = [stream.normals(n) for _ in range(N - 1)]
    s = np.zeros(n)
    for xi in xs:
        s = s + xi
    xs.append(-s)
    C = [stream.normal_matrix(p, n) for _ in range(N)]
    d = [C[i] @ xs[i] for i in range(N)]
    return ExchangeInstance(
        n=n, N=N, p=p, seed=int(seed),
        C=tuple(C), d=tuple(d), x_star=BlockVector(xs),
    )


def gen_basis_pursuit(m, n, N, k, sigma, seed):
    """Generate a basis-pursuit instance.

    Draw order: A (row-major ``m x n`` fill), the k-element support (partial
    Fisher-Yates, stored sorted), the k nonzero values (assigned to the sorted
    support in draw order), and the noise vector (only when sigma > 0).
    ``c = A x* + sigma * eta``; with sigma = 0, ``c = A x*`` exactly.
    """
    if m < 1:
        raise ShapeError(f"m must be >= 1, got {m}")
    if k > n or k < 0:
        raise ShapeError(f"sparsity k={k} out of range for n={n}")
    if N > n:
        raise ShapeError(f"cannot partition n={n} into N={N} blocks")
    if sigma < 0:
        raise ShapeError(f"sigma must be >= 0, got {sigma}")
    stream = GaussianStream(seed)
    A = stream.normal_matrix(m, n)
    support = stream.choose(n, k)
    values = stream.normals(k)
    x_star = np.zeros(n)
    x_star[support] = values
    if sigma > 0:
        c = A @ x_star + sigma * stream.normals(m)
    else:
        c = A @ x_star
    return BasisPursuitInstance(
        m=m, n=n, N=N, k=k, sigma=float(sigma), seed=int(seed),
        A=A, x_star=x_star, support=support, c=c,
    )
