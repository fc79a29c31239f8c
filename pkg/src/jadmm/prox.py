"""Proximal oracles and the per-block proximal-matrix menu.

The proximal Jacobian scheme attaches a matrix P_i to every block subproblem.
:class:`ProxSpec` describes the per-block choice:

* ``ProxNone``       — P_i = 0 (plain Jacobian update);
* ``ProxStandard``   — P_i = tau_i I (standard proximal term);
* ``ProxLinear``     — P_i = tau_i I - rho A_i^T A_i, which cancels the
  quadratic coupling and turns l1 blocks into a single shrinkage;
* ``ProxExplicit``   — an arbitrary symmetric PSD matrix.

A prox-linear tau_i below rho ||A_i||^2 makes P_i indefinite; that is allowed
with a logged warning because the adaptive tuner deliberately starts small and
grows tau until the contraction test holds.
"""

import logging

import numpy as np

from . import kernels

__all__ = [
    "DomainError",
    "NumericalError",
    "ProxNone",
    "ProxStandard",
    "ProxLinear",
    "ProxExplicit",
    "ProxSpec",
    "shrink",
    "prox_l1_scaled",
    "prox_quadratic",
    "spectral_norm_sq",
    "sym_eig_extremes",
    "smallest_eig_sym",
]

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """Parameter outside its mathematical domain."""


class NumericalError(RuntimeError):
    """Iterative routine failed to converge; carries the last estimate."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


# ---------------------------------------------------------------------------
# per-block prox variants
# ---------------------------------------------------------------------------

class ProxNone:
    tau = 0.0

    def __repr__(self):
        return "ProxNone()"


class ProxStandard:
    def __init__(self, tau):
        tau = float(tau)
        if tau <= 0.0:
            raise DomainError(f"standard prox requires tau > 0, got {tau}")
        self.tau = tau

    def __repr__(self):
        return f"ProxStandard(tau={self.tau!r})"


class ProxLinear:
    def __init__(self, tau):
        tau = float(tau)
        if tau <= 0.0:
            raise DomainError(f"prox-linear requires tau > 0, got {tau}")
        self.tau = tau

    def __repr__(self):
        return f"ProxLinear(tau={self.tau!r})"


class ProxExplicit:
    def __init__(self, P):
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DomainError(f"explicit P must be square, got shape {P.shape}")
        scale = np.abs(P).max() if P.size else 0.0
        if scale > 0 and np.abs(P - P.T).max() > 1e-10 * scale:
            raise DomainError("explicit P must be symmetric to 1e-10 relative")
        P = 0.5 * (P + P.T)
        lmin, lmax = sym_eig_extremes(P) if P.size else (0.0, 0.0)
        nrm = max(abs(lmin), abs(lmax))
        if lmin < -1e-10 * max(nrm, 1e-300):
            raise DomainError("explicit P must be PSD (smallest eigenvalue test failed)")
        self.P = P
        self.P.flags.writeable = False

    def __repr__(self):
        return f"ProxExplicit(shape={self.P.shape})"


class ProxSpec:
    """Per-block proximal choice for all N blocks."""

    def __init__(self, blocks):
        blocks = tuple(blocks)
        if not blocks:
            raise DomainError("ProxSpec needs at least one block")
        for b in blocks:
            if not isinstance(b, (ProxNone, ProxStandard, ProxLinear, ProxExplicit)):
                raise DomainError(f"unsupported prox block {type(b).__name__}")
        self.blocks = blocks

    @classmethod
    def none(cls, N):
        return cls([ProxNone()] * N)

    @classmethod
    def standard(cls, taus, N=None):
        taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
        if taus.size == 1 and N is not None:
            taus = np.full(N, taus[0])
        return cls([ProxStandard(t) for t in taus])

    @classmethod
    def prox_linear(cls, taus, N=None):
        taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
        if taus.size == 1 and N is not None:
            taus = np.full(N, taus[0])
        return cls([ProxLinear(t) for t in taus])

    @classmethod
    def explicit(cls, mats):
        return cls([ProxExplicit(P) for P in mats])

    @property
    def n_blocks(self):
        return len(self.blocks)

    def is_none(self):
        return all(isinstance(b, ProxNone) for b in self.blocks)

    def taus(self):
        """Per-block tau array (NaN for explicit blocks, 0 for none)."""
        out = np.zeros(self.n_blocks)
        for i, b in enumerate(self.blocks):
            out[i] = np.nan if isinstance(b, ProxExplicit) else b.tau
        return out

    def quad_form(self, i, z, rho=None, A_block=None):
        """z^T P_i z; prox-linear blocks need rho and A_i."""
        b = self.blocks[i]
        if isinstance(b, ProxNone):
            return 0.0
        if isinstance(b, ProxStandard):
            return b.tau * float(np.dot(z, z))
        if isinstance(b, ProxLinear):
            if rho is None or A_block is None:
                raise DomainError("prox-linear quad form needs rho and the operator block")
            az = A_block @ z
            return b.tau * float(np.dot(z, z)) - rho * float(np.dot(az, az))
        return float(z @ b.P @ z)

    def warn_if_indefinite(self, A, rho):
        """Log one warning listing prox-linear blocks with tau_i < rho ||A_i||^2."""
        bad = []
        for i, b in enumerate(self.blocks):
            if isinstance(b, ProxLinear) and b.tau < rho * spectral_norm_sq(A.block(i)):
                bad.append(i)
        if bad:
            shown = ", ".join(map(str, bad[:8])) + (", ..." if len(bad) > 8 else "")
            log.warning(
                "%d prox-linear block(s) have tau < rho*||A_i||^2 (indefinite "
                "P_i; allowed, the adaptive tuner grows tau): blocks %s",
                len(bad), shown,
            )

    def __repr__(self):
        return f"ProxSpec({list(self.blocks)!r})"


# ---------------------------------------------------------------------------
# proximal operators
# ---------------------------------------------------------------------------

def shrink(v, t):
    """Soft-thresholding sign(v) * max(|v| - t, 0), componentwise.

    Ties at |v_j| = t map to exactly 0.
    """
    if t < 0:
        raise DomainError(f"shrink threshold must be >= 0, got {t}")
    v = np.ascontiguousarray(v, dtype=np.float64)
    return kernels.soft_threshold(v, float(t))


def prox_l1_scaled(b, t):
    """argmin ||x||_1 + 1/(2t) ||x - b||^2, i.e. shrink(b, t); requires t > 0."""
    if t <= 0:
        raise DomainError(f"prox_l1_scaled requires t > 0, got {t}")
    return shrink(b, t)


def prox_quadratic(C, d, rho, b):
    """argmin 1/2||Cx - d||^2 + rho/2 ||x - b||^2 for rho > 0.

    Solves the SPD normal equations ``(C^T C + rho I) x = C^T d + rho b`` by
    Cholesky.  For repeated solves against the same (C, rho) use
    :class:`jadmm.core.QuadraticTerm`, which caches the factorization.
    """
    if rho <= 0:
        raise DomainError(f"prox_quadratic requires rho > 0, got {rho}")
    C = np.asarray(C, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != d.size or C.shape[1] != b.size:
        raise DomainError(f"shape mismatch: C {C.shape}, d {d.shape}, b {b.shape}")
    n = C.shape[1]
    L = np.linalg.cholesky(C.T @ C + rho * np.eye(n))
    rhs = C.T @ d + rho * b
    y = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, y)


# ---------------------------------------------------------------------------
# spectral estimates (power iteration; the test suite checks these against
# dense decompositions, so they must not be implemented via numpy.linalg.eig*)
# ---------------------------------------------------------------------------

_POWER_MAX_ITERS = 5000
_POWER_TOL = 1e-9


def _power_start(n):
    # deterministic, dense-in-every-eigenbasis start vector
    from .rng import GaussianStream
    v = GaussianStream(0x5EED_5EED).normals(n)
    nv = np.linalg.norm(v)
    return v / nv


def spectral_norm_sq(M):
    """Largest singular value squared of M, by power iteration on M^T M.

    Stops when the Rayleigh quotient is stable to 1e-9 relative; raises
    :class:`NumericalError` (carrying the last estimate) after 5000 iterations.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise DomainError(f"spectral_norm_sq needs a nonempty matrix, got shape {M.shape}")
    v = _power_start(M.shape[1])
    est = 0.0
    for _ in range(_POWER_MAX_ITERS):
        w = M @ v
        z = M.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0  # v in the null space and M^T M v = 0: norm estimate 0
        new = float(np.dot(v, z))  # Rayleigh quotient of M^T M
        v = z / nz
        if abs(new - est) <= _POWER_TOL * max(abs(new), 1e-300):
            return max(new, 0.0)
        est = new
    raise NumericalError(
        f"power iteration did not converge in {_POWER_MAX_ITERS} iterations",
        estimate=max(est, 0.0),
    )


def _power_largest_sym(S):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    v = _power_start(S.shape[0])
    est = 0.0
    for _ in range(_POWER_MAX_ITERS):
        z = S @ v
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        new = float(np.dot(v, z))
        v = z / nz
        if abs(new - est) <= _POWER_TOL * max(abs(new), 1e-300):
            return new
        est = new
    raise NumericalError(
        f"power iteration did not converge in {_POWER_MAX_ITERS} iterations",
        estimate=est,
    )


def sym_eig_extremes(S, tol=1e-14, max_sweeps=40):
    """(lambda_min, lambda_max) of a symmetric matrix by cyclic Jacobi rotations.

    Quadratically convergent and accurate to machine precision for clustered
    spectra, where single-vector power iteration stalls.  Kept in-house (not
    numpy.linalg.eigvalsh) so the test suite's dense-eigendecomposition
    oracles remain an independent check on the condition modules.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.size == 0:
        raise DomainError(f"sym_eig_extremes needs a square matrix, got shape {S.shape}")
    M = 0.5 * (S + S.T)
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0]), float(M[0, 0])
    scale = float(np.abs(M).max())
    if scale == 0.0:
        return 0.0, 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q_ in range(p + 1, n):
                apq = M[p, q_]
                if abs(apq) <= tol * scale:
                    continue
                off = max(off, abs(apq))
                theta = 0.5 * (M[q_, q_] - M[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                cth = 1.0 / np.sqrt(t * t + 1.0)
                sth = t * cth
                rp = M[p, :].copy()
                rq = M[q_, :].copy()
                M[p, :] = cth * rp - sth * rq
                M[q_, :] = sth * rp + cth * rq
                cp = M[:, p].copy()
                cq = M[:, q_].copy()
                M[:, p] = cth * cp - sth * cq
                M[:, q_] = sth * cp + cth * cq
        if off <= tol * scale:
            break
    d = np.diag(M)
    return float(d.min()), float(d.max())


def smallest_eig_sym(S):
    """Smallest eigenvalue of a symmetric matrix (see :func:`sym_eig_extremes`)."""
    return sym_eig_extremes(S)[0]
