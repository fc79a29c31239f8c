"""Hot per-block kernels, compiled with numba when available.

Every solver-side inner loop that iterates over blocks lives here so that the
serial driver and the distributed workers execute the exact same per-block
floating-point operations (a requirement for bitwise-reproducible histories).
All kernels take a ``(blo, bhi)`` block range and only touch rows/segments of
that range, so calling them on a sub-range is equivalent to the corresponding
slice of a full-range call.

Two implementations are provided for each kernel: a numba ``@njit`` build and
a pure-numpy build.  Selection happens at import time; set ``JADMM_NO_NUMBA=1``
to force the numpy path (or it is chosen automatically when numba is not
importable).  ``benchmarks/kernel_bench.py`` times the two paths side by side.

Floating-point note: numba kernels are compiled without fastmath, so results
are deterministic within a path, but the two paths are not guaranteed to agree
bitwise (only to rounding error).
"""

import os

import numpy as np

__all__ = [
    "USING_NUMBA",
    "soft_threshold",
    "soft_threshold_vec",
    "block_products",
    "quad_rhs_blocks",
    "chol_solve_blocks",
    "proxlinear_l1_blocks",
    "scalar_l1_blocks",
    "implementations",
]

# prox-variant codes used by quad_rhs_blocks
PROX_NONE = 0
PROX_STANDARD = 1
PROX_LINEAR = 2


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _soft_threshold_np(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _soft_threshold_vec_np(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _block_products_np(At, offsets, x, blo, bhi, out):
    # out[i] = A_i x_i, with A_i^T stored as contiguous rows At[offsets[i]:offsets[i+1]]
    for b in range(blo, bhi):
        s, e = offsets[b], offsets[b + 1]
        out[b, :] = np.dot(x[s:e], At[s:e])


def _quad_rhs_blocks_np(At, offsets, prods, v, Ctd, x, codes, taus, rho, blo, bhi, out):
    for b in range(blo, bhi):
        s, e = offsets[b], offsets[b + 1]
        code = codes[b]
        tau = taus[b]
        if code == PROX_LINEAR:
            # rhs = C^T d + tau x_i - rho A_i^T v
            out[b, : e - s] = Ctd[b, : e - s] + tau * x[s:e] - rho * np.dot(At[s:e], v)
        else:
            w = prods[b] - v
            r = Ctd[b, : e - s] + rho * np.dot(At[s:e], w)
            if code == PROX_STANDARD:
                r = r + tau * x[s:e]
            out[b, : e - s] = r


def _chol_solve_blocks_np(Ls, rhs, blo, bhi, out):
    # lower-triangular forward/back substitution per block (uniform sizes)
    n = Ls.shape[1]
    for b in range(blo, bhi):
        L = Ls[b]
        y = out[b]
        for i in range(n):
            s = rhs[b, i]
            for j in range(i):
                s -= L[i, j] * y[j]
            y[i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i]
            for j in range(i + 1, n):
                s -= L[j, i] * y[j]
            y[i] = s / L[i, i]


def _proxlinear_l1_blocks_np(At, offsets, x, v, taus, rho, blo, bhi, x_out, prods_out):
    base = offsets[blo]
    for b in range(blo, bhi):
        s, e = offsets[b], offsets[b + 1]
        tau = taus[b]
        g = np.dot(At[s:e], v)
        bb = x[s:e] - (rho / tau) * g
        xn = np.sign(bb) * np.maximum(np.abs(bb) - 1.0 / tau, 0.0)
        x_out[s - base:e - base] = xn
        prods_out[b, :] = np.dot(xn, At[s:e])


def _scalar_l1_blocks_np(At, offsets, x, v, gram_diag, taus, rho, blo, bhi, x_out, prods_out):
    # exact l1 minimization for scalar blocks (n_i == 1), optional standard prox tau
    base = offsets[blo]
    for b in range(blo, bhi):
        s = offsets[b]
        a = At[s]
        w = x[s] * a - v
        denom = rho * gram_diag[b] + taus[b]
        bb = (rho * np.dot(a, w) + taus[b] * x[s]) / denom
        t = 1.0 / denom
        xn = np.sign(bb) * max(abs(bb) - t, 0.0)
        x_out[s - base] = xn
        prods_out[b, :] = xn * a


_NUMPY_IMPL = {
    "soft_threshold": _soft_threshold_np,
    "soft_threshold_vec": _soft_threshold_vec_np,
    "block_products": _block_products_np,
    "quad_rhs_blocks": _quad_rhs_blocks_np,
    "chol_solve_blocks": _chol_solve_blocks_np,
    "proxlinear_l1_blocks": _proxlinear_l1_blocks_np,
    "scalar_l1_blocks": _scalar_l1_blocks_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    import numba

    jit = lambda f: numba.njit(f, cache=True, nogil=True)  # noqa: E731

    @jit
    def soft_threshold(v, t):
        out = np.empty_like(v)
        for i in range(v.shape[0]):
            a = abs(v[i]) - t
            if a > 0.0:
                out[i] = a if v[i] > 0.0 else -a
            else:
                out[i] = 0.0
        return out

    @jit
    def soft_threshold_vec(v, t):
        out = np.empty_like(v)
        for i in range(v.shape[0]):
            a = abs(v[i]) - t[i]
            if a > 0.0:
                out[i] = a if v[i] > 0.0 else -a
            else:
                out[i] = 0.0
        return out

    @jit
    def block_products(At, offsets, x, blo, bhi, out):
        for b in range(blo, bhi):
            s, e = offsets[b], offsets[b + 1]
            out[b, :] = np.dot(x[s:e], At[s:e])

    @jit
    def quad_rhs_blocks(At, offsets, prods, v, Ctd, x, codes, taus, rho, blo, bhi, out):
        for b in range(blo, bhi):
            s, e = offsets[b], offsets[b + 1]
            code = codes[b]
            tau = taus[b]
            if code == PROX_LINEAR:
                out[b, : e - s] = Ctd[b, : e - s] + tau * x[s:e] - rho * np.dot(At[s:e], v)
            else:
                w = prods[b] - v
                r = Ctd[b, : e - s] + rho * np.dot(At[s:e], w)
                if code == PROX_STANDARD:
                    r = r + tau * x[s:e]
                out[b, : e - s] = r

    @jit
    def chol_solve_blocks(Ls, rhs, blo, bhi, out):
        n = Ls.shape[1]
        for b in range(blo, bhi):
            L = Ls[b]
            y = out[b]
            for i in range(n):
                s = rhs[b, i]
                for j in range(i):
                    s -= L[i, j] * y[j]
                y[i] = s / L[i, i]
            for i in range(n - 1, -1, -1):
                s = y[i]
                for j in range(i + 1, n):
                    s -= L[j, i] * y[j]
                y[i] = s / L[i, i]

    @jit
    def proxlinear_l1_blocks(At, offsets, x, v, taus, rho, blo, bhi, x_out, prods_out):
        base = offsets[blo]
        for b in range(blo, bhi):
            s, e = offsets[b], offsets[b + 1]
            tau = taus[b]
            g = np.dot(At[s:e], v)
            thr = 1.0 / tau
            coef = rho / tau
            for r in range(s, e):
                bb = x[r] - coef * g[r - s]
                a = abs(bb) - thr
                if a > 0.0:
                    x_out[r - base] = a if bb > 0.0 else -a
                else:
                    x_out[r - base] = 0.0
            prods_out[b, :] = np.dot(x_out[s - base:e - base], At[s:e])

    @jit
    def scalar_l1_blocks(At, offsets, x, v, gram_diag, taus, rho, blo, bhi, x_out, prods_out):
        base = offsets[blo]
        for b in range(blo, bhi):
            s = offsets[b]
            a = At[s]
            aw = 0.0
            for j in range(a.shape[0]):
                aw += a[j] * (x[s] * a[j] - v[j])
            denom = rho * gram_diag[b] + taus[b]
            bb = (rho * aw + taus[b] * x[s]) / denom
            t = 1.0 / denom
            mag = abs(bb) - t
            if mag > 0.0:
                xn = mag if bb > 0.0 else -mag
            else:
                xn = 0.0
            x_out[s - base] = xn
            prods_out[b, :] = xn * a

    return {
        "soft_threshold": soft_threshold,
        "soft_threshold_vec": soft_threshold_vec,
        "block_products": block_products,
        "quad_rhs_blocks": quad_rhs_blocks,
        "chol_solve_blocks": chol_solve_blocks,
        "proxlinear_l1_blocks": proxlinear_l1_blocks,
        "scalar_l1_blocks": scalar_l1_blocks,
    }


def implementations(use_numba):
    """Return the kernel table for one path; used by the kernel benchmark."""
    if use_numba:
        return _build_numba_impl()
    return dict(_NUMPY_IMPL)


USING_NUMBA = False
_active = dict(_NUMPY_IMPL)
if os.environ.get("JADMM_NO_NUMBA", "").strip() not in ("1", "true", "yes"):
    try:
        _active = _build_numba_impl()
        USING_NUMBA = True
    except ImportError:
        pass

soft_threshold = _active["soft_threshold"]
soft_threshold_vec = _active["soft_threshold_vec"]
block_products = _active["block_products"]
quad_rhs_blocks = _active["quad_rhs_blocks"]
chol_solve_blocks = _active["chol_solve_blocks"]
proxlinear_l1_blocks = _active["proxlinear_l1_blocks"]
scalar_l1_blocks = _active["scalar_l1_blocks"]
