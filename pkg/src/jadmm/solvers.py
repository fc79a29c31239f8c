"""Iteration schemes for separable programs with linear coupling.

Schemes
-------
* ``prox_jacobi``  — proximal Jacobian splitting: all blocks updated in
  parallel from the same snapshot, each with a proximal term ||x_i - x_i^k||^2
  in the metric P_i, then a damped dual step lambda <- lambda - gamma rho (Ax - c).
  Optionally driven by the adaptive tuner.
* ``jacobi``       — the same with P_i = 0 and gamma = 1 (may diverge on
  general data; the divergence guard terminates such runs cleanly).
* ``gauss_seidel`` — sequential sweep; for N = 2 this is classic ADMM.
* ``vsadmm``       — variable splitting: auxiliary z with sum z_i = 0, one
  dual vector per block, closed-form z-step, parallel x-step.
* ``corr_jacobi``  — a plain Jacobian predictor followed by the correction
  u <- u - alpha (u - u~) with a constant step alpha.
* ``dual_decomp``  — dual ascent: exact block minimization of the plain
  Lagrangian, then a (constant or diminishing) dual subgradient step.

The Jacobi-family block updates run through a per-block engine whose kernels
are shared verbatim with the distributed runtime, so a serial run and a
distributed run of the same configuration produce identical histories.

Within one Jacobi iteration the N block updates are independent; set
``JADMM_BLOCK_THREADS`` to update contiguous block chunks concurrently (the
reduction over per-block products is performed in fixed block order either
way, so results do not depend on the thread count).
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .core import (BlockVector, BoxTerm, CustomTerm, Iterate, L1Term,
                   ProxUnavailable, QuadraticTerm, ShapeError, ZeroTerm)
from .diagnostics import IterationRecord
from .prox import (ProxExplicit, ProxLinear, ProxNone, ProxSpec, ProxStandard,
                   spectral_norm_sq)
from .tuning import IncreaseAndRestart, TunerConfig, shrink_prox, tune_step

__all__ = [
    "ConfigurationError",
    "SolverConfig",
    "History",
    "solve",
    "solve_prox_jacobi",
    "solve_jacobi",
    "solve_gauss_seidel",
    "solve_vsadmm",
    "solve_corr_jacobi",
    "solve_dual_decomp",
    "vsadmm_z_update",
    "SCHEMES",
]

SCHEMES = ("prox_jacobi", "jacobi", "gauss_seidel", "vsadmm", "corr_jacobi",
           "dual_decomp")

DIVERGENCE_FACTOR = 1e8


class ConfigurationError(ValueError):
    """Problem/config combination cannot be iterated."""


@dataclass
class SolverConfig:
    """Scheme-independent solver configuration.

    ``stop_tol`` bounds the relative primal residual ||Ax - c|| / max(1, ||c||)
    and is checked at recorded iterations.  ``alpha`` is the correction step of
    ``corr_jacobi`` (alpha = 1 reduces it to plain Jacobian ADMM).
    ``step_rule`` applies to ``dual_decomp``: ``("constant", a)``,
    ``("diminishing", c0)`` for c0/sqrt(k), or ``("default",)`` which uses
    1/(||A||^2 sqrt(k)).
    """
    scheme: str
    rho: float
    gamma: float = 1.0
    max_iters: int = 1000
    stop_tol: float = 0.0
    prox: ProxSpec = None
    alpha: float = 0.5
    step_rule: tuple = ("default",)
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be > 0, got {self.rho}")
        if not (0.0 < self.gamma < 2.0):
            raise ConfigurationError(f"gamma must lie in (0, 2), got {self.gamma}")
        if self.max_iters < 0:
            raise ConfigurationError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.stop_tol < 0:
            raise ConfigurationError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.record_every < 1:
            raise ConfigurationError(f"record_every must be >= 1, got {self.record_every}")
        if self.scheme == "corr_jacobi" and not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(
                f"corr_jacobi needs 0 < alpha <= 1, got {self.alpha}"
            )
        if self.step_rule[0] not in ("constant", "diminishing", "default"):
            raise ConfigurationError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule[0] in ("constant", "diminishing"):
            if len(self.step_rule) != 2 or not self.step_rule[1] > 0:
                raise ConfigurationError(f"step rule needs a positive value, got {self.step_rule!r}")


@dataclass
class History:
    """Result of a solve: per-iteration records, final state, stop reason."""
    records: list
    final: Iterate
    reason: str  # "tolerance" | "max_iters" | "divergence_guard"
    comm: object = None  # set by the distributed runtime only

    @property
    def iterations(self):
        return self.records[-1].k if self.records else 0


# ---------------------------------------------------------------------------
# oracle validation
# ---------------------------------------------------------------------------

def _pair_error(i, term, pvar):
    return ConfigurationError(
        f"block {i}: no subproblem oracle for objective kind "
        f"{term.kind!r} with prox {type(pvar).__name__}"
    )


def _validate_pairs(objective, prox, A):
    """Reject unsupported (objective kind, prox variant) pairs before iterating."""
    for i, term in enumerate(objective.terms):
        pvar = prox.blocks[i]
        ni = A.col_sizes[i]
        if term.kind in ("quadratic", "zero"):
            continue  # normal-equation solve handles every variant
        if term.kind == "l1":
            if isinstance(pvar, ProxLinear):
                continue
            if ni == 1 and isinstance(pvar, (ProxNone, ProxStandard)):
                continue  # exact scalar shrinkage
            raise _pair_error(i, term, pvar)
        if term.kind in ("box", "custom"):
            if isinstance(pvar, ProxLinear):
                try:
                    term.prox(np.zeros(ni), 1.0)
                except ProxUnavailable:
                    raise _pair_error(i, term, pvar) from None
                continue
            raise _pair_error(i, term, pvar)
        raise _pair_error(i, term, pvar)


# ---------------------------------------------------------------------------
# block-update engine (shared by serial solvers and distributed workers)
# ---------------------------------------------------------------------------

class _JacobiBlockEngine:
    """Per-block subproblem solvers for one Jacobi-family iteration.

    ``update_range`` updates blocks [blo, bhi) from an immutable snapshot
    (x, v, prods) with v = Ax - c - lambda/rho, writing the new segment of x
    and the new per-block products in place.  All floating-point work on block
    i depends only on block-i data, so any partition of the range across
    workers or threads yields bitwise-identical results.
    """

    def __init__(self, problem, prox, rho):
        self.A = problem.operator
        self.objective = problem.objective
        self.rho = float(rho)
        self.At = self.A.packed_t
        self.offsets = self.A.col_offsets
        self.N = self.A.n_blocks
        self.m = self.A.m
        sizes = self.A.col_sizes
        self._uniform = len(set(sizes)) == 1
        self._gram_cache = {}
        self._ata_cache = {}
        kinds = [t.kind for t in self.objective.terms]
        if all(k == "l1" for k in kinds) and all(
                isinstance(p, ProxLinear) for p in prox.blocks):
            self.mode = "l1_fused"
        elif all(k in ("quadratic", "zero") for k in kinds) and self._uniform and all(
                isinstance(p, (ProxNone, ProxStandard, ProxLinear)) for p in prox.blocks):
            self.mode = "quad_stacked"
        elif all(k == "l1" for k in kinds) and all(s == 1 for s in sizes) and all(
                isinstance(p, (ProxNone, ProxStandard)) for p in prox.blocks):
            self.mode = "l1_scalar"
        else:
            self.mode = "generic"
        if self.mode == "quad_stacked":
            nb = sizes[0]
            self._nb = nb
            self._ctd = np.zeros((self.N, nb))
            self._gram = np.zeros((self.N, nb, nb))
            self._ata = np.empty((self.N, nb, nb))
            for i, t in enumerate(self.objective.terms):
                Ai = self.A.block(i)
                self._ata[i] = Ai.T @ Ai
                if t.kind == "quadratic":
                    self._ctd[i] = t.ctd
                    self._gram[i] = t.gram
            self._L = np.empty((self.N, nb, nb))
        if self.mode == "l1_scalar":
            self._gram_diag = np.array(
                [float(np.dot(self.A.block(i).ravel(), self.A.block(i).ravel()))
                 for i in range(self.N)])
        self.set_prox(prox)

    def set_prox(self, prox):
        """Install a (possibly tuner-grown) prox spec; invalidates factorizations."""
        _validate_pairs(self.objective, prox, self.A)
        self.prox = prox
        self._chol = {}
        if self.mode in ("l1_fused", "l1_scalar"):
            self._taus = np.array([getattr(p, "tau", 0.0) for p in prox.blocks])
        if self.mode == "quad_stacked":
            codes = np.empty(self.N, dtype=np.int64)
            taus = np.empty(self.N)
            for i, p in enumerate(prox.blocks):
                if isinstance(p, ProxNone):
                    codes[i], taus[i] = kernels.PROX_NONE, 0.0
                elif isinstance(p, ProxStandard):
                    codes[i], taus[i] = kernels.PROX_STANDARD, p.tau
                else:
                    codes[i], taus[i] = kernels.PROX_LINEAR, p.tau
            self._codes, self._stacked_taus = codes, taus
            self._fact_lo = self._fact_hi = 0

    # -- factorizations -----------------------------------------------------

    def ensure_factors(self, blo, bhi):
        """Factor the quadratic systems for blocks [blo, bhi); no-op otherwise."""
        if self.mode != "quad_stacked":
            return
        if self._fact_lo <= blo and bhi <= self._fact_hi and self._fact_lo < self._fact_hi:
            return
        nb = self._nb
        eye = np.eye(nb)
        for i in range(blo, bhi):
            M = self._gram[i].copy()
            code = self._codes[i]
            if code != kernels.PROX_LINEAR:
                M += self.rho * self._ata[i]
            if code != kernels.PROX_NONE:
                M += self._stacked_taus[i] * eye
            try:
                self._L[i] = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ConfigurationError(
                    f"block {i}: quadratic subsystem is singular; "
                    "add a proximal term"
                ) from None
        self._fact_lo, self._fact_hi = blo, bhi

    def _block_gram(self, i):
        g = self._ata_cache.get(i)
        if g is None:
            Ai = self.A.block(i)
            g = Ai.T @ Ai
            self._ata_cache[i] = g
        return g

    def _generic_solver(self, i):
        fact = self._chol.get(i)
        if fact is not None:
            return fact
        term = self.objective.terms[i]
        pvar = self.prox.blocks[i]
        ni = self.A.col_sizes[i]
        M = term.gram.copy() if term.kind == "quadratic" else np.zeros((ni, ni))
        if not isinstance(pvar, ProxLinear):
            M += self.rho * self._block_gram(i)
        if isinstance(pvar, (ProxStandard, ProxLinear)):
            M += pvar.tau * np.eye(ni)
        elif isinstance(pvar, ProxExplicit):
            M += pvar.P
        try:
            fact = ("chol", cho_factor(M, lower=True))
        except np.linalg.LinAlgError:
            fact = ("lstsq", M)
        self._chol[i] = fact
        return fact

    # -- the per-block update -----------------------------------------------

    def update_range(self, x, v, prods, blo, bhi, x_out, prods_out):
        offs = self.offsets
        if self.mode == "l1_fused":
            kernels.proxlinear_l1_blocks(
                self.At, offs, x, v, self._taus, self.rho, blo, bhi,
                x_out[offs[blo]:offs[bhi]], prods_out)
            return
        if self.mode == "l1_scalar":
            kernels.scalar_l1_blocks(
                self.At, offs, x, v, self._gram_diag, self._taus, self.rho,
                blo, bhi, x_out[offs[blo]:offs[bhi]], prods_out)
            return
        if self.mode == "quad_stacked":
            self.ensure_factors(blo, bhi)
            rhs = np.empty((self.N, self._nb))
            kernels.quad_rhs_blocks(
                self.At, offs, prods, v, self._ctd, x, self._codes,
                self._stacked_taus, self.rho, blo, bhi, rhs)
            sol = np.empty((self.N, self._nb))
            kernels.chol_solve_blocks(self._L, rhs, blo, bhi, sol)
            x_out[offs[blo]:offs[bhi]] = sol[blo:bhi].reshape(-1)
            kernels.block_products(self.At, offs, x_out, blo, bhi, prods_out)
            return
        for i in range(blo, bhi):
            s, e = offs[i], offs[i + 1]
            xn = self._update_one(i, x[s:e], v, prods[i])
            x_out[s:e] = xn
            prods_out[i] = xn @ self.At[s:e]

    def _update_one(self, i, xi, v, prod_i):
        term = self.objective.terms[i]
        pvar = self.prox.blocks[i]
        At_i = self.At[self.offsets[i]:self.offsets[i + 1]]
        rho = self.rho
        if term.kind in ("quadratic", "zero"):
            if isinstance(pvar, ProxLinear):
                rhs = pvar.tau * xi - rho * (At_i @ v)
            else:
                w = prod_i - v
                rhs = rho * (At_i @ w)
                if isinstance(pvar, ProxStandard):
                    rhs = rhs + pvar.tau * xi
                elif isinstance(pvar, ProxExplicit):
                    rhs = rhs + pvar.P @ xi
            if term.kind == "quadratic":
                rhs = rhs + term.ctd
            how, fact = self._generic_solver(i)
            if how == "chol":
                return cho_solve(fact, rhs)
            return np.linalg.lstsq(fact, rhs, rcond=None)[0]
        if term.kind == "l1" and not isinstance(pvar, ProxLinear):
            # exact scalar shrinkage (validated: n_i == 1)
            a = At_i[0]
            g = float(np.dot(a, a))
            tau = pvar.tau if isinstance(pvar, ProxStandard) else 0.0
            w = xi[0] * a - v
            denom = rho * g + tau
            b = (rho * float(np.dot(a, w)) + tau * xi[0]) / denom
            t = 1.0 / denom
            mag = abs(b) - t
            if mag > 0.0:
                return np.array([mag if b > 0.0 else -mag])
            return np.zeros(1)
        # prox-linear surrogate: one prox call per block
        tau = pvar.tau
        b = xi - (rho / tau) * (At_i @ v)
        return np.asarray(term.prox(b, 1.0 / tau), dtype=np.float64)


# ---------------------------------------------------------------------------
# shared Jacobi-family driver (used by the serial solvers and the runtime)
# ---------------------------------------------------------------------------

def _objective_blocks(objective, x, offsets):
    return np.array([t.value(x[offsets[i]:offsets[i + 1]])
                     for i, t in enumerate(objective.terms)])


def _gx_contributions(prox, dx_sq, dprod_sq, rho, dx, offsets):
    """Per-block x-part contributions (P_i + rho A_i^T A_i quadratic forms)."""
    out = np.empty(len(prox.blocks))
    for i, p in enumerate(prox.blocks):
        if isinstance(p, ProxLinear):
            out[i] = p.tau * dx_sq[i]
        elif isinstance(p, ProxNone):
            out[i] = rho * dprod_sq[i]
        elif isinstance(p, ProxStandard):
            out[i] = p.tau * dx_sq[i] + rho * dprod_sq[i]
        else:
            seg = dx[offsets[i]:offsets[i + 1]]
            out[i] = float(seg @ p.P @ seg) + rho * dprod_sq[i]
    return out


class _StarData:
    def __init__(self, u_star, A, offsets):
        A.check_conforms(u_star.x)
        if u_star.lam.size != A.m:
            raise ShapeError("u_star lambda length does not match operator")
        self.x = u_star.x.data.copy()
        self.lam = u_star.lam.copy()
        self.prods = A.block_products(u_star.x)


def _err_G_sq(prox, rho, gamma, x, prods, lam, star, offsets):
    e = x - star.x
    ep = prods - star.prods
    e_sq = np.add.reduceat(e * e, offsets[:-1])
    ep_sq = np.einsum("ij,ij->i", ep, ep)
    gx = _gx_contributions(prox, e_sq, ep_sq, rho, e, offsets)
    dl = lam - star.lam
    return float(gx.sum()) + float(np.dot(dl, dl)) / (gamma * rho)


@dataclass
class _Proposal:
    x: np.ndarray
    prods: np.ndarray
    x_pred: np.ndarray = None
    prods_pred: np.ndarray = None


class _JacobiDriver:
    """The per-iteration control flow shared by serial and distributed runs.

    ``update`` performs all block updates for one iteration from a snapshot;
    ``on_prox_change`` propagates tuner decisions to whoever owns the block
    solvers (the engine in a serial run, the workers in a distributed one).
    """

    def __init__(self, problem, config, update, on_prox_change, prox0,
                 tuner=None, u_star=None, callback=None, x0=None, lam0=None):
        self.A = problem.operator
        self.objective = problem.objective
        self.config = config
        self.update = update
        self.on_prox_change = on_prox_change
        self.prox = prox0
        self.tuner = tuner
        self.callback = callback
        self.offsets = self.A.col_offsets
        self.sizes = np.diff(self.offsets)
        N, m, n = self.A.n_blocks, self.A.m, self.A.n
        if x0 is None:
            self.x = np.zeros(n)
        else:
            self.A.check_conforms(x0)
            self.x = x0.data.copy()
        self.lam = np.zeros(m) if lam0 is None else np.asarray(lam0, dtype=np.float64).copy()
        if self.lam.size != m:
            raise ShapeError(f"lambda0 has length {self.lam.size}, expected {m}")
        self.prods = np.empty((N, m))
        kernels.block_products(self.A.packed_t, self.offsets, self.x, 0, N, self.prods)
        self.Ax = self.prods.sum(axis=0)
        self.star = None if u_star is None else _StarData(u_star, self.A, self.offsets)

    def _wrap_iterate(self, x, lam):
        bv = BlockVector.from_packed(x, self.sizes)
        return Iterate(bv, lam)

    def run(self):
        cfg = self.config
        A, c = self.A, self.A.rhs
        rho, gamma = cfg.rho, cfg.gamma
        N = A.n_blocks
        offsets = self.offsets
        cnorm = max(1.0, float(np.linalg.norm(c)))
        u0 = np.sqrt(float(np.dot(self.x, self.x)) + float(np.dot(self.lam, self.lam)))
        guard = DIVERGENCE_FACTOR * (1.0 + u0)
        obj_cur = float(_objective_blocks(self.objective, self.x, offsets).sum())
        resid_cur = float(np.linalg.norm(self.Ax - c))
        err_cur = None
        if self.star is not None:
            err_cur = _err_G_sq(self.prox, rho, gamma, self.x, self.prods,
                                self.lam, self.star, offsets)
        records = []
        reason = "max_iters"
        increases = 0
        decreases = 0
        quiet = 0
        corr = cfg.scheme == "corr_jacobi"
        for k in range(1, cfg.max_iters + 1):
            t0 = time.perf_counter()
            r = self.Ax - c
            v = r - self.lam / rho
            prop = self.update(k, self.x, v, self.prods, self.lam, r)
            if corr:
                prods_pred = prop.prods_pred
                Ax_pred = prods_pred.sum(axis=0)
                r_pred = Ax_pred - c
                lam_pred = self.lam - (gamma * rho) * r_pred
                if cfg.alpha == 1.0:
                    x_new, prods_new = prop.x_pred, prop.prods_pred
                    Ax_new, r_new, lam_new = Ax_pred, r_pred, lam_pred
                else:
                    x_new, prods_new = prop.x, prop.prods
                    Ax_new = prods_new.sum(axis=0)
                    r_new = Ax_new - c
                    lam_new = self.lam - cfg.alpha * (self.lam - lam_pred)
            else:
                x_new, prods_new = prop.x, prop.prods
                Ax_new = prods_new.sum(axis=0)
                r_new = Ax_new - c
                lam_new = self.lam - (gamma * rho) * r_new

            # transition diagnostics in the solver metric
            dx = self.x - x_new
            dprod = self.prods - prods_new
            dx_sq = np.add.reduceat(dx * dx, offsets[:-1])
            dprod_sq = np.einsum("ij,ij->i", dprod, dprod)
            gx = float(_gx_contributions(self.prox, dx_sq, dprod_sq, rho, dx,
                                         offsets).sum())
            dl = self.lam - lam_new
            dl_sq = float(np.dot(dl, dl))
            adx = self.Ax - Ax_new
            h = gx + (2.0 - gamma) / (rho * gamma * gamma) * dl_sq \
                + (2.0 / gamma) * float(np.dot(dl, adx))
            du_G = gx + dl_sq / (gamma * rho)
            du_Gp = du_G - rho * float(np.dot(adx, adx))

            tuner_event = None
            if self.tuner is not None:
                decision = tune_step(h, du_G, self.prox, self.tuner,
                                     rho=rho, gamma=gamma, increases_done=increases)
                if isinstance(decision, IncreaseAndRestart):
                    increases += 1
                    quiet = 0
                    self.prox = decision.new_prox
                    self.on_prox_change(self.prox, restart=True)
                    taus = self.prox.taus()
                    tau_max = float(np.nanmax(taus)) if taus.size else 0.0
                    rec = IterationRecord(
                        k=k, objective=obj_cur, primal_residual=resid_cur,
                        h_value=h, du_G_sq=du_G, du_Gp_sq=du_Gp, err_G_sq=err_cur,
                        tuner_event=f"increase_restart;count={increases};tau_max={tau_max!r}",
                        duration_s=time.perf_counter() - t0,
                    )
                    if k % cfg.record_every == 0 or k == cfg.max_iters:
                        records.append(rec)
                        if self.callback is not None:
                            self.callback(k, self._wrap_iterate(self.x, self.lam), rec)
                    continue
                quiet += 1
                if (self.tuner.decrease_every is not None
                        and quiet >= self.tuner.decrease_every
                        and decreases < self.tuner.max_decreases):
                    decreases += 1
                    quiet = 0
                    self.prox = shrink_prox(self.prox, self.tuner.decrease_factor)
                    self.on_prox_change(self.prox, restart=False)
                    tuner_event = f"decrease;count={decreases}"

            # commit
            obj_new = float(_objective_blocks(self.objective, x_new, offsets).sum())
            resid_new = float(np.linalg.norm(r_new))
            err_new = None
            if self.star is not None:
                err_new = _err_G_sq(self.prox, rho, gamma, x_new, prods_new,
                                    lam_new, self.star, offsets)
            self.x, self.prods = x_new, prods_new
            self.Ax, self.lam = Ax_new, lam_new
            obj_cur, resid_cur, err_cur = obj_new, resid_new, err_new

            u_sq = float(np.dot(x_new, x_new)) + float(np.dot(lam_new, lam_new))
            diverged = (not np.isfinite(u_sq)) or np.sqrt(u_sq) > guard
            at_record = (k % cfg.record_every == 0) or k == cfg.max_iters or diverged
            hit_tol = at_record and resid_new <= cfg.stop_tol * cnorm
            if at_record:
                rec = IterationRecord(
                    k=k, objective=obj_new, primal_residual=resid_new,
                    h_value=h, du_G_sq=du_G, du_Gp_sq=du_Gp, err_G_sq=err_new,
                    tuner_event=tuner_event, duration_s=time.perf_counter() - t0,
                )
                records.append(rec)
                if self.callback is not None:
                    self.callback(k, self._wrap_iterate(x_new, lam_new), rec)
            if diverged:
                reason = "divergence_guard"
                break
            if hit_tol:
                reason = "tolerance"
                break
        return History(records, self._wrap_iterate(self.x, self.lam), reason)


def _block_threads():
    try:
        return max(1, int(os.environ.get("JADMM_BLOCK_THREADS", "1")))
    except ValueError:
        return 1


class _SerialUpdate:
    """Serial (optionally thread-chunked) block update for one engine."""

    def __init__(self, engine, alpha=None):
        self.engine = engine
        self.alpha = alpha  # corr_jacobi correction step, else None
        self.n = int(engine.offsets[-1])
        self.threads = _block_threads()
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def _run_blocks(self, x, v, prods, x_out, p_out):
        N = self.engine.N
        if self._pool is None or N < 2:
            self.engine.update_range(x, v, prods, 0, N, x_out, p_out)
            return
        self.engine.ensure_factors(0, N)  # avoid racy lazy factorization
        T = min(self.threads, N)
        bounds = [(t * N) // T for t in range(T + 1)]
        futures = [
            self._pool.submit(self.engine.update_range, x, v, prods,
                              bounds[t], bounds[t + 1], x_out, p_out)
            for t in range(T)
        ]
        for f in futures:
            f.result()

    def __call__(self, k, x, v, prods, lam, r):
        # fresh buffers each call: the driver keeps references on commit
        x_new = np.empty(self.n)
        p_new = np.empty((self.engine.N, self.engine.m))
        self._run_blocks(x, v, prods, x_new, p_new)
        if self.alpha is None:
            return _Proposal(x_new, p_new)
        if self.alpha == 1.0:
            return _Proposal(x_new, p_new, x_pred=x_new, prods_pred=p_new)
        xb = x - self.alpha * (x - x_new)
        pb = np.empty_like(p_new)
        kernels.block_products(self.engine.At, self.engine.offsets, xb, 0,
                               self.engine.N, pb)
        return _Proposal(xb, pb, x_pred=x_new, prods_pred=p_new)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=False)


def _resolve_prox(config, N):
    prox = config.prox if config.prox is not None else ProxSpec.none(N)
    if prox.n_blocks != N:
        raise ConfigurationError(
            f"prox spec has {prox.n_blocks} blocks, problem has {N}")
    return prox


def _run_jacobi_family(problem, config, prox, tuner=None, u_star=None,
                       callback=None, x0=None, lam0=None):
    engine = _JacobiBlockEngine(problem, prox, config.rho)
    alpha = config.alpha if config.scheme == "corr_jacobi" else None
    update = _SerialUpdate(engine, alpha=alpha)

    def on_prox_change(new_prox, restart):
        engine.set_prox(new_prox)

    driver = _JacobiDriver(problem, config, update, on_prox_change, prox,
                           tuner=tuner, u_star=u_star, callback=callback,
                           x0=x0, lam0=lam0)
    try:
        return driver.run()
    finally:
        update.close()


def solve_prox_jacobi(problem, config, tuner=None, *, u_star=None,
                      callback=None, x0=None, lam0=None):
    """Proximal Jacobian splitting, optionally with the adaptive tuner.

    All N block updates of one iteration read the same (x^k, lambda^k)
    snapshot; the dual step is lambda^{k+1} = lambda^k - gamma rho (A x^{k+1} - c).
    When ``tuner`` (a :class:`jadmm.tuning.TunerConfig`) is given, failed
    contraction tests grow every P_i and roll the iterate back.
    """
    if config.scheme != "prox_jacobi":
        raise ConfigurationError(f"expected scheme prox_jacobi, got {config.scheme!r}")
    prox = _resolve_prox(config, problem.operator.n_blocks)
    prox.warn_if_indefinite(problem.operator, config.rho)
    if tuner is not None and not isinstance(tuner, TunerConfig):
        raise ConfigurationError("tuner must be a TunerConfig")
    if tuner is not None:
        # a zero proximal block cannot grow under alpha scaling alone
        from .tuning import _per_block
        betas = _per_block(tuner.beta, prox.n_blocks, "beta")
        q = config.rho if tuner.q_scale is None else tuner.q_scale
        for i, b in enumerate(prox.blocks):
            if isinstance(b, ProxNone) and betas[i] * q <= 0:
                raise ConfigurationError(
                    f"block {i}: tuner cannot grow a zero proximal block "
                    "with beta*q_scale = 0")
    return _run_jacobi_family(problem, config, prox, tuner=tuner,
                              u_star=u_star, callback=callback, x0=x0, lam0=lam0)


def solve_jacobi(problem, config, *, u_star=None, callback=None, x0=None, lam0=None):
    """Plain Jacobian splitting: P_i = 0 and gamma = 1 enforced.

    Expected to diverge on general data (the divergence guard then terminates
    the run with reason ``divergence_guard``); converges under the
    near-orthogonality condition checked by
    :func:`jadmm.conditions.check_near_orthogonality`.
    """
    if config.scheme != "jacobi":
        raise ConfigurationError(f"expected scheme jacobi, got {config.scheme!r}")
    if config.gamma != 1.0:
        raise ConfigurationError("jacobi requires gamma = 1")
    prox = _resolve_prox(config, problem.operator.n_blocks)
    if not prox.is_none():
        raise ConfigurationError("jacobi requires an all-none prox spec")
    return _run_jacobi_family(problem, config, prox, u_star=u_star,
                              callback=callback, x0=x0, lam0=lam0)


def solve_corr_jacobi(problem, config, *, u_star=None, callback=None,
                      x0=None, lam0=None):
    """Jacobian predictor plus constant-step correction.

    Each iteration generates a predictor u~ by one plain Jacobian sweep (exact
    block minimization), then sets u^{k+1} = u^k - alpha (u^k - u~).  With
    alpha = 1 the correction vanishes and the run matches :func:`solve_jacobi`.
    """
    if config.scheme != "corr_jacobi":
        raise ConfigurationError(f"expected scheme corr_jacobi, got {config.scheme!r}")
    if config.gamma != 1.0:
        raise ConfigurationError("corr_jacobi requires gamma = 1")
    prox = _resolve_prox(config, problem.operator.n_blocks)
    if not prox.is_none():
        raise ConfigurationError("corr_jacobi predictor uses exact minimization; "
                                 "prox spec must be all none")
    return _run_jacobi_family(problem, config, prox, u_star=u_star,
                              callback=callback, x0=x0, lam0=lam0)


# ---------------------------------------------------------------------------
# Gauss-Seidel
# ---------------------------------------------------------------------------

def _exact_block_min(term, At_i, A_i, rho, w, gram, chol_cache, i):
    """argmin f_i(x) + rho/2 ||A_i x - w||^2 (no proximal term)."""
    if term.kind in ("quadratic", "zero"):
        rhs = rho * (At_i @ w)
        if term.kind == "quadratic":
            rhs = rhs + term.ctd
        fact = chol_cache.get(i)
        if fact is None:
            M = (term.gram if term.kind == "quadratic" else 0.0) + rho * gram
            try:
                fact = ("chol", cho_factor(M, lower=True))
            except np.linalg.LinAlgError:
                fact = ("lstsq", M)
            chol_cache[i] = fact
        how, data = fact
        if how == "chol":
            return cho_solve(data, rhs)
        return np.linalg.lstsq(data, rhs, rcond=None)[0]
    if term.kind == "l1" and At_i.shape[0] == 1:
        a = At_i[0]
        g = float(np.dot(a, a))
        b = float(np.dot(a, w)) / g
        t = 1.0 / (rho * g)
        mag = abs(b) - t
        return np.array([mag if b > 0 else -mag]) if mag > 0 else np.zeros(1)
    raise ConfigurationError(
        f"block {i}: objective kind {term.kind!r} has no exact minimizer "
        "for sequential sweeps")


def solve_gauss_seidel(problem, config, *, u_star=None, callback=None,
                       x0=None, lam0=None, _sweep_order=None):
    """Sequential Gauss-Seidel sweep; classic two-block ADMM when N = 2.

    Block i is minimized against the freshest values of all other blocks,
    then lambda^{k+1} = lambda^k - rho (sum_i A_i x_i^{k+1} - c).  For N = 2
    the records carry the essential-variable distance dw_H_sq and the
    primal/dual residual norms.
    """
    if config.scheme != "gauss_seidel":
        raise ConfigurationError(f"expected scheme gauss_seidel, got {config.scheme!r}")
    if config.gamma != 1.0:
        raise ConfigurationError("gauss_seidel uses the undamped dual step; gamma must be 1")
    A = problem.operator
    objective = problem.objective
    N, m = A.n_blocks, A.m
    prox = _resolve_prox(config, N)
    if not prox.is_none():
        raise ConfigurationError("gauss_seidel performs exact minimization; "
                                 "prox spec must be all none")
    order = list(range(N)) if _sweep_order is None else list(_sweep_order)
    if sorted(order) != list(range(N)):
        raise ConfigurationError(f"sweep order must permute 0..{N - 1}")
    rho = config.rho
    c = A.rhs
    offsets = A.col_offsets
    sizes = np.diff(offsets)
    At = A.packed_t
    x = np.zeros(A.n) if x0 is None else (A.check_conforms(x0) or x0.data.copy())
    lam = np.zeros(m) if lam0 is None else np.asarray(lam0, dtype=np.float64).copy()
    if lam.size != m:
        raise ShapeError(f"lambda0 has length {lam.size}, expected {m}")
    prods = A.block_products(BlockVector.from_packed(x, sizes))
    Ax = prods.sum(axis=0)
    grams = [A.block(i).T @ A.block(i) for i in range(N)]
    chol_cache = {}
    cnorm = max(1.0, float(np.linalg.norm(c)))
    guard = DIVERGENCE_FACTOR * (1.0 + np.sqrt(float(np.dot(x, x)) + float(np.dot(lam, lam))))
    records = []
    reason = "max_iters"
    for k in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        lam_old = lam
        prods_old = prods.copy()
        target = c + lam / rho
        for i in order:
            s, e = offsets[i], offsets[i + 1]
            others = np.zeros(m)
            for j in range(N):
                if j != i:
                    others += prods[j]
            w = target - others
            xn = _exact_block_min(objective.terms[i], At[s:e], A.block(i), rho,
                                  w, grams[i], chol_cache, i)
            x[s:e] = xn
            prods[i] = xn @ At[s:e]
        Ax = prods.sum(axis=0)
        r = Ax - c
        lam = lam - rho * r
        obj = float(_objective_blocks(objective, x, offsets).sum())
        resid = float(np.linalg.norm(r))
        dw_H = r_p_norm = r_d_norm = None
        if N == 2:
            dl = lam_old - lam
            dp2 = prods_old[1] - prods[1]
            dw_H = rho * float(np.dot(dp2, dp2)) + float(np.dot(dl, dl)) / rho
            r_p_norm = resid
            r_d_vec = rho * (A.block(0).T @ dp2)
            r_d_norm = float(np.linalg.norm(r_d_vec))
        u_sq = float(np.dot(x, x)) + float(np.dot(lam, lam))
        diverged = (not np.isfinite(u_sq)) or np.sqrt(u_sq) > guard
        at_record = (k % config.record_every == 0) or k == config.max_iters or diverged
        if at_record:
            rec = IterationRecord(k=k, objective=obj, primal_residual=resid,
                                  dw_H_sq=dw_H, r_p_norm=r_p_norm, r_d_norm=r_d_norm,
                                  duration_s=time.perf_counter() - t0)
            records.append(rec)
            if callback is not None:
                callback(k, Iterate(BlockVector.from_packed(x, sizes), lam), rec)
        if diverged:
            reason = "divergence_guard"
            break
        if at_record and resid <= config.stop_tol * cnorm:
            reason = "tolerance"
            break
    final = Iterate(BlockVector.from_packed(x, sizes), lam)
    return History(records, final, reason)


# ---------------------------------------------------------------------------
# variable-splitting ADMM
# ---------------------------------------------------------------------------

def vsadmm_z_update(prods, c, duals, rho):
    """Closed-form z-step: z_i = q_i - mean(q) with q_i = A_i x_i - c/N - lambda_i/rho.

    The mean subtraction enforces sum_i z_i = 0.
    """
    q = prods - c / prods.shape[0] - duals / rho
    return q - q.mean(axis=0)


def solve_vsadmm(problem, config, *, u_star=None, callback=None, x0=None,
                 lam0=None):
    """Variable-splitting ADMM with per-block dual vectors.

    l1 blocks are handled by the prox-linear surrogate with
    tau_i = 1.01 rho ||A_i||^2 (which guarantees the surrogate majorizes the
    coupling); quadratic blocks are minimized exactly.  The final iterate's
    lambda is the mean of the per-block duals (they agree at optimality).
    """
    if config.scheme != "vsadmm":
        raise ConfigurationError(f"expected scheme vsadmm, got {config.scheme!r}")
    A = problem.operator
    objective = problem.objective
    N, m = A.n_blocks, A.m
    if not _resolve_prox(config, N).is_none():
        raise ConfigurationError("vsadmm chooses its own surrogate parameters; "
                                 "prox spec must be all none")
    rho = config.rho
    c = A.rhs
    c_over_N = c / N
    offsets = A.col_offsets
    sizes = np.diff(offsets)
    At = A.packed_t
    x = np.zeros(A.n) if x0 is None else (A.check_conforms(x0) or x0.data.copy())
    duals = np.zeros((N, m))
    if lam0 is not None:
        lam0 = np.asarray(lam0, dtype=np.float64)
        if lam0.shape == (m,):
            duals[:] = lam0
        elif lam0.shape == (N, m):
            duals[:] = lam0
        else:
            raise ShapeError(f"vsadmm lambda0 must be (m,) or (N, m), got {lam0.shape}")
    prods = A.block_products(BlockVector.from_packed(x, sizes))
    taus = np.zeros(N)
    chol_cache = {}
    grams = {}
    for i, t in enumerate(objective.terms):
        if t.kind in ("l1", "box", "custom"):
            taus[i] = 1.01 * rho * spectral_norm_sq(A.block(i))
        elif t.kind in ("quadratic", "zero"):
            grams[i] = A.block(i).T @ A.block(i)
        else:
            raise ConfigurationError(f"block {i}: unsupported kind {t.kind!r}")
    cnorm = max(1.0, float(np.linalg.norm(c)))
    guard = DIVERGENCE_FACTOR * (1.0 + np.sqrt(float(np.dot(x, x))))
    records = []
    reason = "max_iters"
    for k in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        z = vsadmm_z_update(prods, c, duals, rho)
        for i, term in enumerate(objective.terms):
            s, e = offsets[i], offsets[i + 1]
            target = z[i] + c_over_N + duals[i] / rho
            if term.kind in ("quadratic", "zero"):
                rhs = rho * (At[s:e] @ target)
                if term.kind == "quadratic":
                    rhs = rhs + term.ctd
                fact = chol_cache.get(i)
                if fact is None:
                    M = (term.gram if term.kind == "quadratic" else 0.0) + rho * grams[i]
                    try:
                        fact = ("chol", cho_factor(M, lower=True))
                    except np.linalg.LinAlgError:
                        fact = ("lstsq", M)
                    chol_cache[i] = fact
                how, data = fact
                xn = cho_solve(data, rhs) if how == "chol" else \
                    np.linalg.lstsq(data, rhs, rcond=None)[0]
            else:
                b = x[s:e] - (rho / taus[i]) * (At[s:e] @ (prods[i] - target))
                xn = np.asarray(term.prox(b, 1.0 / taus[i]), dtype=np.float64)
            x[s:e] = xn
            prods[i] = xn @ At[s:e]
        duals = duals - rho * (prods - z - c_over_N)
        Ax = prods.sum(axis=0)
        resid = float(np.linalg.norm(Ax - c))
        obj = float(_objective_blocks(objective, x, offsets).sum())
        u_sq = float(np.dot(x, x)) + float(np.dot(duals.ravel(), duals.ravel()))
        diverged = (not np.isfinite(u_sq)) or np.sqrt(u_sq) > guard
        at_record = (k % config.record_every == 0) or k == config.max_iters or diverged
        if at_record:
            rec = IterationRecord(k=k, objective=obj, primal_residual=resid,
                                  duration_s=time.perf_counter() - t0)
            records.append(rec)
            if callback is not None:
                callback(k, Iterate(BlockVector.from_packed(x, sizes),
                                    duals.mean(axis=0)), rec)
        if diverged:
            reason = "divergence_guard"
            break
        if at_record and resid <= config.stop_tol * cnorm:
            reason = "tolerance"
            break
    final = Iterate(BlockVector.from_packed(x, sizes), duals.mean(axis=0))
    return History(records, final, reason)


# ---------------------------------------------------------------------------
# dual decomposition
# ---------------------------------------------------------------------------

def solve_dual_decomp(problem, config, *, u_star=None, callback=None,
                      x0=None, lam0=None):
    """Dual ascent with exact block minimization of the plain Lagrangian.

    Block subproblems argmin f_i(x_i) - <lambda, A_i x_i> must have a finite
    minimizer: quadratic blocks are solved through the (pseudo-)inverse of
    C_i^T C_i (rank-deficient C_i yields the min-norm stationary point), and
    custom blocks may supply a ``linmin`` oracle; l1/zero/box blocks are
    rejected.  The dual step is lambda <- lambda - alpha_k (A x - c) with the
    configured step rule.
    """
    if config.scheme != "dual_decomp":
        raise ConfigurationError(f"expected scheme dual_decomp, got {config.scheme!r}")
    A = problem.operator
    objective = problem.objective
    N, m = A.n_blocks, A.m
    offsets = A.col_offsets
    sizes = np.diff(offsets)
    At = A.packed_t
    for i, t in enumerate(objective.terms):
        if t.kind == "quadratic":
            continue
        if t.kind == "custom":
            continue  # checked on first call
        raise ConfigurationError(
            f"block {i}: objective kind {t.kind!r} has an unbounded "
            "linear-shifted subproblem")
    rule = config.step_rule
    if rule[0] == "default":
        # packed_t is A^T, so its spectral norm equals ||A||
        c0 = 1.0 / max(spectral_norm_sq(A.packed_t), 1e-12)
        step = lambda k: c0 / np.sqrt(k)  # noqa: E731
    elif rule[0] == "diminishing":
        step = lambda k: rule[1] / np.sqrt(k)  # noqa: E731
    else:
        step = lambda k: rule[1]  # noqa: E731
    c = A.rhs
    x = np.zeros(A.n) if x0 is None else (A.check_conforms(x0) or x0.data.copy())
    lam = np.zeros(m) if lam0 is None else np.asarray(lam0, dtype=np.float64).copy()
    if lam.size != m:
        raise ShapeError(f"lambda0 has length {lam.size}, expected {m}")
    prods = np.empty((N, m))
    cnorm = max(1.0, float(np.linalg.norm(c)))
    guard = DIVERGENCE_FACTOR * (1.0 + np.sqrt(float(np.dot(x, x)) + float(np.dot(lam, lam))))
    records = []
    reason = "max_iters"
    for k in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        for i, term in enumerate(objective.terms):
            s, e = offsets[i], offsets[i + 1]
            g = At[s:e] @ lam
            if term.kind == "quadratic":
                xn = term.linmin(g, singular="lstsq")
            else:
                try:
                    xn = term.linmin(g)
                except ProxUnavailable as exc:
                    raise ConfigurationError(f"block {i}: {exc}") from None
            x[s:e] = xn
            prods[i] = xn @ At[s:e]
        Ax = prods.sum(axis=0)
        r = Ax - c
        lam = lam - step(k) * r
        obj = float(_objective_blocks(objective, x, offsets).sum())
        resid = float(np.linalg.norm(r))
        u_sq = float(np.dot(x, x)) + float(np.dot(lam, lam))
        diverged = (not np.isfinite(u_sq)) or np.sqrt(u_sq) > guard
        at_record = (k % config.record_every == 0) or k == config.max_iters or diverged
        if at_record:
            rec = IterationRecord(k=k, objective=obj, primal_residual=resid,
                                  duration_s=time.perf_counter() - t0)
            records.append(rec)
            if callback is not None:
                callback(k, Iterate(BlockVector.from_packed(x, sizes), lam), rec)
        if diverged:
            reason = "divergence_guard"
            break
        if at_record and resid <= config.stop_tol * cnorm:
            reason = "tolerance"
            break
    final = Iterate(BlockVector.from_packed(x, sizes), lam)
    return History(records, final, reason)


_SOLVERS = {
    "prox_jacobi": solve_prox_jacobi,
    "jacobi": solve_jacobi,
    "gauss_seidel": solve_gauss_seidel,
    "vsadmm": solve_vsadmm,
    "corr_jacobi": solve_corr_jacobi,
    "dual_decomp": solve_dual_decomp,
}


def solve(problem, config, tuner=None, **kwargs):
    """Dispatch to the scheme named in the config."""
    fn = _SOLVERS[config.scheme]
    if config.scheme == "prox_jacobi":
        return fn(problem, config, tuner, **kwargs)
    if tuner is not None:
        raise ConfigurationError(f"scheme {config.scheme!r} does not take a tuner")
    return fn(problem, config, **kwargs)
