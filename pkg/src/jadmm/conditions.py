"""Checkers and parameter suggesters for the sufficient convergence conditions.

Three checkable conditions ship here:

* the proximal contraction condition  P_i > rho (N/(2-gamma) - 1) A_i^T A_i
  (strict matrix inequality per block), with closed-form thresholds for the
  standard and prox-linear menus;
* near-orthogonality of the coupling blocks: ||A_i^T A_j|| <= delta for all
  i != j together with lambda_min(A_i^T A_i) > 3 (N-1) delta, which makes the
  plain Jacobian scheme convergent without proximal terms;
* the combined proximal + near-orthogonality condition parameterized by
  (alpha, beta) with alpha < 2 - gamma.

All spectral quantities are estimated by power iteration (see
:mod:`jadmm.prox`), so the test suite's dense-eigendecomposition oracles stay
independent of these code paths.  Strict inequalities are enforced with an
absolute margin of 1e-10.
"""

from dataclasses import dataclass, field

import numpy as np

from .prox import (DomainError, ProxExplicit, ProxLinear, ProxNone, ProxSpec,
                   ProxStandard, smallest_eig_sym, sym_eig_extremes)

__all__ = [
    "ConditionReport",
    "STRICT_MARGIN",
    "check_cond_2_14",
    "suggest_tau",
    "check_near_orthogonality",
    "check_cond_4_18",
]

STRICT_MARGIN = 1e-10


@dataclass
class ConditionReport:
    condition: str
    satisfied: bool
    margins: list = field(default_factory=list)  # one dict per inequality checked
    delta: float = None
    lambda_min: list = None
    params: dict = None
    thresholds: dict = None

    def to_dict(self):
        return {
            "condition": self.condition,
            "satisfied": self.satisfied,
            "margins": self.margins,
            "delta": self.delta,
            "lambda_min": self.lambda_min,
            "params": self.params,
            "thresholds": self.thresholds,
        }


def _check_gamma(gamma):
    if not (0.0 < gamma < 2.0):
        raise DomainError(f"gamma must lie in (0, 2), got {gamma}")


def _gram_extremes(A):
    """(lambda_max, lambda_min) of every A_i^T A_i (cyclic-Jacobi extremes)."""
    lmax, lmin = [], []
    for i in range(A.n_blocks):
        Ai = A.block(i)
        lo, hi = sym_eig_extremes(Ai.T @ Ai)
        lmax.append(hi)
        lmin.append(lo)
    return np.array(lmax), np.array(lmin)


def _shifted_min_eig(prox_block, rho, A_block, coef, shift, lmax, lmin):
    """Smallest eigenvalue of P_i - coef * A_i^T A_i - shift * I.

    Uses the closed forms for the parametric prox blocks (no matrices formed);
    materializes only for explicit P.
    """
    if isinstance(prox_block, ProxLinear):
        # (tau - shift) I - (rho + coef) A^T A ; rho + coef > 0 in all callers
        return prox_block.tau - shift - (rho + coef) * lmax
    if isinstance(prox_block, ProxStandard):
        tau = prox_block.tau
        return tau - shift - (coef * lmax if coef >= 0 else coef * lmin)
    if isinstance(prox_block, ProxNone):
        return -shift - (coef * lmax if coef >= 0 else coef * lmin)
    gram = A_block.T @ A_block
    M = prox_block.P - coef * gram - shift * np.eye(gram.shape[0])
    return smallest_eig_sym(M)


def check_cond_2_14(A, rho, gamma, prox):
    """Check P_i > rho (N/(2-gamma) - 1) A_i^T A_i for every block.

    Satisfied iff the smallest eigenvalue of each difference exceeds the
    strictness margin.  The report carries the per-block thresholds of the two
    parametric menus: tau > rho (N/(2-gamma) - 1) ||A_i||^2 for the standard
    proximal choice and tau > rho N/(2-gamma) ||A_i||^2 for prox-linear.
    """
    _check_gamma(gamma)
    if prox.n_blocks != A.n_blocks:
        raise DomainError(
            f"prox spec has {prox.n_blocks} blocks, operator has {A.n_blocks}"
        )
    N = A.n_blocks
    kappa = N / (2.0 - gamma) - 1.0
    lmax, lmin = _gram_extremes(A)
    thr_standard = rho * kappa * lmax
    thr_prox_linear = rho * N / (2.0 - gamma) * lmax
    margins = []
    ok = True
    for i, b in enumerate(prox.blocks):
        me = _shifted_min_eig(b, rho, A.block(i), rho * kappa, 0.0, lmax[i], lmin[i])
        entry = {"block": i, "min_eig": float(me), "margin": float(me)}
        if isinstance(b, ProxStandard):
            entry.update(lhs=b.tau, rhs=float(thr_standard[i]))
        elif isinstance(b, ProxLinear):
            entry.update(lhs=b.tau, rhs=float(thr_prox_linear[i]))
        margins.append(entry)
        ok = ok and me > STRICT_MARGIN
    params = None
    if ok:
        params = {"epsilon_i": (2.0 - gamma) / N * (1.0 - 1e-6)}
    return ConditionReport(
        condition="cond_2_14",
        satisfied=ok,
        margins=margins,
        lambda_min=[float(v) for v in lmin],
        params=params,
        thresholds={
            "standard": [float(v) for v in thr_standard],
            "prox_linear": [float(v) for v in thr_prox_linear],
        },
    )


def suggest_tau(A, rho, gamma, kind, slack):
    """Per-block tau at ``slack`` times the menu threshold for ``kind``.

    The returned values always pass :func:`check_cond_2_14` when wrapped in the
    matching spec; degenerate non-positive thresholds (possible only for the
    standard menu with N < 2 - gamma) are floored at a small positive value.
    """
    _check_gamma(gamma)
    if slack <= 1.0:
        raise DomainError(f"slack must exceed 1, got {slack}")
    if kind not in ("standard", "prox_linear"):
        raise DomainError(f"kind must be 'standard' or 'prox_linear', got {kind!r}")
    N = A.n_blocks
    lmax, _ = _gram_extremes(A)
    if kind == "standard":
        thr = rho * (N / (2.0 - gamma) - 1.0) * lmax
    else:
        thr = rho * N / (2.0 - gamma) * lmax
    floor = max(1e-6, 1e-6 * rho)
    return np.maximum(slack * thr, floor)


def check_near_orthogonality(A):
    """Mutual near-orthogonality check for the plain Jacobian scheme.

    delta = max_{i != j} ||A_i^T A_j||; satisfied iff
    min_i lambda_min(A_i^T A_i) > 3 (N-1) delta (strictly, with margin).
    N = 1 is trivially satisfied with delta = 0.
    """
    N = A.n_blocks
    if N == 1:
        _, lmin = _gram_extremes(A)
        return ConditionReport(
            condition="near_orthogonality", satisfied=True,
            margins=[{"block": 0, "lhs": float(lmin[0]), "rhs": 0.0,
                      "margin": float(lmin[0])}],
            delta=0.0, lambda_min=[float(lmin[0])],
        )
    delta = 0.0
    for i in range(N):
        for j in range(N):
            if i != j:
                cross = A.block(i).T @ A.block(j)
                # ||cross|| = sqrt(lambda_max(cross^T cross))
                top = sym_eig_extremes(cross.T @ cross)[1]
                delta = max(delta, np.sqrt(max(top, 0.0)))
    _, lmin = _gram_extremes(A)
    rhs = 3.0 * (N - 1) * delta
    margins = [
        {"block": i, "lhs": float(lmin[i]), "rhs": float(rhs),
         "margin": float(lmin[i] - rhs)}
        for i in range(N)
    ]
    ok = bool(np.min(lmin) > rhs + STRICT_MARGIN)
    return ConditionReport(
        condition="near_orthogonality", satisfied=ok, margins=margins,
        delta=float(delta), lambda_min=[float(v) for v in lmin],
    )


def check_cond_4_18(A, rho, gamma, prox, alpha, beta):
    """Combined proximal + near-orthogonality condition with witnesses (alpha, beta).

    Requires alpha, beta > 0 and alpha < 2 - gamma.  Satisfied iff, for every
    block,

        P_i > rho (1/alpha - 1) A_i^T A_i + (rho/beta) delta (N-1) I
        lambda_min(A_i^T A_i) > (2-gamma+beta)/(2-gamma-alpha) * delta (N-1)

    both with the strictness margin.
    """
    _check_gamma(gamma)
    if alpha <= 0 or beta <= 0:
        raise DomainError(f"alpha and beta must be positive, got {alpha}, {beta}")
    if alpha >= 2.0 - gamma:
        raise DomainError(f"alpha must be < 2 - gamma = {2.0 - gamma}, got {alpha}")
    if prox.n_blocks != A.n_blocks:
        raise DomainError(
            f"prox spec has {prox.n_blocks} blocks, operator has {A.n_blocks}"
        )
    N = A.n_blocks
    ortho = check_near_orthogonality(A)
    delta = ortho.delta
    lmax, lmin = _gram_extremes(A)
    coef = rho * (1.0 / alpha - 1.0)
    shift = (rho / beta) * delta * (N - 1)
    eig_rhs = (2.0 - gamma + beta) / (2.0 - gamma - alpha) * delta * (N - 1)
    margins = []
    ok = True
    for i, b in enumerate(prox.blocks):
        me = _shifted_min_eig(b, rho, A.block(i), coef, shift, lmax[i], lmin[i])
        margins.append({"block": i, "inequality": "prox", "min_eig": float(me),
                        "margin": float(me)})
        ok = ok and me > STRICT_MARGIN
        m2 = lmin[i] - eig_rhs
        margins.append({"block": i, "inequality": "eig", "lhs": float(lmin[i]),
                        "rhs": float(eig_rhs), "margin": float(m2)})
        ok = ok and m2 > STRICT_MARGIN
    return ConditionReport(
        condition="cond_4_18", satisfied=bool(ok), margins=margins,
        delta=float(delta), lambda_min=[float(v) for v in lmin],
        params={"alpha": alpha, "beta": beta},
    )
