"""Adaptive proximal-parameter tuning.

Start with deliberately small P_i, monitor the contraction quantity
h(u^{k-1}, u^k) after every iteration, and whenever the test

    h(u^{k-1}, u^k) > eta * ||u^{k-1} - u^k||_G^2

fails, grow every P_i (P_i <- alpha_i P_i + beta_i Q_i) and roll the iterate
back to u^{k-1}.  Once the P_i are large enough the test always holds, so
adjustments happen finitely often and the final parameters are typically much
smaller than the sufficient-condition thresholds.
"""

from dataclasses import dataclass

import numpy as np

from .prox import DomainError, ProxExplicit, ProxLinear, ProxNone, ProxSpec, ProxStandard

__all__ = [
    "TunerConfig",
    "Keep",
    "IncreaseAndRestart",
    "TunerExhaustedError",
    "tune_step",
    "grow_prox",
    "default_eta",
]


class TunerExhaustedError(RuntimeError):
    """The tuner hit its adjustment cap; the run cannot silently continue."""


@dataclass(frozen=True)
class TunerConfig:
    """Tuning knobs.

    eta:   contraction threshold; None picks the default 1e-3/(gamma*rho),
           small relative to the lambda-part metric weight.
    alpha: per-block growth factor(s), > 1.
    beta:  per-block additive coefficient(s), >= 0.
    q_scale: scale of the SPD additive matrix Q_i = q_scale * I; None -> rho.
    max_adjustments: hard cap on the number of increase/restart events.
    decrease_every / decrease_factor / max_decreases: optional slow decrease
           of tau every fixed number of quiet iterations, with a bounded total
           count (off by default).
    """
    eta: float = None
    alpha: float = 2.0
    beta: float = 0.0
    q_scale: float = None
    max_adjustments: int = 50
    decrease_every: int = None
    decrease_factor: float = 0.5
    max_decreases: int = 0

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise DomainError(f"eta must be > 0, got {self.eta}")
        if np.any(np.atleast_1d(self.alpha) <= 1.0):
            raise DomainError(f"growth factor alpha must be > 1, got {self.alpha}")
        if np.any(np.atleast_1d(self.beta) < 0.0):
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if self.max_adjustments < 1:
            raise DomainError("max_adjustments must be >= 1")
        if self.decrease_every is not None:
            if self.decrease_every < 1:
                raise DomainError("decrease_every must be >= 1")
            if not (0.0 < self.decrease_factor < 1.0):
                raise DomainError("decrease_factor must lie in (0, 1)")
            if self.max_decreases < 1:
                raise DomainError("enable the decrease policy with max_decreases >= 1")


@dataclass(frozen=True)
class Keep:
    pass


@dataclass(frozen=True)
class IncreaseAndRestart:
    new_prox: ProxSpec


def default_eta(rho, gamma):
    return 1e-3 / (gamma * rho)


def _per_block(value, N, name):
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return np.full(N, arr[0])
    if arr.size != N:
        raise DomainError(f"{name} must be scalar or length {N}, got {arr.size}")
    return arr


def grow_prox(prox, cfg, rho):
    """P_i <- alpha_i P_i + beta_i Q_i for every block (Q_i = q_scale * I).

    Standard/prox-linear blocks grow by tau_i <- alpha_i tau_i + beta_i q;
    zero blocks become standard beta_i*q (requires beta_i q > 0 to grow).
    """
    N = prox.n_blocks
    alphas = _per_block(cfg.alpha, N, "alpha")
    betas = _per_block(cfg.beta, N, "beta")
    q = rho if cfg.q_scale is None else cfg.q_scale
    new_blocks = []
    for i, b in enumerate(prox.blocks):
        add = betas[i] * q
        if isinstance(b, ProxStandard):
            new_blocks.append(ProxStandard(alphas[i] * b.tau + add))
        elif isinstance(b, ProxLinear):
            new_blocks.append(ProxLinear(alphas[i] * b.tau + add))
        elif isinstance(b, ProxExplicit):
            new_blocks.append(ProxExplicit(alphas[i] * b.P + add * np.eye(b.P.shape[0])))
        elif isinstance(b, ProxNone):
            if add <= 0.0:
                raise DomainError(
                    f"block {i}: cannot grow a zero proximal block with beta*q = 0"
                )
            new_blocks.append(ProxStandard(add))
        else:
            raise DomainError(f"block {i}: unsupported prox block {type(b).__name__}")
    return ProxSpec(new_blocks)


def shrink_prox(prox, factor):
    """Scale every tau (or explicit P) by ``factor`` in (0, 1)."""
    new_blocks = []
    for b in prox.blocks:
        if isinstance(b, ProxStandard):
            new_blocks.append(ProxStandard(factor * b.tau))
        elif isinstance(b, ProxLinear):
            new_blocks.append(ProxLinear(factor * b.tau))
        elif isinstance(b, ProxExplicit):
            new_blocks.append(ProxExplicit(factor * b.P))
        else:
            new_blocks.append(b)
    return ProxSpec(new_blocks)


def tune_step(h_value, delta_u_G_sq, prox, cfg, *, rho, gamma=1.0, increases_done=0):
    """One tuner decision for the transition just taken.

    Returns :class:`Keep` iff ``h_value > eta * delta_u_G_sq`` (or the
    transition is an exact fixed point, where a restart would be a no-op),
    otherwise :class:`IncreaseAndRestart` with the grown spec.  Raises
    :class:`TunerExhaustedError` when an increase is needed past the cap.
    """
    eta = cfg.eta if cfg.eta is not None else default_eta(rho, gamma)
    if delta_u_G_sq == 0.0:
        return Keep()
    if h_value > eta * delta_u_G_sq:
        return Keep()
    if increases_done >= cfg.max_adjustments:
        raise TunerExhaustedError(
            f"tuner exhausted after {increases_done} increases "
            f"(h={h_value:.3e} <= eta*|du|_G^2={eta * delta_u_G_sq:.3e})"
        )
    return IncreaseAndRestart(grow_prox(prox, cfg, rho))
