"""Per-iteration measurements and their serialization.

The solvers record, for every transition u^k -> u^{k+1}:

* the objective and the primal residual ||A x - c||;
* the transition quantity h(u^k, u^{k+1}) whose positivity certifies strict
  contraction of the iterate sequence under the solver metric G;
* squared metric distances ||u^k - u^{k+1}||_G^2 and _G'^2 (G' drops the
  rho A^T A coupling from the x-part);
* the error ||u^k - u*||_G^2 when a reference solution is supplied;
* for two-block Gauss-Seidel runs, the essential-variable distance
  ||w^k - w^{k+1}||_H^2 with w = (x_2, lambda) and the primal/dual residuals.

Records stream to CSV (fixed column order, shortest round-trip float
formatting) and JSON lines.
"""

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import Iterate, MetricSpec, ShapeError, apply

__all__ = [
    "IterationRecord",
    "RECORD_COLUMNS",
    "h_value",
    "two_block_residuals",
    "two_block_H_dist_sq",
    "rate_check",
    "RateReport",
    "write_records_csv",
    "read_records_csv",
    "write_records_jsonl",
    "read_records_jsonl",
    "records_equal",
]


@dataclass
class IterationRecord:
    k: int
    objective: float
    primal_residual: float
    h_value: float = None
    du_G_sq: float = None
    du_Gp_sq: float = None
    err_G_sq: float = None
    dw_H_sq: float = None
    r_p_norm: float = None
    r_d_norm: float = None
    tuner_event: str = None
    duration_s: float = 0.0


RECORD_COLUMNS = (
    "k", "objective", "primal_residual", "h_value", "du_G_sq", "du_Gp_sq",
    "err_G_sq", "dw_H_sq", "r_p_norm", "r_d_norm", "tuner_event", "duration_s",
)


def h_value(u_prev, u_next, A, rho, gamma, prox):
    """The contraction quantity h(u^k, u^{k+1}).

    h = ||dx||_{G_x}^2 + (2-gamma)/(rho gamma^2) ||dl||^2
        + (2/gamma) dl^T A dx

    with dx = x^k - x^{k+1}, dl = lambda^k - lambda^{k+1} and
    G_x = diag(P_i + rho A_i^T A_i).  h is not a norm and may be negative.
    """
    if not (0.0 < gamma < 2.0):
        raise ValueError(f"gamma must lie in (0, 2), got {gamma}")
    A.check_conforms(u_prev.x)
    A.check_conforms(u_next.x)
    if u_prev.lam.size != A.m or u_next.lam.size != A.m:
        raise ShapeError("lambda length does not match operator row count")
    from .core import BlockVector
    dx = BlockVector.from_packed(u_prev.x.data - u_next.x.data, u_prev.x.sizes)
    dl = u_prev.lam - u_next.lam
    gx = MetricSpec.solver_metric(A, rho, gamma, prox).x_quad(dx)
    adx = apply(A, dx)
    return (
        gx
        + (2.0 - gamma) / (rho * gamma * gamma) * float(np.dot(dl, dl))
        + (2.0 / gamma) * float(np.dot(dl, adx))
    )


def two_block_residuals(u_prev, u_next, A, rho):
    """Primal and dual feasibility residuals of a two-block (N=2) transition.

    r_p = A_1 x_1 + A_2 x_2 - c  evaluated at u^{k+1};
    r_d = rho A_1^T A_2 (x_2^k - x_2^{k+1}).

    For Gauss-Seidel iterates, r_p also equals (lambda^k - lambda^{k+1})/rho.
    """
    if A.n_blocks != 2:
        raise ValueError(f"two-block residuals need N=2, got N={A.n_blocks}")
    A.check_conforms(u_prev.x)
    A.check_conforms(u_next.x)
    r_p = apply(A, u_next.x) - A.rhs
    dx2 = u_prev.x.block(1) - u_next.x.block(1)
    r_d = rho * (A.block(0).T @ (A.block(1) @ dx2))
    return r_p, r_d


def two_block_H_dist_sq(u_a, u_b, A, rho):
    """||w_a - w_b||_H^2 with w = (x_2, lambda), H = diag(rho A_2^T A_2, I/rho)."""
    if A.n_blocks != 2:
        raise ValueError(f"H metric needs N=2, got N={A.n_blocks}")
    dx2 = u_a.x.block(1) - u_b.x.block(1)
    dl = u_a.lam - u_b.lam
    a2dx = A.block(1) @ dx2
    return rho * float(np.dot(a2dx, a2dx)) + float(np.dot(dl, dl)) / rho


@dataclass
class RateReport:
    monotone: bool
    partial_sums_bounded: bool
    k_times_a2k_tail: list
    total: float


def rate_check(series):
    """Monotonicity and o(1/k) evidence for a nonnegative series.

    ``monotone`` allows a_{k+1} <= a_k (1 + 1e-10) + 1e-14.  The tail of
    k * a_{2k} over the last quarter of the admissible k range is reported:
    for a summable monotone series it must tend to 0 (a_k = o(1/k)), whereas
    e.g. a_k = 1/k gives a constant tail.  ``partial_sums_bounded`` flags
    whether the last quarter of the series contributes at most 5% of the sum
    (a crude summability witness).
    """
    a = np.asarray(series, dtype=np.float64)
    if a.ndim != 1 or a.size < 8:
        raise ValueError(f"rate_check needs at least 8 points, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise ValueError("rate_check needs finite values")
    a = np.maximum(a, 0.0)
    monotone = bool(np.all(a[1:] <= a[:-1] * (1.0 + 1e-10) + 1e-14))
    total = float(a.sum())
    tail_sum = float(a[3 * a.size // 4:].sum())
    bounded = total == 0.0 or tail_sum <= 0.05 * total
    kmax = a.size // 2  # a_{2k} needs 2k <= len
    ks = np.arange(max(1, (3 * kmax) // 4), kmax + 1)
    tail = [float(k * a[2 * k - 1]) for k in ks]  # a is 1-indexed as a_k = a[k-1]
    return RateReport(monotone=monotone, partial_sums_bounded=bounded,
                      k_times_a2k_tail=tail, total=total)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)  # shortest round-trip
    return str(x)


def _parse(col, s):
    if s == "":
        return None
    if col == "k":
        return int(s)
    if col == "tuner_event":
        return s
    return float(s)


def write_records_csv(records, path, header_comment=None):
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        w = csv.writer(f)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])


def read_records_csv(path):
    records = []
    with open(path, newline="") as f:
        rows = csv.reader(line for line in f if not line.startswith("#"))
        header = next(rows, None)
        if header is None:
            return records
        if tuple(header) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV columns {header}")
        for row in rows:
            kw = {c: _parse(c, s) for c, s in zip(RECORD_COLUMNS, row)}
            kw["duration_s"] = kw["duration_s"] or 0.0
            records.append(IterationRecord(**kw))
    return records


def write_records_jsonl(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(asdict(r)) + "\n")


def read_records_jsonl(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(IterationRecord(**json.loads(line)))
    return records


def _field_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        return (a == b) or (math.isnan(a) and math.isnan(b))
    return a == b


def records_equal(rec_a, rec_b, ignore_timing=True):
    """Field-by-field equality of two record lists (bitwise on floats).

    ``duration_s`` is wall-clock and excluded by default.
    """
    if len(rec_a) != len(rec_b):
        return False
    skip = {"duration_s"} if ignore_timing else set()
    for a, b in zip(rec_a, rec_b):
        for c in RECORD_COLUMNS:
            if c in skip:
                continue
            if not _field_equal(getattr(a, c), getattr(b, c)):
                return False
    return True
