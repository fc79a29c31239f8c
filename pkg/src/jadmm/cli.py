"""Command-line front end.

Subcommands
-----------
generate   write a reproducible problem instance to a directory
solve      run one solver from a JSON config file, emit CSV/JSONL history
check      evaluate the sufficient-condition checkers on an instance
bench      compare several schemes over repeated seeded trials

Run configs are JSON documents with sections ``problem``, ``solver``,
``runtime`` and ``output``; unknown keys are rejected.  ``jadmm <cmd> --help``
documents every default.  Exit codes for ``solve``: 0 stopped at tolerance,
1 config/IO error, 2 iteration budget exhausted, 3 divergence guard fired.
``check`` exits 0 iff the requested condition is satisfied (2 when not,
1 on errors).
"""

import argparse
import json
import sys

import numpy as np

from . import conditions, matio
from .diagnostics import write_records_csv, write_records_jsonl
from .problems import gen_basis_pursuit, gen_exchange
from .prox import ProxSpec
from .runtime import run_distributed
from .solvers import ConfigurationError, SolverConfig, solve
from .tuning import TunerConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2
EXIT_DIVERGED = 3
_REASON_EXIT = {"tolerance": EXIT_OK, "max_iters": EXIT_MAX_ITERS,
                "divergence_guard": EXIT_DIVERGED}

PAPER_RHO_EXCHANGE = {"prox_jacobi": 0.01, "vsadmm": 1.0, "corr_jacobi": 0.01}


class CLIError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_SCHEMA = {
    "problem": {"kind", "path", "n", "N", "p", "m", "k", "sigma", "seed"},
    "solver": {"scheme", "rho", "gamma", "max_iters", "stop_tol", "alpha",
               "step_rule", "prox", "tuner"},
    "solver.prox": {"kind", "tau", "slack"},
    "solver.tuner": {"enabled", "eta", "alpha", "beta", "q_scale",
                     "max_adjustments", "decrease_every", "decrease_factor",
                     "max_decreases"},
    "solver.step_rule": {"kind", "value"},
    "runtime": {"workers"},
    "output": {"csv", "jsonl", "record_every"},
    "bench": {"schemes", "trials", "seed_base", "max_iters", "stop_tol"},
}


def _check_keys(section, d, path):
    allowed = _SCHEMA[path]
    unknown = set(d) - allowed
    if unknown:
        raise CLIError(f"config section {path!r}: unknown keys {sorted(unknown)}")


def _load_config(path, *, bench=False):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from None
    top = {"problem", "runtime", "output"} | ({"bench"} if bench else {"solver"})
    unknown = set(cfg) - top
    if unknown:
        raise CLIError(f"config: unknown top-level keys {sorted(unknown)}")
    for key in list(cfg):
        if key in ("problem", "runtime", "output", "bench"):
            _check_keys(key, cfg[key], key)
        if key == "solver":
            _solver_keys(cfg[key])
    if "problem" not in cfg:
        raise CLIError("config needs a 'problem' section")
    return cfg


def _solver_keys(sd):
    _check_keys("solver", sd, "solver")
    if "prox" in sd:
        _check_keys("solver.prox", sd["prox"], "solver.prox")
    if "tuner" in sd:
        _check_keys("solver.tuner", sd["tuner"], "solver.tuner")
    if "step_rule" in sd:
        _check_keys("solver.step_rule", sd["step_rule"], "solver.step_rule")


def _build_instance(pd):
    kind = pd.get("kind")
    if "path" in pd:
        return matio.load_instance(pd["path"])
    if kind == "exchange":
        return gen_exchange(pd.get("n", 100), pd.get("N", 100), pd.get("p", 80),
                            pd.get("seed", 0))
    if kind == "bp":
        return gen_basis_pursuit(pd.get("m", 300), pd.get("n", 1000),
                                 pd.get("N", 100), pd.get("k", 60),
                                 pd.get("sigma", 0.0), pd.get("seed", 0))
    raise CLIError(f"problem kind must be 'exchange' or 'bp', got {kind!r}")


def _resolve_rho(spec_rho, scheme, instance):
    if spec_rho == "paper":
        meta = instance.metadata()
        if meta["kind"] == "exchange":
            return PAPER_RHO_EXCHANGE.get(scheme, 0.01)
        return 10.0 / float(np.abs(instance.c).sum())
    return float(spec_rho)


def _resolve_prox(pd, instance, rho, scheme):
    """Returns (ProxSpec or None, tuner_default_on)."""
    if pd is None:
        return None, False
    kind = pd.get("kind", "none")
    if kind == "none":
        return None, False
    op = instance.problem().operator
    N = op.n_blocks
    tau = pd.get("tau")
    default_tuner = False
    if tau == "paper-3.1":
        taus = np.full(N, 0.1 * (N - 1) * rho)
        default_tuner = True
    elif tau == "paper-3.2":
        taus = np.full(N, 0.1 * N * rho)
        default_tuner = True
    elif tau == "suggest":
        taus = conditions.suggest_tau(op, rho, 1.0, kind, pd.get("slack", 1.1))
    elif tau is None:
        raise CLIError("solver.prox needs 'tau' (number, list, or policy string)")
    else:
        taus = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        if taus.size == 1:
            taus = np.full(N, taus[0])
    if kind == "standard":
        return ProxSpec.standard(taus), default_tuner
    if kind == "prox_linear":
        return ProxSpec.prox_linear(taus), default_tuner
    raise CLIError(f"solver.prox.kind must be none|standard|prox_linear, got {kind!r}")


def _resolve_tuner(td, default_on):
    if td is None:
        return TunerConfig() if default_on else None
    enabled = td.get("enabled", True)
    if not enabled:
        return None
    kwargs = {k: td[k] for k in td if k != "enabled"}
    return TunerConfig(**kwargs)


def _build_solver(sd, instance):
    scheme = sd.get("scheme")
    if scheme is None:
        raise CLIError("solver section needs 'scheme'")
    rho = _resolve_rho(sd.get("rho", "paper"), scheme, instance)
    prox, tuner_default = _resolve_prox(sd.get("prox"), instance, rho, scheme)
    step = sd.get("step_rule")
    if step is None:
        step_rule = ("default",)
    elif step.get("kind") == "default":
        step_rule = ("default",)
    else:
        step_rule = (step.get("kind"), float(step.get("value", 1.0)))
    config = SolverConfig(
        scheme=scheme, rho=rho, gamma=float(sd.get("gamma", 1.0)),
        max_iters=int(sd.get("max_iters", 1000)),
        stop_tol=float(sd.get("stop_tol", 0.0)),
        prox=prox, alpha=float(sd.get("alpha", 0.5)), step_rule=step_rule,
        record_every=int(sd.get("record_every", 1)),
    )
    tuner = _resolve_tuner(sd.get("tuner"), tuner_default)
    return config, tuner


def _rel_err_fn(instance):
    meta = instance.metadata()
    if meta["kind"] == "bp":
        xs = instance.x_star
        nrm = float(np.linalg.norm(xs))
    else:
        xs = instance.x_star.data
        nrm = float(np.linalg.norm(xs))
    if nrm == 0.0:
        return None

    def rel_err(x_packed):
        return float(np.linalg.norm(x_packed - xs)) / nrm

    return rel_err


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    if args.family == "exchange":
        inst = gen_exchange(args.n, args.N, args.p, args.seed)
    else:
        inst = gen_basis_pursuit(args.m, args.n, args.N, args.k, args.sigma,
                                 args.seed)
    manifest = matio.save_instance(inst, args.out)
    print(f"generated {args.family} instance at {args.out}")
    print(f"seed={args.seed} checksum={manifest['checksum']}")
    return EXIT_OK


def cmd_solve(args):
    cfg = _load_config(args.config)
    instance = _build_instance(cfg["problem"])
    if "solver" not in cfg:
        raise CLIError("config needs a 'solver' section")
    config, tuner = _build_solver(cfg["solver"], instance)
    out = cfg.get("output", {})
    if "record_every" in out:
        config.record_every = int(out["record_every"])
    workers = cfg.get("runtime", {}).get("workers")
    if args.workers is not None:
        workers = args.workers
    problem = instance.problem()
    if workers:
        history = run_distributed(problem, config, workers, tuner=tuner)
    else:
        history = solve(problem, config, tuner=tuner)
    if "csv" in out:
        write_records_csv(history.records, out["csv"],
                          header_comment=f"scheme={config.scheme} rho={config.rho!r}")
    if "jsonl" in out:
        write_records_jsonl(history.records, out["jsonl"])
    rel = _rel_err_fn(instance)
    rel_s = ""
    if rel is not None:
        rel_s = f" rel_err={rel(history.final.x.data)!r}"
    last = history.records[-1] if history.records else None
    resid = last.primal_residual if last else float("nan")
    obj = last.objective if last else float("nan")
    iters = last.k if last else 0
    print(f"scheme={config.scheme} iterations={iters} reason={history.reason} "
          f"residual={resid!r} objective={obj!r}{rel_s}")
    return _REASON_EXIT[history.reason]


def cmd_check(args):
    instance = matio.load_instance(args.instance)
    op = instance.problem().operator
    rho, gamma = args.rho, args.gamma
    reports = {}
    if args.suggest_tau:
        taus = conditions.suggest_tau(op, rho, gamma, args.suggest_tau, args.slack)
        make = (ProxSpec.standard if args.suggest_tau == "standard"
                else ProxSpec.prox_linear)
        rep = conditions.check_cond_2_14(op, rho, gamma, make(taus))
        print(json.dumps({"suggested_tau": list(map(float, taus)),
                          "recheck": rep.to_dict()}, indent=2))
        return EXIT_OK if rep.satisfied else EXIT_MAX_ITERS
    prox = None
    if args.prox_kind != "none":
        if args.tau is None:
            raise CLIError("--tau is required with --prox-kind")
        taus = np.full(op.n_blocks, args.tau)
        prox = (ProxSpec.standard(taus) if args.prox_kind == "standard"
                else ProxSpec.prox_linear(taus))
    else:
        prox = ProxSpec.none(op.n_blocks)
    wanted = args.condition
    if wanted in ("2.14", "all"):
        reports["cond_2_14"] = conditions.check_cond_2_14(op, rho, gamma, prox)
    if wanted in ("4.1", "all"):
        reports["near_orthogonality"] = conditions.check_near_orthogonality(op)
    if wanted in ("4.18", "all"):
        reports["cond_4_18"] = conditions.check_cond_4_18(
            op, rho, gamma, prox, args.alpha, args.beta)
    print(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2))
    ok = all(r.satisfied for r in reports.values())
    return EXIT_OK if ok else EXIT_MAX_ITERS


def cmd_bench(args):
    cfg = _load_config(args.config, bench=True)
    bd = cfg.get("bench")
    if not bd:
        raise CLIError("bench config needs a 'bench' section")
    schemes = bd.get("schemes")
    trials = int(bd.get("trials", 1))
    if not schemes or (len(schemes) < 2 and trials < 1):
        raise CLIError("bench needs a list of scheme configs")
    seed_base = int(bd.get("seed_base", cfg["problem"].get("seed", 0)))
    out = cfg.get("output", {})
    csv_path = out.get("csv")
    if not csv_path:
        raise CLIError("bench config needs output.csv")
    rows = []
    names = []
    for sd in schemes:
        _solver_keys(sd)
        name = sd.get("scheme")
        names.append(name)
        curves = {"objective": [], "residual": [], "rel_err": []}
        for t in range(trials):
            pd = dict(cfg["problem"])
            pd["seed"] = seed_base + t
            instance = _build_instance(pd)
            config, tuner = _build_solver(sd, instance)
            if "max_iters" in bd:
                config.max_iters = int(bd["max_iters"])
            config.stop_tol = float(bd.get("stop_tol", 0.0))
            config.record_every = 1
            rel = _rel_err_fn(instance)
            objs, resids, rels = [], [], []

            def cb(k, it, rec, _objs=objs, _resids=resids, _rels=rels, _rel=rel):
                _objs.append(rec.objective)
                _resids.append(rec.primal_residual)
                _rels.append(_rel(it.x.data) if _rel else np.nan)

            solve(instance.problem(), config, tuner=tuner, callback=cb)
            curves["objective"].append(objs)
            curves["residual"].append(resids)
            curves["rel_err"].append(rels)
        kmax = max(len(c) for c in curves["objective"])

        def padded(series_list):
            return np.array([s + [np.nan] * (kmax - len(s)) for s in series_list])

        obj_m = np.nanmean(padded(curves["objective"]), axis=0)
        res_m = np.nanmean(padded(curves["residual"]), axis=0)
        rel_m = np.nanmean(padded(curves["rel_err"]), axis=0)
        for k in range(kmax):
            rows.append((name, k + 1, obj_m[k], res_m[k], rel_m[k]))
    with open(csv_path, "w") as f:
        f.write(f"# bench schemes={names} trials={trials} "
                f"seeds={seed_base}..{seed_base + trials - 1}\n")
        f.write("scheme,k,objective_mean,primal_residual_mean,rel_err_mean\n")
        for name, k, o, r, e in rows:
            f.write(f"{name},{k},{o!r},{r!r},{e!r}\n")
    print(f"bench written to {csv_path} (schemes={names}, trials={trials})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(
        prog="jadmm",
        description="Parallel multi-block ADMM solvers and experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a problem instance")
    gs = g.add_subparsers(dest="family", required=True)
    ge = gs.add_parser("exchange", help="quadratic exchange problem")
    ge.add_argument("--n", type=int, default=100, help="commodity dimension")
    ge.add_argument("--N", type=int, default=100, help="number of agents/blocks")
    ge.add_argument("--p", type=int, default=80, help="rows of each cost matrix C_i")
    ge.add_argument("--seed", type=int, default=0)
    ge.add_argument("--out", required=True, help="output directory")
    gb = gs.add_parser("bp", help="basis pursuit (l1 minimization)")
    gb.add_argument("--n", type=int, default=1000, help="signal dimension")
    gb.add_argument("--m", type=int, default=300, help="measurement count")
    gb.add_argument("--N", type=int, default=100, help="number of blocks")
    gb.add_argument("--k", type=int, default=60, help="sparsity of the planted solution")
    gb.add_argument("--sigma", type=float, default=0.0, help="noise std deviation")
    gb.add_argument("--seed", type=int, default=0)
    gb.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("solve", help="run one solver from a JSON config")
    s.add_argument("--config", required=True, help="JSON run config path")
    s.add_argument("--workers", type=int, default=None,
                   help="override runtime.workers (0 = serial)")

    c = sub.add_parser("check", help="sufficient-condition checkers")
    c.add_argument("--instance", required=True, help="instance directory")
    c.add_argument("--rho", type=float, default=1.0)
    c.add_argument("--gamma", type=float, default=1.0)
    c.add_argument("--prox-kind", choices=("none", "standard", "prox_linear"),
                   default="none")
    c.add_argument("--tau", type=float, default=None, help="uniform per-block tau")
    c.add_argument("--condition", choices=("all", "2.14", "4.1", "4.18"),
                   default="all")
    c.add_argument("--alpha", type=float, default=0.5,
                   help="witness alpha for condition 4.18")
    c.add_argument("--beta", type=float, default=1.0,
                   help="witness beta for condition 4.18")
    c.add_argument("--suggest-tau", choices=("standard", "prox_linear"),
                   default=None, help="print slack*threshold taus and re-check")
    c.add_argument("--slack", type=float, default=1.1)

    b = sub.add_parser("bench", help="multi-scheme comparison over seeded trials")
    b.add_argument("--config", required=True, help="JSON bench config path")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    handlers = {"generate": cmd_generate, "solve": cmd_solve,
                "check": cmd_check, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (CLIError, ConfigurationError, matio.FormatError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
