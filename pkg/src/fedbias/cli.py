"""Command-line orchestrator: problem generation, analyses, experiment
suites, and deterministic CSV/JSON persistence.

Every output directory receives a manifest.json carrying the tool version,
CSV schema version, a hash of the effective parameters, and the problem
digest; re-running with the same inputs reproduces every CSV byte for
byte (no wall-clock anywhere).

Exit codes: 0 ok, 2 configuration error, 3 gate violation under --strict,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, linalg, theory
from .analysis_det import bias_bound_det, find_fixed_point, first_order_bias_h, \
    gamma_matrix_bias
from .analysis_sto import coupling_decay, estimate_stationary, mse_trace
from .fedavg import CSV_SCHEMA_VERSION, GateViolationError, RunConfig, \
    theory_gate_warnings
from .problems import NonConvergenceError, Problem, gen_random_quadratic, \
    gen_synthetic_heterogeneous, gen_synthetic_noisy, softplus_problem

FIG1_GAMMA = 0.01
FIG1_BUDGET = 10_000          # total local gradient passes T * H
FIG1_H_GRID = (10, 100)
FIG1_ALGORITHMS = ("fedavg", "rr_gamma", "scaffold")
FIG1_DATASETS = ("noisy", "heterogeneous")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small IO helpers
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _hash_params(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(outdir: Path, command: str, params: dict, problem_digest=None,
                    extra=None):
    doc = {
        "tool": "fedbias",
        "version": __version__,
        "csv_schema": CSV_SCHEMA_VERSION,
        "command": command,
        "params": params,
        "config_hash": _hash_params(params),
    }
    if problem_digest is not None:
        doc["problem_digest"] = problem_digest
    if extra:
        doc.update(extra)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_csv(path: Path, header: str, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(x if isinstance(x, str) else
                              (str(x) if isinstance(x, (int, np.integer)) else _fmt(x))
                              for x in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _emit_json(doc: dict):
    json.dump(doc, sys.stdout, sort_keys=True, indent=2)
    sys.stdout.write("\n")


def _load_problem(args) -> Problem:
    if getattr(args, "problem", None):
        path = Path(args.problem)
        if not path.exists():
            raise ConfigError(f"problem file not found: {path}")
        return Problem.from_json(path.read_text())
    raise ConfigError("a --problem file is required")


def _mse_csv_rows(traces):
    for trace in traces:
        for t, mse, mse_std, mse_avg, mse_avg_std in trace.rows():
            yield (t, mse, mse_std, mse_avg, mse_avg_std, trace.algorithm)


def _check_gates_strict(problem: Problem, gamma: float, h_local: int, strict: bool):
    notes = theory_gate_warnings(problem, gamma, h_local)
    if strict:
        if gamma > 1.0 / (2.0 * problem.lip) * (1 + 1e-12) or \
                gamma * problem.mu * h_local > 1.0:
            raise GateViolationError(
                f"strict mode: gamma={gamma:g}, H={h_local} violates "
                "gamma <= 1/(2L) or gamma*mu*H <= 1")
    return notes


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_problem(args) -> int:
    if args.family == "quadratic":
        p = gen_random_quadratic(args.seed, args.d, args.n_clients)
        if args.sigma is not None:
            from .problems import NoiseModel
            p = Problem(p.clients, NoiseModel.additive_iso(args.sigma, p.dim, p.n_clients))
    elif args.family == "noisy":
        p = gen_synthetic_noisy(args.seed, args.n_per_client)
    elif args.family == "heterogeneous":
        p = gen_synthetic_heterogeneous(args.seed, args.n_per_client)
    elif args.family == "softplus":
        p = softplus_problem(mu=args.mu, sigma=args.sigma if args.sigma is not None else 0.5,
                             n_clients=args.n_clients)
    else:
        raise ConfigError(f"unknown family {args.family!r}")
    text = p.to_json()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        _emit_json({"written": str(out), "problem_digest": p.digest(),
                    "family": p.family, "n_clients": p.n_clients, "dim": p.dim})
    else:
        sys.stdout.write(text + "\n")
    return 0


def cmd_fixed_point(args) -> int:
    p = _load_problem(args)
    notes = _check_gates_strict(p, args.gamma, args.h_local, args.strict)
    fp = find_fixed_point(p, args.gamma, args.h_local, tol=args.tol)
    bias = fp.theta_bar - p.global_optimum
    rhs = gamma_matrix_bias(p, args.gamma, args.h_local, fp.theta_bar)
    b_h = first_order_bias_h(p)
    doc = {
        "theta_bar": fp.theta_bar.tolist(),
        "residual": fp.residual,
        "iterations": fp.iterations,
        "bias": bias.tolist(),
        "bias_identity_rhs": rhs.tolist(),
        "bias_identity_gap": float(np.linalg.norm(rhs - bias)),
        "bias_bound": bias_bound_det(p, args.gamma, args.h_local),
        "b_h": b_h.tolist(),
        "first_order_prediction": (args.gamma * (args.h_local - 1) / 2 * b_h).tolist(),
        "warnings": notes,
    }
    _emit_json(doc)
    if args.out:
        outdir = Path(args.out)
        _write_manifest(outdir, "fixed-point",
                        {"gamma": args.gamma, "h_local": args.h_local, "tol": args.tol},
                        problem_digest=p.digest())
        with open(outdir / "fixed_point.json", "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return 0


def cmd_stationary(args) -> int:
    p = _load_problem(args)
    notes = _check_gates_strict(p, args.gamma, args.h_local, args.strict)
    est = estimate_stationary(p, args.gamma, args.h_local, n_chains=args.chains,
                              burn_in=args.burn_in, samples_per_chain=args.samples,
                              seed=args.seed)
    outdir = Path(args.out)
    params = {"gamma": args.gamma, "h_local": args.h_local, "chains": args.chains,
              "burn_in": est.burn_in, "samples": args.samples, "seed": args.seed}
    _write_manifest(outdir, "stationary", params, problem_digest=p.digest(),
                    extra={"warnings": list(est.warnings) + notes,
                           "n_effective": est.n_effective})
    rows = []
    d = p.dim
    for i in range(d):
        rows.append(("mean", i, "", est.mean[i]))
        rows.append(("mean_stderr", i, "", est.mean_stderr[i]))
    for i in range(d):
        for j in range(d):
            rows.append(("cov", i, j, est.cov[i, j]))
    _write_csv(outdir / "stationary.csv", "field,i,j,value", rows)
    if args.coupling_pairs:
        decay = coupling_decay(p, args.gamma, args.h_local, n_pairs=args.coupling_pairs,
                               rounds=args.coupling_rounds, seed=args.seed)
        _write_csv(outdir / "coupling.csv", "t,msd", [(int(t), m) for t, m in decay])
    _emit_json({"mean": est.mean.tolist(), "mean_stderr": est.mean_stderr.tolist(),
                "cov_fro": float(np.linalg.norm(est.cov)),
                "n_effective": est.n_effective, "out": str(outdir)})
    return 0


def cmd_bias_check(args) -> int:
    p = _load_problem(args)
    notes = _check_gates_strict(p, args.gamma, args.h_local, args.strict)
    setting = args.setting
    if setting == "auto":
        if p.family == "quadratic":
            setting = "quadratic"
        elif p.is_homogeneous:
            setting = "homogeneous"
        else:
            setting = "heterogeneous"
    empirical = None
    est = None
    if args.empirical == "stationary":
        est = estimate_stationary(p, args.gamma, args.h_local, n_chains=args.chains,
                                  samples_per_chain=args.samples, seed=args.seed)
        empirical = est.mean - p.global_optimum
    elif args.empirical == "fixed-point":
        fp = find_fixed_point(p, args.gamma, args.h_local)
        empirical = fp.theta_bar - p.global_optimum
    report = theory.predicted_bias(p, args.gamma, args.h_local, setting,
                                   empirical_bias=empirical)
    doc = report.to_dict()
    doc["warnings"] = notes
    if est is not None:
        doc["empirical_stderr"] = est.mean_stderr.tolist()
    _emit_json(doc)
    if args.out:
        outdir = Path(args.out)
        _write_manifest(outdir, "bias-check",
                        {"gamma": args.gamma, "h_local": args.h_local,
                         "setting": setting, "empirical": args.empirical},
                        problem_digest=p.digest())
        with open(outdir / "bias_check.json", "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return 0


def _compare_command(args, algorithms) -> int:
    p = _load_problem(args)
    notes = _check_gates_strict(p, args.gamma, args.h_local, args.strict)
    traces = []
    summary = {}
    for alg in algorithms:
        cfg = RunConfig(args.gamma, args.h_local, args.rounds, seed=args.seed,
                        algorithm=alg, coupled_rr=args.coupled)
        trace = mse_trace(p, cfg, n_replicas=args.replicas)
        traces.append(trace)
        k = max(trace.n_replicas, 1)
        summary[alg] = {
            "tail_mse_avg": float(trace.mse_avg[-1]),
            "tail_mse_avg_stderr": float(trace.mse_avg_std[-1] / np.sqrt(k)),
        }
    outdir = Path(args.out)
    params = {"gamma": args.gamma, "h_local": args.h_local, "rounds": args.rounds,
              "replicas": args.replicas, "seed": args.seed,
              "algorithms": list(algorithms), "coupled": args.coupled}
    _write_manifest(outdir, "compare", params, problem_digest=p.digest(),
                    extra={"warnings": notes, "summary": summary})
    _write_csv(outdir / "mse.csv", "t,mse,mse_std,mse_avg,mse_avg_std,algorithm",
               _mse_csv_rows(traces))
    _emit_json({"summary": summary, "out": str(outdir)})
    return 0


def cmd_rr_compare(args) -> int:
    return _compare_command(args, ("fedavg", "rr_gamma"))


def cmd_scaffold_compare(args) -> int:
    return _compare_command(args, ("fedavg", "scaffold"))


def cmd_mse_trace(args) -> int:
    return _compare_command(args, (args.algorithm,))


def cmd_slope(args) -> int:
    p = _load_problem(args)
    gammas = [args.gamma0 / 2**k for k in range(args.halvings)]
    _check_gates_strict(p, args.gamma0, args.h_local, args.strict)
    b_h = first_order_bias_h(p)
    opt = p.global_optimum
    rows = []
    resid = []
    for g in gammas:
        fp = find_fixed_point(p, g, args.h_local, tol=1e-13)
        r = float(np.linalg.norm(fp.theta_bar - opt - g * (args.h_local - 1) / 2 * b_h))
        rows.append((g, r))
        resid.append(r)
    slope = float(np.polyfit(np.log(gammas), np.log(resid), 1)[0])
    outdir = Path(args.out)
    _write_manifest(outdir, "slope",
                    {"gamma0": args.gamma0, "halvings": args.halvings,
                     "h_local": args.h_local},
                    problem_digest=p.digest(), extra={"fitted_slope": slope})
    _write_csv(outdir / "slope.csv", "gamma,residual_norm", rows)
    _emit_json({"fitted_slope": slope, "gammas": gammas, "residuals": resid,
                "out": str(outdir)})
    return 0


def _fig1_cell(task):
    """One (dataset, H, algorithm) cell of the benchmark matrix; top-level
    for process-pool pickling."""
    dataset, h_local, alg, outdir, seed, replicas, budget, n_per_client, coupled = task
    problem = (gen_synthetic_noisy(seed, n_per_client) if dataset == "noisy"
               else gen_synthetic_heterogeneous(seed, n_per_client))
    rounds = budget // h_local
    cfg = RunConfig(FIG1_GAMMA, h_local, rounds, seed=seed, algorithm=alg,
                    coupled_rr=coupled)
    trace = mse_trace(problem, cfg, n_replicas=replicas)
    cell = Path(outdir) / f"{dataset}_H{h_local}_{alg}"
    params = {"dataset": dataset, "h_local": h_local, "algorithm": alg,
              "gamma": FIG1_GAMMA, "rounds": rounds, "replicas": replicas,
              "seed": seed, "n_per_client": n_per_client,
              "coupled_rr": coupled}
    _write_manifest(cell, "repro-fig1-cell", params, problem_digest=problem.digest())
    _write_csv(cell / "mse.csv", "t,mse,mse_std,mse_avg,mse_avg_std,algorithm",
               _mse_csv_rows([trace]))
    k = max(trace.n_replicas, 1)
    return (f"{dataset}_H{h_local}_{alg}",
            {"tail_mse_avg": float(trace.mse_avg[-1]),
             "tail_mse_avg_stderr": float(trace.mse_avg_std[-1] / np.sqrt(k))})


def cmd_repro_fig1(args) -> int:
    outdir = Path(args.out)
    coupled = not args.independent_rr
    tasks = [
        (dataset, h, alg, str(outdir), args.seed, args.replicas, args.budget,
         args.n_per_client, coupled)
        for dataset in FIG1_DATASETS
        for h in FIG1_H_GRID
        for alg in FIG1_ALGORITHMS
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_fig1_cell, tasks))
    else:
        results = [_fig1_cell(t) for t in tasks]
    summary = dict(results)
    params = {"gamma": FIG1_GAMMA, "budget": args.budget, "h_grid": list(FIG1_H_GRID),
              "algorithms": list(FIG1_ALGORITHMS), "datasets": list(FIG1_DATASETS),
              "replicas": args.replicas, "seed": args.seed,
              "n_per_client": args.n_per_client, "coupled_rr": coupled}
    _write_manifest(outdir, "repro-fig1", params,
                    extra={"cells": sorted(summary), "summary": summary})
    _emit_json({"cells": len(tasks), "out": str(outdir), "summary": summary})
    return 0


def cmd_suite(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        doc = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for key in ("problem", "grid", "analyses", "seed"):
        if key not in doc:
            raise ConfigError(f"config missing required key {key!r}")
    if not doc["grid"]:
        raise ConfigError("run grid must be non-empty")
    prob_spec = doc["problem"]
    if "file" in prob_spec:
        ppath = cfg_path.parent / prob_spec["file"]
        if not ppath.exists():
            raise ConfigError(f"referenced problem file not found: {ppath}")
        problem = Problem.from_json(ppath.read_text())
    elif "inline" in prob_spec:
        problem = Problem.from_json(json.dumps(prob_spec["inline"]))
    else:
        raise ConfigError("problem spec needs 'file' or 'inline'")
    outdir = Path(args.out or doc.get("out", "suite-out"))
    known = {"fixed-point", "stationary", "bias-check", "mse-trace"}
    bad = set(doc["analyses"]) - known
    if bad:
        raise ConfigError(f"unknown analyses {sorted(bad)}; supported: {sorted(known)}")
    seed = int(doc["seed"])
    results = {}
    for k, cell in enumerate(doc["grid"]):
        gamma, h_local = float(cell["gamma"]), int(cell["h_local"])
        rounds = int(cell.get("rounds", 100))
        alg = cell.get("algorithm", "fedavg")
        cell_dir = outdir / f"cell{k:02d}_g{gamma:g}_h{h_local}"
        notes = _check_gates_strict(problem, gamma, h_local, args.strict)
        cell_res = {"warnings": notes}
        if "fixed-point" in doc["analyses"]:
            fp = find_fixed_point(problem, gamma, h_local)
            cell_res["fixed_point_bias"] = (fp.theta_bar - problem.global_optimum).tolist()
        if "stationary" in doc["analyses"]:
            est = estimate_stationary(problem, gamma, h_local, seed=seed)
            cell_res["stationary_mean"] = est.mean.tolist()
        if "bias-check" in doc["analyses"]:
            setting = "quadratic" if problem.family == "quadratic" else "heterogeneous"
            cell_res["bias_total"] = theory.predicted_bias(
                problem, gamma, h_local, setting).bias_total.tolist()
        if "mse-trace" in doc["analyses"]:
            cfg = RunConfig(gamma, h_local, rounds, seed=seed, algorithm=alg)
            trace = mse_trace(problem, cfg, n_replicas=int(cell.get("replicas", 4)))
            _write_csv(cell_dir / "mse.csv",
                       "t,mse,mse_std,mse_avg,mse_avg_std,algorithm",
                       _mse_csv_rows([trace]))
        _write_manifest(cell_dir, "suite-cell", dict(cell, seed=seed),
                        problem_digest=problem.digest(), extra=cell_res)
        results[cell_dir.name] = cell_res
    _write_manifest(outdir, "suite", {"config": doc, "seed": seed},
                    problem_digest=problem.digest())
    _emit_json({"cells": sorted(results), "out": str(outdir)})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sp, problem=True, gates=True):
    if problem:
        sp.add_argument("--problem", required=True, help="problem JSON file")
    sp.add_argument("--seed", type=int, default=0)
    if gates:
        sp.add_argument("--strict", action="store_true",
                        help="reject step sizes outside the theory gates")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedbias",
                                 description="FedAvg bias/variance simulation lab")
    ap.add_argument("--version", action="version", version=f"fedbias {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-problem", help="generate a reproducible problem JSON")
    sp.add_argument("--family", required=True,
                    choices=("quadratic", "noisy", "heterogeneous", "softplus"))
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--n-clients", type=int, default=4)
    sp.add_argument("--n-per-client", type=int, default=1000)
    sp.add_argument("--mu", type=float, default=0.5, help="softplus ridge weight")
    sp.add_argument("--sigma", type=float, default=None, help="additive noise std")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_gen_problem)

    sp = sub.add_parser("fixed-point", help="deterministic fixed point and bias identity")
    _add_common(sp)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--h-local", type=int, required=True)
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_fixed_point)

    sp = sub.add_parser("stationary", help="Monte Carlo stationary mean/covariance")
    _add_common(sp)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--h-local", type=int, required=True)
    sp.add_argument("--chains", type=int, default=32)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--coupling-pairs", type=int, default=0,
                    help="also emit coupling.csv from this many coupled pairs")
    sp.add_argument("--coupling-rounds", type=int, default=30)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_stationary)

    sp = sub.add_parser("bias-check", help="first-order bias decomposition report")
    _add_common(sp)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--h-local", type=int, required=True)
    sp.add_argument("--setting", default="auto",
                    choices=("auto",) + theory.SETTINGS)
    sp.add_argument("--empirical", default="none",
                    choices=("none", "stationary", "fixed-point"))
    sp.add_argument("--chains", type=int, default=32)
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bias_check)

    for name, func, extra_help in (
        ("rr-compare", cmd_rr_compare, "FedAvg vs step-size extrapolation"),
        ("scaffold-compare", cmd_scaffold_compare, "FedAvg vs SCAFFOLD"),
    ):
        sp = sub.add_parser(name, help=extra_help)
        _add_common(sp)
        sp.add_argument("--gamma", type=float, required=True)
        sp.add_argument("--h-local", type=int, required=True)
        sp.add_argument("--rounds", type=int, required=True)
        sp.add_argument("--replicas", type=int, default=10)
        sp.add_argument("--coupled", action="store_true")
        sp.add_argument("--out", required=True)
        sp.set_defaults(func=func)

    sp = sub.add_parser("mse-trace", help="per-round MSE of one algorithm")
    _add_common(sp)
    sp.add_argument("--algorithm", required=True,
                    choices=("fedavg", "fedavg_det", "scaffold", "rr_gamma", "rr_h"))
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--h-local", type=int, required=True)
    sp.add_argument("--rounds", type=int, required=True)
    sp.add_argument("--replicas", type=int, default=10)
    sp.add_argument("--coupled", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mse_trace)

    sp = sub.add_parser("slope", help="first-order-bias residual scaling in gamma")
    _add_common(sp)
    sp.add_argument("--gamma0", type=float, required=True)
    sp.add_argument("--h-local", type=int, required=True)
    sp.add_argument("--halvings", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_slope)

    sp = sub.add_parser("repro-fig1",
                        help="full benchmark matrix: 2 datasets x H in {10,100} x 3 algorithms")
    sp.add_argument("--out", required=True)
    sp.add_argument("--replicas", type=int, default=10)
    sp.add_argument("--budget", type=int, default=FIG1_BUDGET,
                    help="total local gradient passes T*H per run")
    sp.add_argument("--n-per-client", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--independent-rr", action="store_true",
                    help="draw independent noise for the two extrapolation "
                         "chains instead of the default shared streams")
    sp.set_defaults(func=cmd_repro_fig1)

    sp = sub.add_parser("suite", help="run an experiment-suite config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_suite)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed a message; map its error exit to 2
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, linalg.ContractViolationError) as exc:
        _err(exc)
        return 2
    except GateViolationError as exc:
        _err(exc)
        return 3
    except (NonConvergenceError, linalg.SingularOperatorError, FloatingPointError) as exc:
        _err(exc)
        return 4


def _err(exc: Exception):
    json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr,
              sort_keys=True)
    sys.stderr.write("\n")


if __name__ == "__main__":
    sys.exit(main())
