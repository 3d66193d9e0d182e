"""``lapsemix`` command line: simulate, fit, km, predict and bench.

Every subcommand accepts ``--config file.json`` whose keys mirror the long
flag names (``max_iters`` or ``max-iters``); flags given on the command
line win. Outputs go to ``--out``, else ``$LAPSEMIX_OUT``, else the
current directory, and each run writes ``<command>_manifest.json`` next to
its outputs.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from .em import EmConfig, run_em
from .gibbs import GibbsConfig, posterior_summary, read_draws_csv, run_gibbs, write_draws_csv, \
    write_summary_json
from .model import MixtureParams, read_dataset_csv, read_params_json, write_dataset_csv
from .nonparametric import empirical_hazard, kaplan_meier, write_km_csv
from .predict import conditional_churn_prob, default_grid, posterior_survival_curve
from .simulate import BENCHMARK_PARAMS, SCENARIO_PROFILES, SimSpec, simulate_insurance_portfolio, \
    simulate_mixture_dataset, write_truth_json

OUT_ENV = "LAPSEMIX_OUT"


class UsageError(Exception):
    pass


def _version():
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command, args, t0, inputs=(), outputs=(), **extra):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "duration_seconds": time.time() - t0,
        "version": _version(),
        **extra,
    }
    path = out / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return path


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args, t0):
    if args.n is None or args.n < 1:
        raise UsageError("--n must be a positive integer")
    out = _out_dir(args)
    if args.portfolio:
        if args.eta is not None or args.params is not None or args.censoring is not None:
            raise UsageError("--portfolio cannot be combined with --eta, --params or --censoring")
        data, truth = simulate_insurance_portfolio(args.n, args.seed, return_truth=True)
    else:
        if args.censoring_rate is not None:
            raise UsageError("--censoring-rate applies only to --portfolio")
        if args.eta is not None and args.params is not None:
            raise UsageError("give either --eta or --params, not both")
        censoring = 0.4 if args.censoring is None else args.censoring
        if not 0.0 <= censoring < 1.0:
            raise UsageError("--censoring must be in [0, 1)")
        params = BENCHMARK_PARAMS
        if args.params is not None:
            params = read_params_json(args.params)
        elif args.eta is not None:
            if not 0.0 <= args.eta <= 1.0:
                raise UsageError("--eta must be in [0, 1]")
            params = MixtureParams([args.eta, 1.0 - args.eta], params.coefficients, params.variances)
        covs = (0.5,) * params.p
        data, truth = simulate_mixture_dataset(SimSpec(args.n, params, covs, censoring, args.seed))
    data_path, truth_path = out / "dataset.csv", out / "truth.json"
    write_dataset_csv(data, data_path)
    write_truth_json(truth, truth_path)
    print(f"n={data.n} h={data.h} censoring={data.censoring_fraction:.4f}")
    return _write_manifest(out, "simulate", args, t0, outputs=[data_path, truth_path],
                           censoring_fraction=data.censoring_fraction)


# -- fit ----------------------------------------------------------------------

def cmd_fit(args, t0):
    if args.data is None:
        raise UsageError("--data is required")
    if args.k is None or args.k < 1:
        raise UsageError("--k must be a positive integer")
    if args.engine not in ("gibbs", "em"):
        raise UsageError("--engine must be gibbs or em")
    data = read_dataset_csv(args.data)
    out = _out_dir(args)
    if args.engine == "gibbs":
        try:
            config = GibbsConfig(iterations=args.iters, burn_in=args.burnin, thin=args.thin,
                                 seed=args.seed, K=args.k)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        t_fit = time.perf_counter()
        draws = run_gibbs(data, config=config)
        seconds = time.perf_counter() - t_fit
        summary = posterior_summary(draws)
        draws_path, summary_path = out / "draws.csv", out / "summary.json"
        write_draws_csv(draws, draws_path)
        write_summary_json(summary, summary_path)
        for name, s in summary.items():
            ess = "n/a" if s.degenerate else f"{s.ess:.0f}"
            print(f"{name:>12s} mean={s.mean:.4f} 95%=[{s.lo95:.4f}, {s.hi95:.4f}] ess={ess}")
        return _write_manifest(out, "fit", args, t0, inputs=[args.data],
                               outputs=[draws_path, summary_path], fit_seconds=seconds,
                               censoring_fraction=data.censoring_fraction)
    try:
        config = EmConfig(max_iterations=args.max_iters, tolerance=args.tol, n_starts=args.starts,
                          seed=args.seed, variant=args.variant)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = run_em(data, args.k, config)
    em_path, summary_path = out / "em.json", out / "summary.json"
    res.write_json(em_path)
    estimates = _named_estimates(res.params)
    summary_path.write_text(json.dumps({"estimates": estimates, "iterations": res.iterations,
                                        "converged": res.converged,
                                        "loglik": res.loglik_trajectory[-1]}, indent=2) + "\n",
                            encoding="utf-8")
    for name, v in estimates.items():
        print(f"{name:>12s} {v:.4f}")
    print(f"iterations={res.iterations} converged={res.converged}")
    return _write_manifest(out, "fit", args, t0, inputs=[args.data],
                           outputs=[em_path, summary_path], fit_seconds=res.seconds,
                           iterations=res.iterations, censoring_fraction=data.censoring_fraction)


def _named_estimates(params: MixtureParams) -> dict:
    est = {}
    for j in range(params.K):
        est[f"eta_{j + 1}"] = float(params.weights[j])
    for j in range(params.K):
        for c in range(params.p + 1):
            est[f"beta_{j + 1}_{c}"] = float(params.coefficients[j, c])
    for j in range(params.K):
        est[f"sigma2_{j + 1}"] = float(params.variances[j])
    return est


# -- km -----------------------------------------------------------------------

def cmd_km(args, t0):
    if args.data is None:
        raise UsageError("--data is required")
    data = read_dataset_csv(args.data)
    group = args.group_by
    if group is not None and group.isdigit():
        group = int(group)
    curves = kaplan_meier(data, group)
    out = _out_dir(args)
    outputs = []
    for label, curve in curves.items():
        name = "km.csv" if label is None else "km_" + re.sub(r"[^A-Za-z0-9_.-]+", "_", label) + ".csv"
        write_km_csv({label: curve}, out / name)
        outputs.append(out / name)
    if args.hazard_width is not None:
        table = empirical_hazard(data, args.hazard_width)
        path = out / "hazard.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("start,width,at_risk,events,hazard\n")
            for row in zip(table.start, table.at_risk, table.events, table.hazard):
                fh.write(f"{row[0]!r},{table.width!r},{int(row[1])},{int(row[2])},{float(row[3])!r}\n")
        outputs.append(path)
    print(f"{len(curves)} curve(s) written")
    return _write_manifest(out, "km", args, t0, inputs=[args.data], outputs=outputs)


# -- predict ------------------------------------------------------------------

def _load_model(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_draws_csv(path)
    return read_params_json(path)


def _parse_profile(text):
    if text in SCENARIO_PROFILES:
        return list(SCENARIO_PROFILES[text])
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    p = Path(str(text))
    raw = p.read_text(encoding="utf-8") if p.exists() else str(text)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        raise UsageError(f"--profile is neither a scenario name, a JSON file nor JSON: {text!r}") from None
    if isinstance(val, dict):
        val = val.get("x", val.get("profile"))
    if isinstance(val, (int, float)):
        val = [val]
    if not isinstance(val, list):
        raise UsageError("--profile must be a JSON list of covariate values")
    return [float(v) for v in val]


def _parse_grid(text):
    if text == "auto":
        raise UsageError("--grid auto needs --data for the observed time range")
    parts = str(text).split(":")
    if len(parts) != 3:
        raise UsageError("--grid must look like lo:hi:n")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError("--grid must look like lo:hi:n") from None
    if not (0 < lo < hi) or n < 2:
        raise UsageError("--grid needs 0 < lo < hi and n >= 2")
    return np.geomspace(lo, hi, n)


def _parse_bound(v):
    v = str(v).strip().lower()
    return math.inf if v in ("inf", "+inf", "infinity") else float(v)


def cmd_predict(args, t0):
    if args.model is None or args.profile is None:
        raise UsageError("--model and --profile are required")
    if args.grid is None and args.prob is None:
        raise UsageError("give --grid and/or --prob")
    model = _load_model(args.model)
    if args.point and not isinstance(model, MixtureParams):
        model = model.posterior_mean()
    x = _parse_profile(args.profile)
    out = _out_dir(args)
    outputs = []
    if args.grid is not None:
        if args.grid == "auto" and args.data is not None:
            grid = default_grid(read_dataset_csv(args.data).times)
        else:
            grid = _parse_grid(args.grid)
        curve = posterior_survival_curve(model, x, grid)
        curve.write_csv(out / "curve.csv")
        outputs.append(out / "curve.csv")
        print(f"curve with {len(grid)} points written")
    if args.prob is not None:
        try:
            a, b, c = (_parse_bound(v) for v in args.prob)
        except ValueError:
            raise UsageError("--prob takes three numbers a b c") from None
        est = conditional_churn_prob(model, x, a, b, c)
        est.write_json(out / "prob.json")
        outputs.append(out / "prob.json")
        ci = "" if est.lo95 is None else f" 95%=[{est.lo95:.4f}, {est.hi95:.4f}]"
        print(f"P({a:g} < T <= {b:g} | T > {c:g}) = {est.estimate:.4f}{ci}")
    return _write_manifest(out, "predict", args, t0, inputs=[args.model], outputs=outputs)


# -- bench --------------------------------------------------------------------

def _parse_list(text, conv):
    if isinstance(text, (list, tuple)):
        return [conv(v) for v in text]
    try:
        return [conv(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def bench_gibbs(sizes, censoring, iterations, burn_in, repeats=1, seed=0):
    """Wall-time table of Gibbs fits over a (size, censoring) grid.

    Rows are ``(n, censoring, min_seconds, median_seconds)``; data
    simulation is excluded from the timing.
    """
    rows = []
    config = GibbsConfig(iterations=iterations, burn_in=burn_in, seed=seed)
    for n in sizes:
        for cens in censoring:
            data, _ = simulate_mixture_dataset(SimSpec(n=n, censoring=cens, seed=seed))
            times = []
            for _ in range(repeats):
                t = time.perf_counter()
                run_gibbs(data, config=config)
                times.append(time.perf_counter() - t)
            rows.append((n, cens, min(times), float(np.median(times))))
    return rows


def cmd_bench(args, t0):
    sizes = _parse_list(args.sizes, int)
    cens = _parse_list(args.censoring, float)
    if not sizes or any(n < 1 for n in sizes):
        raise UsageError("--sizes must be positive integers")
    if not cens or any(not 0 <= c < 1 for c in cens):
        raise UsageError("--censoring values must be in [0, 1)")
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    try:
        GibbsConfig(iterations=args.iters, burn_in=args.burnin)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = bench_gibbs(sizes, cens, args.iters, args.burnin, args.repeats, args.seed)
    out = _out_dir(args)
    path = out / "bench.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,censoring,min_seconds,median_seconds\n")
        for n, c, tmin, tmed in rows:
            fh.write(f"{n},{c!r},{tmin:.6f},{tmed:.6f}\n")
            print(f"n={n} censoring={c:g} min={tmin:.3f}s median={tmed:.3f}s")
    return _write_manifest(out, "bench", args, t0, outputs=[path])


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lapsemix",
                                     description="Log-normal mixture survival models for policy lapse.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON file with flag values (flags override)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="simulate a benchmark or portfolio dataset")
    common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--censoring", type=float, help="censored fraction (default 0.4)")
    p.add_argument("--eta", type=float, help="weight of component 1")
    p.add_argument("--params", help="mixture parameter JSON")
    p.add_argument("--portfolio", action="store_true", help="simulate the insurance portfolio")
    p.add_argument("--censoring-rate", type=float, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the mixture by Gibbs sampling or EM")
    common(p)
    p.add_argument("--data")
    p.add_argument("--engine", choices=("gibbs", "em"), default="gibbs")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=10000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--starts", type=int, default=1)
    p.add_argument("--variant", choices=("exact", "plugin"), default="exact")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("km", help="Kaplan-Meier curves")
    common(p, seed=False)
    p.add_argument("--data")
    p.add_argument("--group-by", help="covariate column name or index")
    p.add_argument("--hazard-width", type=float, help="also write a life-table hazard")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("predict", help="survival curves and conditional churn probabilities")
    common(p, seed=False)
    p.add_argument("--model", help="draws CSV or parameter JSON")
    p.add_argument("--profile", help="JSON list, JSON file or scenario name")
    p.add_argument("--grid", help="lo:hi:n log-spaced, or 'auto' with --data")
    p.add_argument("--data", help="dataset for --grid auto")
    p.add_argument("--prob", nargs=3, metavar=("A", "B", "C"), help="P(A < T <= B | T > C)")
    p.add_argument("--point", action="store_true", help="use the posterior mean instead of averaging")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="time the Gibbs sampler over sizes and censoring levels")
    common(p)
    p.add_argument("--sizes", default="1000,10000")
    p.add_argument("--censoring", default="0.1,0.4,0.6")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    parser.subcommands = sub.choices
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    sub = parser.subcommands[args.command]
    known = {a.dest for a in sub._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known - {"command"})
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    cfg.pop("command", None)
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.time()
    try:
        args.func(args, t0)
    except UsageError as exc:
        print(f"lapsemix {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lapsemix {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
