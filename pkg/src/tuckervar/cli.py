"""Command-line interface: ``tuckervar {fit,select,simulate,forecast,convert}``.

Every option may also come from a ``--config`` file of ``key = value``
lines (``#`` starts a comment, keys use the long option names with ``-`` or
``_``).  Explicit flags override the file, which overrides the defaults.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from ._parallel import THREADS_ENV, resolve_threads
from .estimator import FitConfig, build_design, fit_agd, select_aic
from .exceptions import DivergenceError, SelectionError, TuckerVarError
from .forecast import RollingPlan, rolling_evaluate
from .process import PanelData, ar_to_ma, ma_to_ar
from .simulation import (DGP_KINDS, DgpSpec, run_error_vs_sparsity, run_ht_vs_st,
                         run_rate_scaling)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
COEF_SCHEMA = "tuckervar-coef-v1"
EXPERIMENTS = ("error_vs_sparsity", "rate_scaling", "ht_vs_st")

EPILOG = f"""exit codes:
  0  success
  2  usage, input/output or validation error
  3  numerical failure (solver divergence, every AIC candidate diverged)

environment:
  {THREADS_ENV}  worker count when --threads is not given (default 1)
"""


DESCRIPTION = ("Sparse low-rank VAR sieve estimation: fit, select, simulate, forecast, convert.\n"
               "Options can also be read from --config FILE (key = value lines); "
               "explicit flags win.")


class UsageError(Exception):
    pass


def _int_list(text):
    """``"3..12"``, ``"4..18:2"`` or ``"3,5,8"``."""
    text = text.strip()
    if ".." in text:
        lo, rest = text.split("..", 1)
        hi, _, step = rest.partition(":")
        return list(range(int(lo), int(hi) + 1, int(step or 1)))
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _settings(text):
    """``"10:2:255,10:2:317"`` -> ``[(10, 2, 255), (10, 2, 317)]``."""
    out = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"setting {item!r} is not N:r:T")
        out.append(tuple(int(p) for p in parts))
    return out


# -- parser ------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="key = value file of option defaults")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")


def _add_solver(p):
    g = p.add_argument_group("solver")
    g.add_argument("--t0", type=int, required=False, help="running order T0")
    g.add_argument("--r1", type=int, help="response rank r1")
    g.add_argument("--r2", type=int, help="predictor rank r2")
    g.add_argument("--s", type=int, help="number of active lags kept by hard thresholding")
    g.add_argument("--threshold", choices=("hard", "soft", "none"), default="hard",
                   help="projection after each step (default hard)")
    g.add_argument("--lam", type=float, help="soft-threshold level (with --threshold soft)")
    g.add_argument("--reg-a", type=float, default=1.0, help="balance penalty weight a (default 1)")
    g.add_argument("--reg-b", type=float, default=1.0, help="loading scale b (default 1)")
    g.add_argument("--step", type=float, help="absolute step size (overrides --step-scale)")
    g.add_argument("--step-scale", type=float, default=1.0,
                   help="step = scale / lambda_max(XX'/T1) (default 1.0)")
    g.add_argument("--max-iter", type=int, default=2000, help="iteration cap (default 2000)")
    g.add_argument("--warm-start-iters", type=int, default=1000,
                   help="unthresholded iterations at most before projecting (default 1000)")
    g.add_argument("--tol", type=float, default=1e-6,
                   help="relative-change stopping tolerance (default 1e-6)")
    g.add_argument("--backtrack", action=argparse.BooleanOptionalAction, default=True,
                   help="halve the step when the objective rises")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tuckervar", description=DESCRIPTION, epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("fit", help="fit one model to a CSV panel", epilog=EPILOG,
                       formatter_class=fmt)
    p.add_argument("data", help="CSV panel: header of series names, one row per time step")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize each series before fitting")
    p.add_argument("--out", default="fit.json", help="fit JSON path (default fit.json)")
    p.add_argument("--summary", help="write the text summary here instead of stdout")
    p.add_argument("--select", metavar="GRIDFILE",
                   help="choose (r1, r2, s) by AIC over a CSV grid with header r1,r2,s; "
                        "the AIC table is written next to --out")
    p.add_argument("--aic-c", type=float, default=1.0, help="AIC penalty constant c (default 1)")

    p = sub.add_parser("select", help="AIC selection over an (r1, r2, s) grid",
                       epilog=EPILOG, formatter_class=fmt)
    p.add_argument("data", help="CSV panel")
    p.add_argument("--grid", required=False, help="CSV grid with header r1,r2,s")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize each series before fitting")
    p.add_argument("--aic-c", type=float, default=1.0, help="AIC penalty constant c (default 1)")
    p.add_argument("--out", default="aic.csv", help="AIC table CSV (default aic.csv)")
    p.add_argument("--fit-out", help="also write the selected fit as JSON")

    p = sub.add_parser("simulate", help="run a Monte-Carlo experiment", epilog=EPILOG,
                       formatter_class=fmt)
    p.add_argument("experiment", help=f"one of {', '.join(EXPERIMENTS)}")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--out", default="results", help="output directory (default results)")
    p.add_argument("--dgp", choices=DGP_KINDS, help="data generating process")
    p.add_argument("--n", type=int, default=10, help="dimension N (default 10)")
    p.add_argument("--r", type=int, default=2, help="rank of the DGP (default 2)")
    p.add_argument("--t-len", type=int, help="sample size T")
    p.add_argument("--reps", type=int, default=50, help="replications (default 50)")
    p.add_argument("--burn-in", type=int, default=500, help="burn-in steps (default 500)")
    p.add_argument("--s-grid", type=_int_list, help='sparsity grid, e.g. "3..12" or "4..16:2"')
    p.add_argument("--lambda-grid", type=_float_list, help="soft-threshold grid, comma separated")
    p.add_argument("--t-grid", type=_int_list, help="sample sizes for ht_vs_st")
    p.add_argument("--t0-grid", type=_int_list, help="running orders for ht_vs_st (fixed T)")
    p.add_argument("--t0-rule", help='rate_scaling running order: integer, "1/4", "1/3" or "1/2"')
    p.add_argument("--settings", type=_settings, help='rate_scaling grid "N:r:T,N:r:T,..."')

    p = sub.add_parser("forecast", help="rolling one-step-ahead evaluation", epilog=EPILOG,
                       formatter_class=fmt)
    p.add_argument("data", help="CSV panel")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--first-origin", type=int,
                   help="first forecast origin, a 0-based column index (default T - 20)")
    p.add_argument("--last-origin", type=int, help="last origin (default T - 1)")
    p.add_argument("--refit-every", type=int, default=1,
                   help="refit every k origins; 0 fits once (default 1)")
    p.add_argument("--original-units", action=argparse.BooleanOptionalAction, default=False,
                   help="report errors in the data's units instead of standardized ones")
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=False,
                   help="start each refit from the previous fit (sequential)")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize each training window")
    p.add_argument("--out", default="forecast.json", help="metrics JSON (default forecast.json)")
    p.add_argument("--csv", help="one-row metrics CSV (default: --out with .csv)")

    p = sub.add_parser("convert", help="convert MA(inf) <-> VAR(inf) coefficient files",
                       epilog=EPILOG, formatter_class=fmt)
    p.add_argument("input", help=f"coefficient JSON ({COEF_SCHEMA})")
    p.add_argument("--horizon", type=int, default=20, help="matrices to emit (default 20)")
    p.add_argument("--out", help="output JSON (default stdout)")
    p.add_argument("--config", metavar="FILE", help="key = value file of option defaults")
    return parser


# -- config files --------------------------------------------------------------

def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def _config_argv(sub, path):
    """Translate a ``key = value`` file into option tokens for ``sub``."""
    options = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                options[opt[2:]] = action
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    argv = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        name = key.replace("_", "-")
        action = options.get(name)
        if action is None:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if name in ("config", "help"):
            raise UsageError(f"{path}:{lineno}: key {key!r} is not allowed in a config file")
        if isinstance(action, argparse.BooleanOptionalAction):
            flag = value.lower()
            if flag not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise UsageError(f"{path}:{lineno}: {key} needs a boolean, got {value!r}")
            on = flag in ("true", "1", "yes", "on")
            if name.startswith("no-"):
                on = not on
                name = name[3:]
            argv.append(f"--{name}" if on else f"--no-{name}")
        else:
            argv.extend([f"--{name}", value])
    return argv


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = _subparser(parser, args.command)
        extra = _config_argv(sub, args.config)
        # file options first so that explicit flags, parsed later, win
        args = parser.parse_args([args.command] + extra + argv[argv.index(args.command) + 1:])
    return args


# -- helpers -----------------------------------------------------------------

def _fit_config(args, t0=None, r1=None, r2=None, s=None, need_s=True):
    t0 = args.t0 if t0 is None else t0
    r1 = args.r1 if r1 is None else r1
    r2 = args.r2 if r2 is None else r2
    s = args.s if s is None else s
    missing = [name for name, v in (("--t0", t0), ("--r1", r1), ("--r2", r2)) if v is None]
    if need_s and args.threshold == "hard" and s is None:
        missing.append("--s")
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return FitConfig(t0=t0, r1=r1, r2=r2, s=s if args.threshold == "hard" else None,
                     reg_a=args.reg_a, reg_b=args.reg_b, step=args.step,
                     step_scale=args.step_scale, max_iter=args.max_iter,
                     warm_start_iters=args.warm_start_iters, tol=args.tol,
                     threshold=args.threshold, lam=args.lam, seed=args.seed,
                     backtrack=args.backtrack)


def _load_panel(path, standardize):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    data = PanelData.from_csv(path)
    return data.standardize() if standardize else data


def _read_grid(path):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [h.strip() for h in rows[0]] != ["r1", "r2", "s"]:
        raise UsageError(f"{path}: grid file needs the header r1,r2,s")
    try:
        grid = [tuple(int(v) for v in r) for r in rows[1:]]
    except ValueError:
        raise UsageError(f"{path}: grid entries must be integers") from None
    if not grid or any(len(t) != 3 for t in grid):
        raise UsageError(f"{path}: grid needs at least one row of three integers")
    return grid


def _write_table(path, rows):
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([repr(float(row[k])) if isinstance(row[k], float) else row[k]
                             for k in keys])


def _matrix_lines(mat, names, width=10):
    head = " " * width + "".join(f"{f'f{j + 1}':>11}" for j in range(mat.shape[1]))
    lines = [head]
    for name, row in zip(names, mat):
        label = name if len(name) <= width else name[:width - 1] + "~"
        lines.append(f"{label:<{width}}" + "".join(f"{v:>11.4f}" for v in row))
    return lines


def fit_summary(res, names):
    """Human-readable report: ranks, active lags, slice norms and loadings."""
    f = res.factors
    norms = np.linalg.norm(res.tensor().slices(), axis=(1, 2))
    lines = [
        f"N = {f.n}, T0 = {f.t0}, ranks (r1, r2) = {f.ranks}",
        f"active lags: {', '.join(map(str, res.support.active)) or 'none'}",
        f"converged: {res.converged} after {res.iterations_used} iterations",
        f"final objective: {float(res.objective_trace[-1])!r}" if len(res.objective_trace) else
        "final objective: n/a",
        "",
        "lag  ||A_j||_F",
    ]
    lines += [f"{j:>3}  {norms[j - 1]:.6g}" for j in res.support.active]
    for title, u in (("response loadings U1", f.u1), ("predictor loadings U2", f.u2)):
        lines += ["", title]
        lines += _matrix_lines(np.asarray(u), names)
    return "\n".join(lines) + "\n"


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _aic_path(out):
    root, _ = os.path.splitext(out)
    return root + "_aic.csv"


# -- commands ------------------------------------------------------------------

def cmd_fit(args):
    data = _load_panel(args.data, args.standardize)
    threads = resolve_threads(args.threads)
    if args.select:
        grid = _read_grid(args.select)
        base = _fit_config(args, r1=args.r1 or 1, r2=args.r2 or 1, s=args.s or 1)
        d = build_design(data, base.t0)
        best, table, fits = select_aic(d, grid, args.aic_c, base, threads=threads,
                                       return_fits=True)
        _write_table(_aic_path(args.out), table)
        res = fits[grid.index(best)]
    else:
        cfg = _fit_config(args)
        res = fit_agd(build_design(data, cfg.t0), cfg)
    res.to_json(args.out)
    _emit(fit_summary(res, data.names), args.summary)
    return EXIT_OK


def cmd_select(args):
    if not args.grid:
        raise UsageError("select needs --grid FILE")
    data = _load_panel(args.data, args.standardize)
    grid = _read_grid(args.grid)
    base = _fit_config(args, r1=args.r1 or 1, r2=args.r2 or 1, s=args.s or 1)
    best, table, fits = select_aic(build_design(data, base.t0), grid, args.aic_c, base,
                                   threads=resolve_threads(args.threads), return_fits=True)
    _write_table(args.out, table)
    if args.fit_out:
        fits[grid.index(best)].to_json(args.fit_out)
    print(f"selected r1={best[0]} r2={best[1]} s={best[2]}")
    return EXIT_OK


# desk-scale defaults per experiment
SIM_DEFAULTS = {
    "error_vs_sparsity": dict(dgp="seasonal_var_411", t_len=800, t0=30, s_grid=list(range(3, 13))),
    "rate_scaling": dict(dgp="varma_411", s=10, t0_rule="1/2",
                         settings=[(10, 2, 255), (10, 2, 317), (10, 2, 421), (10, 2, 628)]),
    "ht_vs_st": dict(dgp="varma_411", t0=60, t_grid=[400, 800], s_grid=[4, 6, 8, 12, 16],
                     lambda_grid=[0.00075, 0.0015, 0.003, 0.006]),
}


def _pick(args, name, experiment):
    value = getattr(args, name, None)
    return SIM_DEFAULTS[experiment].get(name) if value is None else value


def cmd_simulate(args):
    exp = args.experiment
    if exp not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}")
    threads = resolve_threads(args.threads)
    kind = _pick(args, "dgp", exp)
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")

    def base(t0, s):
        return _fit_config(args, t0=t0, r1=args.r1 or args.r, r2=args.r2 or args.r, s=s)

    if exp == "error_vs_sparsity":
        t0 = _pick(args, "t0", exp)
        s_grid = _pick(args, "s_grid", exp)
        spec = DgpSpec(kind, args.n, args.r, args.seed)
        res = run_error_vs_sparsity(spec, _pick(args, "t_len", exp), t0, s_grid, args.reps,
                                    base(t0, s_grid[0]), threads=threads, burn_in=args.burn_in)
    elif exp == "rate_scaling":
        settings = args.settings
        if settings is None:
            settings = [(args.n, args.r, t) for t in args.t_grid] if args.t_grid else \
                SIM_DEFAULTS[exp]["settings"]
        res = run_rate_scaling(kind, settings, _pick(args, "t0_rule", exp), args.reps,
                               base(10, _pick(args, "s", exp)), seed=args.seed,
                               threads=threads, burn_in=args.burn_in)
    else:
        spec = DgpSpec(kind, args.n, args.r, args.seed)
        s_grid = _pick(args, "s_grid", exp)
        lambdas = _pick(args, "lambda_grid", exp)
        if args.t0_grid:
            if args.t_len is None:
                raise UsageError("--t0-grid needs --t-len")
            kw = dict(t0_grid=args.t0_grid, t_len=args.t_len)
            t0 = max(args.t0_grid)
        else:
            t0 = _pick(args, "t0", exp)
            kw = dict(t_grid=_pick(args, "t_grid", exp), t0=t0)
        res = run_ht_vs_st(spec, s_grid, lambdas, args.reps, base(t0, min(s_grid)),
                           threads=threads, burn_in=args.burn_in, **kw)
    paths = res.write(args.out)
    for label in ("replications", "aggregate", "summary"):
        print(f"{label}: {paths[label]}")
    return EXIT_OK


def cmd_forecast(args):
    if not os.path.exists(args.data):
        raise UsageError(f"no such file: {args.data}")
    data = PanelData.from_csv(args.data)
    cfg = _fit_config(args)
    first = data.t_len - 20 if args.first_origin is None else args.first_origin
    last = data.t_len - 1 if args.last_origin is None else args.last_origin
    plan = RollingPlan(first, last, args.refit_every)
    metrics = rolling_evaluate(data, plan, cfg, standardize=args.standardize,
                               original_units=args.original_units, warm_start=args.warm_start,
                               threads=resolve_threads(args.threads))
    metrics.to_json(args.out)
    csv_path = args.csv or os.path.splitext(args.out)[0] + ".csv"
    metrics.to_csv(csv_path, t0=cfg.t0, r1=cfg.r1, r2=cfg.r2,
                   s="" if cfg.s is None else cfg.s, threshold=cfg.threshold,
                   first_origin=first, last_origin=last, refit_every=args.refit_every)
    print(f"msfe {metrics.msfe!r}  mafe {metrics.mafe!r}  origins {len(metrics.origins)}"
          f"  skipped {len(metrics.skipped)}")
    return EXIT_OK if metrics.origins else EXIT_NUMERIC


def read_coefficients(path):
    """``(kind, matrices)`` from a coefficient JSON file."""
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("schema") != COEF_SCHEMA:
        raise UsageError(f"{path}: expected schema {COEF_SCHEMA!r}")
    kind = doc.get("kind")
    if kind not in ("ma", "ar"):
        raise UsageError(f"{path}: kind must be 'ma' or 'ar'")
    try:
        mats = [np.asarray(m, dtype=float) for m in doc.get("matrices", [])]
    except (TypeError, ValueError):
        raise UsageError(f"{path}: matrices must be numeric") from None
    if not mats or any(m.ndim != 2 or m.shape != (m.shape[0], m.shape[0]) or
                       m.shape != mats[0].shape for m in mats):
        raise UsageError(f"{path}: need a nonempty list of equal square matrices")
    if not all(np.all(np.isfinite(m)) for m in mats):
        raise UsageError(f"{path}: non-finite coefficients")
    return kind, mats


def coefficients_json(kind, mats):
    head = {"schema": COEF_SCHEMA, "kind": kind, "n": int(mats[0].shape[0])}
    body = ",\n".join("  " + json.dumps(m.tolist()) for m in mats)
    return json.dumps(head)[:-1] + ', "matrices": [\n' + body + "\n]}\n"


def cmd_convert(args):
    kind, mats = read_coefficients(args.input)
    if args.horizon < 1:
        raise UsageError("--horizon must be positive")
    if kind == "ma":
        out_kind, out = "ar", ma_to_ar(mats, args.horizon)
    else:
        out_kind, out = "ma", ar_to_ma(mats, args.horizon)
    if not all(np.all(np.isfinite(m)) for m in out):
        raise DivergenceError(args.horizon, "coefficient recursion overflowed")
    _emit(coefficients_json(out_kind, out), args.out)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate,
            "forecast": cmd_forecast, "convert": cmd_convert}


def main(argv=None):
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"tuckervar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (DivergenceError, SelectionError) as exc:
        print(f"tuckervar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, TuckerVarError, ValueError) as exc:
        print(f"tuckervar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        where = f": {exc.filename}" if exc.filename else ""
        print(f"tuckervar: error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
