"""Monte-Carlo experiments on two low-rank data generating processes.

``varma_411``
    ``y_t = Phi y_{t-1} + eps_t - Theta eps_{t-1}`` with ``Phi = -0.5 P``,
    ``Theta = 0.7 P`` and ``P = B J B'``; its VAR(inf) matrices are
    ``-1.2 * 0.7**(j-1) * P``.
``seasonal_var_411``
    ``y_t = sum_{j in {1,4,5,8,9}} c_j 0.7**j P y_{t-j} + eps_t`` with
    ``(c_1, c_4, c_5, c_8, c_9) = (1, 2, -2, -1, 1)``.

``B`` is a Haar orthogonal matrix redrawn for every replication and
``J = diag(1_r, 0_{N-r})``.

Every replication draws from its own ``SeedSequence([seed, rep])`` stream,
so results do not depend on the worker count or scheduling.
"""
import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._parallel import parallel_map
from .estimator import FitConfig, build_design, fit_agd, fit_from_warm, warm_fit
from .exceptions import DivergenceError, ParameterError
from .process import (DEFAULT_BURN_IN, GlpModel, haar_orthogonal,
                      implied_var_coefficients, simulate, truncation_error)
from .tensor import GroupSupport, Tensor3

__all__ = [
    "DgpSpec",
    "ErrorDecomposition",
    "ExperimentResult",
    "make_dgp",
    "true_tensor",
    "decompose_error",
    "t0_from_rule",
    "error_rate",
    "run_error_vs_sparsity",
    "run_rate_scaling",
    "run_ht_vs_st",
    "DGP_KINDS",
]

DGP_KINDS = ("varma_411", "seasonal_var_411")
SEASONAL_COEFS = {1: 1.0, 4: 2.0, 5: -2.0, 8: -1.0, 9: 1.0}


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int
    r: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ParameterError(f"unknown DGP kind {self.kind!r}; choose from {DGP_KINDS}")
        if not 1 <= self.r <= self.n:
            raise ParameterError(f"need 1 <= r <= n, got r={self.r}, n={self.n}")


def _projector(n, r, rng):
    b = haar_orthogonal(n, rng)
    return b[:, :r] @ b[:, :r].T


def make_dgp(spec, rng=None):
    """Build the model; ``B`` comes from ``rng`` or, if omitted, from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p = _projector(spec.n, spec.r, rng)
    if spec.kind == "varma_411":
        return GlpModel(spec.n, ar=[-0.5 * p], ma=[-0.7 * p])
    ar = [SEASONAL_COEFS.get(j, 0.0) * 0.7 ** j * p for j in range(1, 10)]
    return GlpModel(spec.n, ar=ar)


def true_tensor(model, t0):
    """First ``t0`` VAR(inf) matrices of ``model`` as an ``N x N x t0`` tensor."""
    return Tensor3.from_slices(implied_var_coefficients(model, t0))


@dataclass(frozen=True)
class ErrorDecomposition:
    """Squared-error split over the fitted support ``S``.

    ``parameter`` is ``estimation + approximation`` by construction.
    """

    estimation: float
    approximation: float
    truncation: float
    parameter: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "parameter", self.estimation + self.approximation)


def decompose_error(estimate, truth, truncation=0.0):
    est = estimate.array
    tru = truth.array
    mask = GroupSupport.from_tensor(estimate).mask(est.shape[2])
    diff = est - np.where(mask[None, None, :], tru, 0.0)
    approx = tru[:, :, ~mask]
    return ErrorDecomposition(float(np.sum(diff * diff)), float(np.sum(approx * approx)),
                              float(truncation))


def t0_from_rule(rule, t_len):
    """Running order from a rule.

    ``rule`` is an integer (fixed order) or one of ``"1/4"``, ``"1/3"``,
    ``"1/2"`` for ``floor(c * T**alpha)`` with ``c = 1.5`` at ``alpha = 1/2``
    and ``c = 3`` otherwise.
    """
    if isinstance(rule, (int, np.integer)):
        return int(rule)
    rule = str(rule).strip()
    if rule.lstrip("-").isdigit():
        return int(rule)
    alphas = {"1/4": 0.25, "1/3": 1 / 3, "1/2": 0.5}
    if rule not in alphas:
        raise ParameterError(f"unknown T0 rule {rule!r}; use an integer or one of {list(alphas)}")
    alpha = alphas[rule]
    c = 1.5 if rule == "1/2" else 3.0
    # the epsilon keeps exact powers (e.g. 3 * 256**0.25 = 12) from flooring down
    return int(math.floor(c * t_len ** alpha + 1e-9))


def error_rate(s, r, n, t_len, t0):
    """``s (r N + log T0) / (T - T0)``."""
    return s * (r * n + math.log(t0)) / (t_len - t0)


@dataclass
class ExperimentResult:
    """Tidy per-replication rows plus aggregate rows and a JSON-ready summary."""

    name: str
    rows: list
    summary: list
    meta: dict = field(default_factory=dict)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "replications": os.path.join(out_dir, f"{self.name}_replications.csv"),
            "aggregate": os.path.join(out_dir, f"{self.name}_aggregate.csv"),
            "summary": os.path.join(out_dir, f"{self.name}_summary.json"),
        }
        _write_csv(paths["replications"], self.rows)
        _write_csv(paths["aggregate"], self.summary)
        with open(paths["summary"], "w") as fh:
            json.dump({"experiment": self.name, "meta": self.meta,
                       "aggregate": self.summary}, fh, indent=1, default=_jsonable)
            fh.write("\n")
        return paths


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (tuple, set)):
        return list(v)
    raise TypeError(f"cannot serialize {type(v)}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def _write_csv(path, rows):
    keys = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([_fmt(row.get(k, "")) for k in keys])


def _replication(spec, rep, t_len, burn_in):
    """Model, data and true VAR(inf) form for one replication."""
    model_ss, data_ss = np.random.SeedSequence([spec.seed, rep]).spawn(2)
    model = make_dgp(spec, np.random.default_rng(model_ss))
    data = simulate(model, t_len, burn_in=burn_in, rng=np.random.default_rng(data_ss))
    return model, data


def _mean(values):
    values = [v for v in values if not math.isnan(v)]
    return math.fsum(values) / len(values) if values else math.nan


def _iqr(values):
    if len(values) < 2:
        return math.nan
    q75, q25 = np.percentile(values, [75, 25])
    return float(q75 - q25)


def _shared_warm(d, cfg):
    """Warm start shared by every threshold variant, or the divergence it hit."""
    try:
        return warm_fit(d, replace(cfg, threshold="none", s=None, lam=None))
    except DivergenceError as exc:
        return exc


def _finish(d, cfg, warm):
    if isinstance(warm, DivergenceError):
        raise warm
    return fit_from_warm(d, cfg, warm)


# -- experiment 1: errors against sparsity -------------------------------------

def _evs_job(args):
    spec, rep, t_len, t0, s_grid, base_cfg, burn_in = args
    model, data = _replication(spec, rep, t_len, burn_in)
    d = build_design(data, t0)
    truth = true_tensor(model, t0)
    trunc = truncation_error(model, t0)
    rows = []
    warm = _shared_warm(d, replace(base_cfg, t0=t0, r1=spec.r, r2=spec.r))
    for s in s_grid:
        cfg = replace(base_cfg, t0=t0, r1=spec.r, r2=spec.r, s=s, threshold="hard")
        row = {"rep": rep, "s": s}
        try:
            fit = _finish(d, cfg, warm)
        except DivergenceError as exc:
            row.update(diverged=True, diverged_at=exc.iteration, estimation=math.nan,
                       approximation=math.nan, truncation=trunc, parameter=math.nan)
            rows.append(row)
            continue
        dec = decompose_error(fit.tensor(), truth, trunc)
        row.update(diverged=False, estimation=dec.estimation,
                   approximation=dec.approximation, truncation=dec.truncation,
                   parameter=dec.parameter, iterations=fit.iterations_used,
                   support=list(fit.support.active))
        rows.append(row)
    return rows


def run_error_vs_sparsity(spec, t_len, t0, s_grid, reps, base_cfg=None, threads=1,
                          burn_in=DEFAULT_BURN_IN):
    """Average estimation / approximation / truncation errors for each ``s``.

    The support ``S`` of each decomposition is the fitted support.  Diverged
    fits are excluded from the means and counted in ``n_diverged``.
    """
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    s_grid = [int(s) for s in s_grid]
    if not s_grid or min(s_grid) < 1 or max(s_grid) > t0:
        raise ParameterError(f"s grid must lie in 1..t0={t0}")
    if base_cfg is None:
        base_cfg = FitConfig(t0=t0, r1=spec.r, r2=spec.r, s=s_grid[0])
    jobs = [(spec, rep, t_len, t0, s_grid, base_cfg, burn_in) for rep in range(reps)]
    rows = [row for rep_rows in parallel_map(_evs_job, jobs, threads) for row in rep_rows]
    summary = []
    for s in s_grid:
        sub = [r for r in rows if r["s"] == s]
        ok = [r for r in sub if not r["diverged"]]
        summary.append({
            "s": s,
            "estimation": _mean([r["estimation"] for r in ok]),
            "approximation": _mean([r["approximation"] for r in ok]),
            "truncation": _mean([r["truncation"] for r in ok]),
            "parameter": _mean([r["parameter"] for r in ok]),
            "n_ok": len(ok),
            "n_diverged": len(sub) - len(ok),
        })
    meta = {"dgp": asdict(spec), "t_len": t_len, "t0": t0, "reps": reps,
            "config": asdict(base_cfg)}
    return ExperimentResult("error_vs_sparsity", rows, summary, meta)


# -- experiment 2: error against the theoretical rate ---------------------------

def _rate_job(args):
    kind, seed, (n, r, t_len), t0_rule, rep, base_cfg, burn_in = args
    spec = DgpSpec(kind, n, r, seed)
    t0 = t0_from_rule(t0_rule, t_len)
    model, data = _replication(spec, rep, t_len, burn_in)
    d = build_design(data, t0)
    truth = true_tensor(model, t0)
    s = min(base_cfg.s, t0)
    cfg = replace(base_cfg, t0=t0, r1=r, r2=r, s=s, threshold="hard")
    row = {"n": n, "r": r, "t_len": t_len, "t0": t0, "s": s, "rep": rep,
           "beta": error_rate(s, r, n, t_len, t0)}
    try:
        fit = fit_agd(d, cfg)
    except DivergenceError as exc:
        row.update(diverged=True, diverged_at=exc.iteration, parameter=math.nan)
        return row
    diff = fit.tensor().array - truth.array
    row.update(diverged=False, parameter=float(np.sum(diff * diff)),
               iterations=fit.iterations_used)
    return row


def run_rate_scaling(kind, settings, t0_rule, reps, base_cfg, seed=0, threads=1,
                     burn_in=DEFAULT_BURN_IN):
    """Mean squared parameter error against the rate ``beta`` per setting.

    ``settings`` is a sequence of ``(N, r, T)``; ``base_cfg.s`` fixes the
    sparsity level (capped at ``T0``).
    """
    settings = [tuple(int(v) for v in st) for st in settings]
    if not settings:
        raise ParameterError("settings grid is empty")
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    if base_cfg.s is None:
        raise ParameterError("base_cfg.s must be set")
    jobs = [(kind, seed, st, t0_rule, rep, base_cfg, burn_in)
            for st in settings for rep in range(reps)]
    rows = parallel_map(_rate_job, jobs, threads)
    summary = []
    for n, r, t_len in settings:
        sub = [x for x in rows if (x["n"], x["r"], x["t_len"]) == (n, r, t_len)]
        ok = [x for x in sub if not x["diverged"]]
        summary.append({
            "n": n, "r": r, "t_len": t_len, "t0": sub[0]["t0"], "s": sub[0]["s"],
            "beta": sub[0]["beta"],
            "parameter": _mean([x["parameter"] for x in ok]),
            "n_ok": len(ok), "n_diverged": len(sub) - len(ok),
        })
    meta = {"dgp": kind, "seed": seed, "t0_rule": str(t0_rule), "reps": reps,
            "config": asdict(base_cfg)}
    return ExperimentResult("rate_scaling", rows, summary, meta)


# -- experiment 3: hard against soft thresholding --------------------------------

def _ht_st_job(args):
    spec, rep, t_len, t0, s_grid, lambda_grid, base_cfg, burn_in = args
    model, data = _replication(spec, rep, t_len, burn_in)
    d = build_design(data, t0)
    truth = true_tensor(model, t0)
    rows = []
    warm = _shared_warm(d, replace(base_cfg, t0=t0, r1=spec.r, r2=spec.r))
    variants = [("hard", s, None) for s in s_grid] + [("soft", None, lam) for lam in lambda_grid]
    for method, s, lam in variants:
        cfg = replace(base_cfg, t0=t0, r1=spec.r, r2=spec.r, threshold=method,
                      s=s if method == "hard" else None, lam=lam)
        row = {"t_len": t_len, "t0": t0, "rep": rep, "method": method,
               "s": "" if s is None else s, "lam": "" if lam is None else lam}
        try:
            fit = _finish(d, cfg, warm)
        except DivergenceError as exc:
            row.update(diverged=True, diverged_at=exc.iteration, parameter=math.nan,
                       sparsity=-1)
            rows.append(row)
            continue
        diff = fit.tensor().array - truth.array
        row.update(diverged=False, parameter=float(np.sum(diff * diff)),
                   sparsity=len(fit.support))
        rows.append(row)
    return rows


def run_ht_vs_st(spec, s_grid, lambda_grid, reps, base_cfg=None, t_grid=None, t0=None,
                 t0_grid=None, t_len=None, threads=1, burn_in=DEFAULT_BURN_IN):
    """Compare hard and soft thresholding across sample sizes or running orders.

    Pass either ``t_grid`` with a fixed ``t0`` or ``t0_grid`` with a fixed
    ``t_len``.  For each setting the summary reports the error-minimizing
    ``s`` and ``lambda`` (by mean squared parameter error), the fitted
    sparsity levels at the optimal ``lambda`` and their interquartile
    ranges for both methods.
    """
    if (t_grid is None) == (t0_grid is None):
        raise ParameterError("vary exactly one of t_grid / t0_grid")
    if t_grid is not None:
        if t0 is None:
            raise ParameterError("t_grid needs a fixed t0")
        settings = [(int(t), int(t0)) for t in t_grid]
    else:
        if t_len is None:
            raise ParameterError("t0_grid needs a fixed t_len")
        settings = [(int(t_len), int(k)) for k in t0_grid]
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    s_grid = [int(s) for s in s_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if base_cfg is None:
        base_cfg = FitConfig(t0=settings[0][1], r1=spec.r, r2=spec.r, s=s_grid[0])
    jobs = [(spec, rep, t, k, [s for s in s_grid if s <= k], lambda_grid, base_cfg, burn_in)
            for t, k in settings for rep in range(reps)]
    rows = [row for rep_rows in parallel_map(_ht_st_job, jobs, threads) for row in rep_rows]

    summary = []
    for t, k in settings:
        sub = [r for r in rows if (r["t_len"], r["t0"]) == (t, k)]
        hard_err = {s: _mean([r["parameter"] for r in sub
                              if r["method"] == "hard" and r["s"] == s and not r["diverged"]])
                    for s in s_grid if s <= k}
        soft_err = {lam: _mean([r["parameter"] for r in sub
                                if r["method"] == "soft" and r["lam"] == lam and not r["diverged"]])
                    for lam in lambda_grid}
        best_s = _argmin(hard_err)
        best_lam = _argmin(soft_err)
        hard_sizes = [r["sparsity"] for r in sub if r["method"] == "hard"
                      and r["s"] == best_s and not r["diverged"]]
        soft_sizes = [r["sparsity"] for r in sub if r["method"] == "soft"
                      and r["lam"] == best_lam and not r["diverged"]]
        summary.append({
            "t_len": t, "t0": k,
            "best_s": best_s, "best_s_error": hard_err.get(best_s, math.nan),
            "best_lambda": best_lam, "best_lambda_error": soft_err.get(best_lam, math.nan),
            "hard_sparsity_iqr": _iqr(hard_sizes),
            "soft_sparsity_iqr": _iqr(soft_sizes),
            "soft_sparsity_at_best": soft_sizes,
            "hard_errors": [hard_err[s] for s in sorted(hard_err)],
            "soft_errors": [soft_err[v] for v in lambda_grid],
            "n_diverged": sum(1 for r in sub if r["diverged"]),
        })
    meta = {"dgp": asdict(spec), "settings": settings, "s_grid": s_grid,
            "lambda_grid": lambda_grid, "reps": reps, "config": asdict(base_cfg)}
    return ExperimentResult("ht_vs_st", rows, summary, meta)


def _argmin(errors):
    live = [(v, key) for key, v in errors.items() if not math.isnan(v)]
    return min(live)[1] if live else None
