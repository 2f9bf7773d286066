"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
quantities.  Run with ``pytest tests/test_acceptance.py -v -s`` or directly
as ``python tests/test_acceptance.py``.  The Monte-Carlo criteria take
several minutes each on one core.
"""
import sys
import time

import numpy as np
import pytest

from tuckervar import (DesignMatrices, FitConfig, GlpModel, Tensor3, TuckerFactors, ar_to_ma,
                       build_design, fit_agd, grad_factors, grad_full, loss, ma_to_ar,
                       penalized_loss, select_aic, simulate, truncation_error)
from tuckervar.forecast import RollingPlan, rolling_evaluate
from tuckervar.simulation import (DgpSpec, error_rate, make_dgp, run_error_vs_sparsity,
                                  run_ht_vs_st, run_rate_scaling, t0_from_rule)

RESULTS = {}
CAPTURE = []


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    """Let ``report`` bypass output capture so the verdict lines always show."""
    CAPTURE[:] = [capsys]
    yield
    CAPTURE.clear()


def report(number, ok, detail, seconds):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    RESULTS[number] = (ok, line)
    if CAPTURE:
        with CAPTURE[0].disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    return ok


def central_diff(fun, x, h):
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (fun(xp) - fun(xm)) / (2 * h)
    return out


def rel_err(fd, an):
    return np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300)


# -- 1. gradient fidelity -------------------------------------------------------

def gradient_errors(seed=0, count=100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(2, 9))
        t0 = int(rng.integers(1, 7))
        r1, r2 = (int(rng.integers(1, n + 1)) for _ in range(2))
        d = build_design(rng.standard_normal((n, t0 + 40)), t0)
        a = rng.standard_normal((n, n, t0))
        worst = max(worst, rel_err(central_diff(lambda x: loss(Tensor3(x), d), a, 1e-5),
                                   grad_full(Tensor3(a), d).array))
        f = TuckerFactors(Tensor3(0.5 * rng.standard_normal((r1, r2, t0))),
                          rng.standard_normal((n, r1)), rng.standard_normal((n, r2)))
        reg_a, reg_b = rng.uniform(0, 2), rng.uniform(0.5, 1.5)
        gu1, gu2, gg = grad_factors(f, d, reg_a, reg_b)

        def obj(core=f.core.array, u1=f.u1, u2=f.u2):
            return penalized_loss(TuckerFactors(Tensor3(core), u1, u2), d, reg_a, reg_b)

        for fd, an in ((central_diff(lambda x: obj(u1=x), np.array(f.u1), 1e-6), gu1),
                       (central_diff(lambda x: obj(u2=x), np.array(f.u2), 1e-6), gu2),
                       (central_diff(lambda x: obj(core=x), np.array(f.core.array), 1e-6),
                        gg.array)):
            worst = max(worst, rel_err(fd, an))
    return worst


def test_criterion_1_gradient_fidelity():
    start = time.perf_counter()
    worst = gradient_errors()
    took = time.perf_counter() - start
    ok = worst < 1e-5 and took < 10
    assert report(1, ok, f"max relative error {worst:.2e} over 100 instances", took)


# -- 2. MA / AR duality ---------------------------------------------------------

def stable(rng, n):
    m = rng.standard_normal((n, n))
    return m * (rng.uniform(0.1, 0.8) / max(abs(np.linalg.eigvals(m))))


def duality_errors(seed=0, count=50):
    rng = np.random.default_rng(seed)
    closed = trip = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 7))
        phi, theta = stable(rng, n), stable(rng, n)
        psi = [np.linalg.matrix_power(phi, j - 1) @ (phi - theta) for j in range(1, 41)]
        a = ma_to_ar(psi, 20)
        for j, aj in enumerate(a, start=1):
            closed = max(closed, np.max(np.abs(aj - np.linalg.matrix_power(theta, j - 1)
                                               @ (phi - theta))))
        back = ar_to_ma(ma_to_ar(psi, 20), 20)
        trip = max(trip, max(np.max(np.abs(x - y)) for x, y in zip(back, psi)))
    return closed, trip


def test_criterion_2_duality():
    start = time.perf_counter()
    closed, trip = duality_errors()
    took = time.perf_counter() - start
    ok = closed < 1e-10 and trip < 1e-10 and took < 5
    assert report(2, ok, f"closed-form error {closed:.2e}, round-trip error {trip:.2e}", took)


# -- 3. truncation error ----------------------------------------------------------

def test_criterion_3_truncation():
    start = time.perf_counter()
    value = truncation_error(make_dgp(DgpSpec("varma_411", 20, 4, seed=0)), 58)
    took = time.perf_counter() - start
    ok = 1.0e-17 <= value <= 1.5e-17 and took < 1
    assert report(3, ok, f"truncation error {value:.4e}", took)


# -- 4. error against sparsity ----------------------------------------------------

EVS = dict(spec=DgpSpec("seasonal_var_411", 10, 2, seed=7), t_len=800, t0=30,
           s_grid=list(range(3, 13)))


def error_vs_sparsity(reps):
    return run_error_vs_sparsity(EVS["spec"], EVS["t_len"], EVS["t0"], EVS["s_grid"], reps,
                                 FitConfig(t0=30, r1=2, r2=2, s=3))


def test_criterion_4_error_vs_sparsity():
    start = time.perf_counter()
    res = error_vs_sparsity(50)
    took = time.perf_counter() - start
    RESULTS["rows4"] = res.rows
    par = {row["s"]: row["parameter"] for row in res.summary}
    app = {row["s"]: row["approximation"] for row in res.summary}
    best = min(par, key=par.get)
    ratio = app[8] / app[3]
    ok = best in (4, 5, 6) and ratio < 0.1 and took < 900
    detail = (f"argmin_s parameter error = {best}, approx(8)/approx(3) = {ratio:.3f}; "
              + ", ".join(f"s={s}: {par[s]:.4f}" for s in EVS["s_grid"]))
    assert report(4, ok, detail, took)


# -- 5. rate linearity ------------------------------------------------------------

def rate_settings(n=10, r=2, s=10, betas=(1.0, 0.8, 0.6, 0.4)):
    """Smallest T whose rate falls to each target under the T0 = sqrt(T) rule."""
    out = []
    for beta in betas:
        t = 50
        while error_rate(s, r, n, t, t0_from_rule("1/2", t)) > beta:
            t += 1
        out.append((n, r, t))
    return out


def rate_scaling(reps):
    return run_rate_scaling("varma_411", rate_settings(), "1/2", reps,
                            FitConfig(t0=10, r1=2, r2=2, s=10), seed=0)


def test_criterion_5_rate_linearity():
    start = time.perf_counter()
    res = rate_scaling(30)
    took = time.perf_counter() - start
    RESULTS["rows5"] = res.rows
    beta = [row["beta"] for row in res.summary]
    err = [row["parameter"] for row in res.summary]
    corr = float(np.corrcoef(beta, err)[0, 1])
    ok = corr > 0.9 and min(beta) <= 0.41 and max(beta) >= 0.99 and took < 1200
    detail = (f"pearson {corr:.4f}; "
              + ", ".join(f"beta={b:.3f}: {e:.4f}" for b, e in zip(beta, err)))
    assert report(5, ok, detail, took)


# -- 6. hard against soft thresholding ----------------------------------------------

HTST = dict(spec=DgpSpec("varma_411", 10, 2, seed=0), t0=60, t_grid=[400, 800],
            s_grid=list(range(4, 19, 2)),
            lambdas=[0.0005, 0.00075, 0.001, 0.0015, 0.002, 0.003, 0.005, 0.008])


def ht_vs_st(reps):
    return run_ht_vs_st(HTST["spec"], HTST["s_grid"], HTST["lambdas"], reps,
                        FitConfig(t0=HTST["t0"], r1=2, r2=2, s=4),
                        t_grid=HTST["t_grid"], t0=HTST["t0"])


def test_criterion_6_ht_vs_st():
    start = time.perf_counter()
    res = ht_vs_st(10)
    took = time.perf_counter() - start
    RESULTS["rows6"] = res.rows
    lo, hi = res.summary
    s_shift = abs(hi["best_s"] - lo["best_s"])
    lam_ratio = max(lo["best_lambda"], hi["best_lambda"]) / min(lo["best_lambda"],
                                                                 hi["best_lambda"])
    iqr_ok = all(row["soft_sparsity_iqr"] > row["hard_sparsity_iqr"] for row in res.summary)
    ok = s_shift <= 2 and lam_ratio >= 1.5 and iqr_ok and took < 1200
    detail = (f"best s {lo['best_s']}->{hi['best_s']}, best lambda "
              f"{lo['best_lambda']}->{hi['best_lambda']} (ratio {lam_ratio:.2f}), IQR hard "
              f"{[row['hard_sparsity_iqr'] for row in res.summary]} soft "
              f"{[row['soft_sparsity_iqr'] for row in res.summary]}")
    assert report(6, ok, detail, took)


# -- 7. exact recovery --------------------------------------------------------------

def recovery_instance(seed=0):
    rng = np.random.default_rng(seed)
    n, t0 = 5, 3
    u = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :1]
    v = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :1]
    truth = np.zeros((n, n, t0))
    truth[:, :, 1] = 0.6 * u @ v.T
    x = rng.standard_normal((n * t0, 400))
    d = DesignMatrices(np.einsum("ikj,jkt->it", truth, x.reshape(t0, n, -1)), x)
    return d, truth


def recovery_error(seed=0):
    d, truth = recovery_instance(seed)
    res = fit_agd(d, FitConfig(t0=3, r1=1, r2=1, s=1, max_iter=2000, tol=1e-14))
    return float(np.linalg.norm(res.tensor().array - truth)), res.iterations_used


def test_criterion_7_exact_recovery():
    start = time.perf_counter()
    err, iters = recovery_error()
    took = time.perf_counter() - start
    ok = err < 1e-4 and iters <= 2000
    assert report(7, ok, f"||A_hat - A*||_F = {err:.2e} after {iters} iterations", took)


# -- 8. linear convergence ------------------------------------------------------------

def high_snr_instance(seed, noise=1e-3):
    """N=10, ranks (2, 2), three active lags, T=2000, responses nearly noiseless."""
    rng = np.random.default_rng(seed)
    n, t0, t_len = 10, 6, 2000
    q1 = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :2]
    q2 = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :2]
    truth = np.zeros((t0, n, n))
    for lag, scale in ((1, 0.5), (2, -0.3), (4, 0.25)):
        truth[lag - 1] = scale * q1 @ np.diag([1.0, 0.7]) @ q2.T
    y = simulate(GlpModel(n, ar=list(truth)), t_len, burn_in=100, rng=rng).values
    d = build_design(y, t0)
    exact = np.einsum("jik,jkt->it", truth, d.x.reshape(t0, n, -1))
    return DesignMatrices(exact + noise * rng.standard_normal(exact.shape), d.x), \
        np.moveaxis(truth, 0, 2)


def convergence_r2(seed):
    """R^2 of an affine fit to the log error between basin entry and the noise floor."""
    d, truth = high_snr_instance(seed)
    errs = []
    fit_agd(d, FitConfig(t0=6, r1=2, r2=2, s=3, tol=1e-12, max_iter=3000),
            callback=lambda k, a: errs.append(np.linalg.norm(a.array - truth)))
    errs = np.array(errs)
    floor = errs[-1]
    k = np.flatnonzero((errs <= 0.1 * np.linalg.norm(truth)) & (errs >= 10 * floor))
    logs = np.log(errs[k])
    coef = np.polyfit(k, logs, 1)
    r2 = 1 - np.sum((logs - np.polyval(coef, k)) ** 2) / np.sum((logs - logs.mean()) ** 2)
    return float(r2), float(coef[0]), len(k)


def test_criterion_8_linear_convergence():
    start = time.perf_counter()
    stats = [convergence_r2(seed) for seed in range(5)]
    took = time.perf_counter() - start
    worst = min(r2 for r2, _, _ in stats)
    ok = worst > 0.95 and all(slope < 0 and n >= 10 for _, slope, n in stats)
    detail = "; ".join(f"R2 {r2:.5f} slope {slope:.3f} over {n} its" for r2, slope, n in stats)
    assert report(8, ok, detail, took)


# -- 9. AIC selection -----------------------------------------------------------------

def aic_instance(rep, noise=0.05):
    """True (r1, r2, s) = (2, 2, 3): exact VAR predictions plus small response noise."""
    rng = np.random.default_rng(1000 + rep)
    n, t0 = 6, 6
    q1 = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :2]
    q2 = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :2]
    truth = np.zeros((t0, n, n))
    for lag, scale in ((1, 0.5), (2, -0.3), (4, 0.25)):
        truth[lag - 1] = scale * q1 @ np.diag([1.0, 0.7]) @ q2.T
    y = np.zeros((n, 600))
    eps = rng.standard_normal((n, 600))
    for t in range(t0, 600):
        y[:, t] = sum(truth[j] @ y[:, t - j - 1] for j in range(t0)) + eps[:, t]
    d = build_design(y[:, 100:], t0)
    exact = np.einsum("jik,jkt->it", truth, d.x.reshape(t0, n, -1))
    return DesignMatrices(exact + noise * rng.standard_normal(exact.shape), d.x)


AIC_GRID = [(a, b, s) for a in (1, 2, 3) for b in (1, 2, 3) for s in (2, 3, 4)]


def aic_picks():
    return [select_aic(aic_instance(rep), AIC_GRID, 1.0, FitConfig(t0=6, r1=1, r2=1, s=1))[0]
            for rep in range(30)]


def test_criterion_9_aic_selection():
    start = time.perf_counter()
    picks = aic_picks()
    took = time.perf_counter() - start
    RESULTS["picks9"] = picks
    hits = sum(p == (2, 2, 3) for p in picks)
    misses = [p for p in picks if p != (2, 2, 3)]
    ok = hits >= 24
    assert report(9, ok, f"truth selected in {hits}/30 runs; misses {misses}", took)


# -- 10. forecasting ------------------------------------------------------------------

def forecast_pair(rep, t_len=400, origins=100, refit_every=25, t0=12):
    data = simulate(make_dgp(DgpSpec("seasonal_var_411", 10, 2, seed=rep)), t_len, seed=rep)
    plan = RollingPlan(t_len - origins, t_len - 1, refit_every)
    cfg = FitConfig(t0=t0, r1=2, r2=2, s=5)
    sparse = rolling_evaluate(data, plan, cfg).msfe
    dense = rolling_evaluate(data, plan, cfg.with_(s=t0)).msfe
    return sparse, dense


def test_criterion_10_forecast():
    start = time.perf_counter()
    pairs = [forecast_pair(rep) for rep in range(20)]
    took = time.perf_counter() - start
    RESULTS["pairs10"] = pairs
    wins = sum(a < b for a, b in pairs)
    ratio = np.median([b / a for a, b in pairs])
    ok = wins >= 14
    assert report(10, ok, f"sparse model wins {wins}/20; median MSFE ratio baseline/model "
                          f"{ratio:.4f}", took)


# -- 11. determinism --------------------------------------------------------------------

def same_rows(full, partial):
    """Every row of ``partial`` equals its counterpart in ``full`` bit for bit."""
    def key(row):
        return tuple(sorted((k, repr(v)) for k, v in row.items()))
    have = {key(row) for row in full}
    return all(key(row) in have for row in partial)


def test_criterion_11_determinism():
    start = time.perf_counter()
    checks = {
        "1": gradient_errors(count=10) == gradient_errors(count=10),
        "2": duality_errors(count=10) == duality_errors(count=10),
        "3": (truncation_error(make_dgp(DgpSpec("varma_411", 20, 4, seed=0)), 58)
              == truncation_error(make_dgp(DgpSpec("varma_411", 20, 4, seed=0)), 58)),
        "7": recovery_error() == recovery_error(),
        "8": convergence_r2(0) == convergence_r2(0),
        "9": [select_aic(aic_instance(r), AIC_GRID, 1.0, FitConfig(t0=6, r1=1, r2=1, s=1))
              for r in range(2)] == [select_aic(aic_instance(r), AIC_GRID, 1.0,
                                                FitConfig(t0=6, r1=1, r2=1, s=1))
                                     for r in range(2)],
        "10": forecast_pair(0) == forecast_pair(0),
    }
    # the Monte-Carlo runs seed each replication on its own, so a short rerun must
    # reproduce the leading replications of the full run exactly
    for name, rerun in (("rows4", lambda: error_vs_sparsity(2)),
                        ("rows5", lambda: rate_scaling(2)),
                        ("rows6", lambda: ht_vs_st(1))):
        first = RESULTS.get(name) or rerun().rows
        checks[name[-1]] = same_rows(first, rerun().rows)
    if "picks9" in RESULTS:
        checks["9"] = checks["9"] and RESULTS["picks9"][:2] == [
            select_aic(aic_instance(r), AIC_GRID, 1.0, FitConfig(t0=6, r1=1, r2=1, s=1))[0]
            for r in range(2)]
    if "pairs10" in RESULTS:
        checks["10"] = checks["10"] and RESULTS["pairs10"][0] == forecast_pair(0)
    took = time.perf_counter() - start
    bad = sorted(k for k, v in checks.items() if not v)
    ok = not bad
    detail = "all reruns identical" if ok else f"differences in criteria {bad}"
    assert report(11, ok, detail, took)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
