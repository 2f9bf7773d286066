import json
import math

import numpy as np
import pytest

from tuckervar import FitConfig, ParameterError, Tensor3, check_stationarity, truncation_error
from tuckervar.simulation import (DgpSpec, decompose_error, error_rate, make_dgp,
                                  run_error_vs_sparsity, run_ht_vs_st, run_rate_scaling,
                                  t0_from_rule, true_tensor)


def principal_angle_gap(a, b):
    """Largest sine of a principal angle between the column spaces of a and b."""
    qa = np.linalg.qr(a)[0]
    qb = np.linalg.qr(b)[0]
    return np.linalg.norm(qa - qb @ (qb.T @ qa), 2)


class TestDgp:
    def test_varma_var_form(self):
        spec = DgpSpec("varma_411", 8, 3, seed=4)
        model = make_dgp(spec)
        b = np.linalg.qr(np.random.default_rng(4).standard_normal((8, 8)))[0]
        b = b * np.sign(np.diag(np.linalg.qr(np.random.default_rng(4).standard_normal((8, 8)))[1]))
        p = b[:, :3] @ b[:, :3].T
        a = true_tensor(model, 20)
        for j in range(1, 21):
            np.testing.assert_allclose(a.slice(j), -1.2 * 0.7 ** (j - 1) * p, atol=1e-10)

    def test_seasonal_structure(self):
        model = make_dgp(DgpSpec("seasonal_var_411", 6, 2, seed=1))
        assert model.p == 9 and model.q == 0
        norms = [np.linalg.norm(m) for m in model.ar]
        active = [j + 1 for j, v in enumerate(norms) if v > 0]
        assert active == [1, 4, 5, 8, 9]
        ratio = model.ar[3] / model.ar[0]
        np.testing.assert_allclose(ratio[np.abs(model.ar[0]) > 1e-8], 2 * 0.7 ** 3)
        assert check_stationarity(model)[0]

    @pytest.mark.parametrize("kind", ["varma_411", "seasonal_var_411"])
    def test_shared_row_and_column_spaces(self, kind):
        spec = DgpSpec(kind, 7, 2, seed=2)
        model = make_dgp(spec)
        b = np.linalg.qr(np.random.default_rng(2).standard_normal((7, 7)))
        basis = (b[0] * np.sign(np.diag(b[1])))[:, :2]
        for aj in true_tensor(model, 12).slices():
            if np.linalg.norm(aj) == 0:
                continue
            u, sv, vt = np.linalg.svd(aj)
            assert np.sum(sv > 1e-9 * sv[0]) == 2
            assert principal_angle_gap(u[:, :2], basis) < 1e-8
            assert principal_angle_gap(vt[:2].T, basis) < 1e-8

    def test_bad_spec(self):
        with pytest.raises(ParameterError):
            DgpSpec("arima", 3, 1)
        with pytest.raises(ParameterError):
            DgpSpec("varma_411", 3, 4)


class TestDecomposition:
    def test_identity(self):
        rng = np.random.default_rng(0)
        truth = Tensor3(rng.standard_normal((3, 3, 5)))
        est = rng.standard_normal((3, 3, 5))
        est[:, :, [1, 3]] = 0
        dec = decompose_error(Tensor3(est), truth, 0.1)
        diff = est - truth.array
        assert dec.parameter == dec.estimation + dec.approximation
        assert dec.parameter == pytest.approx(np.sum(diff ** 2), rel=1e-13)
        assert dec.approximation == pytest.approx(np.sum(truth.array[:, :, [1, 3]] ** 2))
        assert dec.truncation == 0.1

    def test_full_support_has_no_approximation(self):
        rng = np.random.default_rng(1)
        truth = Tensor3(rng.standard_normal((2, 2, 4)))
        dec = decompose_error(Tensor3(rng.standard_normal((2, 2, 4))), truth)
        assert dec.approximation == 0.0


class TestRules:
    @pytest.mark.parametrize("rule,t_len,expect", [
        ("1/2", 1500, 58), ("1/2", 800, 42), ("1/4", 256, 12), ("1/3", 1000, 30), (7, 99, 7),
        ("15", 100, 15)])
    def test_t0(self, rule, t_len, expect):
        assert t0_from_rule(rule, t_len) == expect

    def test_bad_rule(self):
        with pytest.raises(ParameterError):
            t0_from_rule("2/3", 100)

    def test_error_rate(self):
        assert error_rate(5, 2, 10, 800, 30) == pytest.approx(5 * (20 + math.log(30)) / 770)


class TestTruncationScaling:
    def test_varma_ratio(self):
        model = make_dgp(DgpSpec("varma_411", 6, 2, seed=0))
        vals = [truncation_error(model, t0) for t0 in (20, 30, 40)]
        for lo, hi in zip(vals, vals[1:]):
            assert hi / lo == pytest.approx(0.49 ** 10, rel=0.05)

    def test_seasonal_zero(self):
        model = make_dgp(DgpSpec("seasonal_var_411", 6, 2, seed=0))
        assert truncation_error(model, 9) == 0.0


SMALL = FitConfig(t0=10, r1=2, r2=2, s=3, max_iter=400)


class TestExperiments:
    def test_error_vs_sparsity_small(self, tmp_path):
        spec = DgpSpec("seasonal_var_411", 5, 2, seed=3)
        res = run_error_vs_sparsity(spec, 300, 10, [2, 5, 10], 2, SMALL)
        assert [row["s"] for row in res.summary] == [2, 5, 10]
        for row in res.rows:
            if not row["diverged"]:
                assert row["parameter"] == row["estimation"] + row["approximation"]
        approx = [row["approximation"] for row in res.summary]
        assert approx[-1] == 0.0
        assert all(b <= a + 1e-12 for a, b in zip(approx, approx[1:]))
        paths = res.write(tmp_path)
        doc = json.loads(open(paths["summary"]).read())
        assert doc["experiment"] == "error_vs_sparsity"
        assert open(paths["replications"]).readline().startswith("rep,s,")

    def test_reproducible_and_thread_independent(self):
        spec = DgpSpec("varma_411", 4, 1, seed=9)
        a = run_error_vs_sparsity(spec, 200, 8, [1, 3], 3, SMALL.with_(t0=8, s=1))
        b = run_error_vs_sparsity(spec, 200, 8, [1, 3], 3, SMALL.with_(t0=8, s=1), threads=3)
        assert a.rows == b.rows and a.summary == b.summary

    def test_rate_scaling_single_setting(self):
        res = run_rate_scaling("varma_411", [(4, 1, 200)], "1/2", 2, SMALL.with_(s=2))
        assert len(res.summary) == 1
        row = res.summary[0]
        assert row["t0"] == 21
        assert row["beta"] == pytest.approx(error_rate(2, 1, 4, 200, 21))

    def test_rate_scaling_requires_s(self):
        with pytest.raises(ParameterError):
            run_rate_scaling("varma_411", [(4, 1, 200)], "1/2", 1,
                             FitConfig(t0=5, r1=1, r2=1, threshold="none"))

    def test_ht_vs_st_degenerate(self):
        spec = DgpSpec("seasonal_var_411", 4, 1, seed=1)
        res = run_ht_vs_st(spec, [3, 5], [0.01, 0.05], 1, SMALL.with_(r1=1, r2=1),
                           t_grid=[250], t0=10)
        assert len(res.summary) == 1
        row = res.summary[0]
        assert math.isnan(row["hard_sparsity_iqr"]) and math.isnan(row["soft_sparsity_iqr"])
        assert row["best_s"] in (3, 5) and row["best_lambda"] in (0.01, 0.05)

    def test_ht_vs_st_argument_checks(self):
        spec = DgpSpec("seasonal_var_411", 4, 1)
        with pytest.raises(ParameterError):
            run_ht_vs_st(spec, [3], [0.1], 1, t_grid=[100], t0_grid=[5])
        with pytest.raises(ParameterError):
            run_ht_vs_st(spec, [3], [0.1], 1, t_grid=[100])
