"""Simulation harness: generators, truth, baselines, metrics, replications."""

import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy.stats import t as student_t

from bsqr.experiments import (
    Scenario,
    design_cov,
    evaluate_metrics,
    gen_design,
    gen_errors,
    make_datasets,
    run_replications,
    std_qr_fit,
    true_beta_at_tau,
    write_manifest,
    write_metrics_csv,
)
from bsqr.kernels import check_loss
from bsqr.model import Dataset
from bsqr.optimize import ConvergenceError, minimize_bb
from bsqr.utils import chain_rng


class TestMinimizeBb:
    def test_quadratic_exact(self):
        A = np.array([[3.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -2.0])

        def vg(x):
            return 0.5 * x @ A @ x - b @ x, A @ x - b

        x, info = minimize_bb(vg, np.zeros(2), grad_tol=1e-10)
        np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)
        assert info["converged"]

    def test_failure_carries_last_iterate(self):
        def vg(x):
            return float(np.sum(np.abs(x))), np.sign(x)  # kink: cannot hit 1e-14

        with pytest.raises(ConvergenceError) as err:
            minimize_bb(vg, np.array([5.0]), grad_tol=1e-14, max_iter=10)
        assert err.value.last_x.shape == (1,)


class TestGenDesign:
    def test_independent_when_rho_zero(self):
        x = gen_design(5000, 4, 0.0, chain_rng(1, 0))
        corr = np.corrcoef(x.T)
        off = corr[~np.eye(4, dtype=bool)]
        assert np.max(np.abs(off)) < 0.1

    def test_ar_correlation_structure(self):
        x = gen_design(10_000, 3, 0.5, chain_rng(2, 0))
        corr = np.corrcoef(x.T)
        assert corr[0, 1] == pytest.approx(0.5, abs=0.05)
        assert corr[0, 2] == pytest.approx(0.25, abs=0.05)

    def test_reproducible(self):
        a = gen_design(50, 3, 0.5, chain_rng(3, 0))
        b = gen_design(50, 3, 0.5, chain_rng(3, 0))
        np.testing.assert_array_equal(a, b)

    def test_rho_bound(self):
        with pytest.raises(ValueError):
            gen_design(10, 2, 1.0, chain_rng(4, 0))


class TestGenErrors:
    def test_normal_unit_sd(self):
        u = gen_errors("normal", 10_000, rng=chain_rng(5, 0))
        assert np.std(u) == pytest.approx(1.0, abs=0.05)

    def test_t3_heavy_tails(self):
        u = gen_errors("student_t3", 20_000, rng=chain_rng(6, 0))
        z = (u - u.mean()) / u.std()
        assert np.mean(z**4) > 4.0

    def test_mixture_variance(self):
        # variance reading: 0.2 * 3 + 0.8 * 4 = 3.8
        u = gen_errors("normal_mixture", 200_000, rng=chain_rng(7, 0))
        assert np.var(u) == pytest.approx(3.8, rel=0.03)

    def test_heteroscedastic_conditional_sd(self):
        x1 = np.full(50_000, 0.5)
        u = gen_errors("heteroscedastic", x1.size, x1, chain_rng(8, 0))
        assert np.std(u) == pytest.approx(1.0, abs=0.02)

    def test_heteroscedastic_needs_covariate(self):
        with pytest.raises(ValueError):
            gen_errors("heteroscedastic", 10, rng=chain_rng(9, 0))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gen_errors("cauchy", 10, rng=chain_rng(10, 0))


class TestTrueBeta:
    def test_symmetric_median_unchanged(self):
        scenario = Scenario.dense(0.5, "normal")
        truth = true_beta_at_tau(scenario)
        np.testing.assert_allclose(truth, [0.0] + [0.85] * 8)

    def test_normal_upper_quartile_shift(self):
        scenario = Scenario.dense(0.75, "normal")
        assert true_beta_at_tau(scenario)[0] == pytest.approx(0.6745, abs=1e-4)

    def test_t3_shift(self):
        scenario = Scenario.sparse(0.25, "student_t3", d=8)
        assert true_beta_at_tau(scenario)[0] == pytest.approx(student_t.ppf(0.25, 3), rel=1e-9)

    def test_mixture_shift_matches_bisection_oracle(self):
        scenario = Scenario.dense(0.25, "normal_mixture")
        shift = true_beta_at_tau(scenario)[0]

        def cdf(x):
            return 0.2 * ndtr(x / np.sqrt(3.0)) + 0.8 * ndtr(x / 2.0)

        lo, hi = -20.0, 20.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if cdf(mid) < 0.25:
                lo = mid
            else:
                hi = mid
        assert shift == pytest.approx(0.5 * (lo + hi), abs=1e-9)
        assert cdf(shift) == pytest.approx(0.25, abs=1e-9)

    def test_heteroscedastic_best_linear_oracle(self):
        scenario = Scenario(n_train=100, n_test=100, d=2, rho=0.0,
                            beta0=(1.0, 0.5), error_kind="heteroscedastic", tau=0.75)
        truth = true_beta_at_tau(scenario)
        # sigma(x1) = exp(-0.25 + 0.5 x1) loads the tau-quantile shift onto x1;
        # a first-order expansion gives slope ~ 0.5 * sigma(0) * z_tau on top
        # of the structural coefficient
        z = ndtri(0.75)
        approx_x1 = 1.0 + 0.5 * np.exp(-0.25) * z
        assert truth[1] == pytest.approx(approx_x1, abs=0.15)
        assert truth[2] == pytest.approx(0.5, abs=0.05)
        # memoized second call is instant and identical
        np.testing.assert_array_equal(truth, true_beta_at_tau(scenario))


class TestStdQrFit:
    def test_recovers_exact_line(self):
        x = np.array([0.0, 1.0, 2.0])
        data = Dataset.with_intercept(1.0 + 2.0 * x, x)
        for tau in (0.2, 0.5, 0.8):
            np.testing.assert_allclose(std_qr_fit(data, tau), [1.0, 2.0], atol=1e-4)

    def test_median_matches_grid_oracle(self):
        rng = chain_rng(11, 0)
        y = rng.standard_t(3, size=60)
        data = Dataset.with_intercept(y, None)
        fitted = std_qr_fit(data, 0.5)[0]
        grid = np.linspace(np.min(y), np.max(y), 200_001)
        losses = np.abs(y[:, None] - grid[None, :]).sum(axis=0)
        oracle = grid[np.argmin(losses)]
        assert fitted == pytest.approx(oracle, abs=1e-3)

    def test_estimating_equation_slack(self):
        scenario = Scenario.dense(0.25, "student_t3", n_train=200, d=4)
        data, _ = make_datasets(scenario, chain_rng(12, 0))
        tau = 0.25
        beta = std_qr_fit(data, tau)
        e = data.y - data.X @ beta
        inside = np.sum(np.abs(e) <= 1e-4 * np.std(data.y) + 1e-12)
        subgrad = data.X.T @ (tau - (e < 0))
        assert np.max(np.abs(subgrad)) <= data.d * max(inside, 1)


class TestEvaluateMetrics:
    def test_truth_scores_zero(self):
        scenario = Scenario.dense(0.5, "normal", n_test=500)
        _, test = make_datasets(scenario, chain_rng(13, 0))
        row = evaluate_metrics(true_beta_at_tau(scenario), scenario, test)
        assert row.mse == 0.0 and row.mae == 0.0 and row.wmse == 0.0
        assert row.test_check_loss > 0

    def test_hand_arithmetic(self):
        scenario = Scenario(n_train=10, n_test=50, d=1, rho=0.0, beta0=(1.0,),
                            error_kind="normal", tau=0.5)
        _, test = make_datasets(scenario, chain_rng(14, 0))
        truth = true_beta_at_tau(scenario)
        row = evaluate_metrics(truth + np.array([1.0, -1.0]), scenario, test)
        assert row.mse == pytest.approx(2.0)
        assert row.mae == pytest.approx(1.0)
        assert row.wmse == pytest.approx(2.0)

    def test_coverage_from_draws(self):
        scenario = Scenario.dense(0.5, "normal", n_test=100)
        _, test = make_datasets(scenario, chain_rng(15, 0))
        truth = true_beta_at_tau(scenario)
        rng = chain_rng(16, 0)
        draws = truth[None, :] + 0.1 * rng.standard_normal((4000, truth.size))
        row = evaluate_metrics(truth, scenario, test, draws=draws)
        assert row.coverage == 1.0
        assert row.width == pytest.approx(0.4, rel=0.05)

    def test_true_quantile_beats_perturbations(self):
        scenario = Scenario.dense(0.25, "normal", n_test=5000)
        _, test = make_datasets(scenario, chain_rng(17, 0))
        truth = true_beta_at_tau(scenario)
        base = evaluate_metrics(truth, scenario, test).test_check_loss
        rng = chain_rng(18, 0)
        gaps = []
        for _ in range(50):
            perturbed = truth + 0.3 * rng.standard_normal(truth.size)
            gaps.append(evaluate_metrics(perturbed, scenario, test).test_check_loss - base)
        assert np.mean(gaps) > 0


class TestRunReplications:
    def test_single_rep_equals_direct_call(self):
        scenario = Scenario.dense(0.5, "normal", n_train=120, n_test=200, d=3)
        summary = run_replications(scenario, ["stdqr"], M=1, seed=42)
        row = summary.rows["stdqr"][0]

        train, test = make_datasets(scenario, chain_rng(42, 1_000_000))
        direct = evaluate_metrics(std_qr_fit(train, 0.5), scenario, test)
        assert row.mse == pytest.approx(direct.mse, rel=1e-12)
        assert row.test_check_loss == pytest.approx(direct.test_check_loss, rel=1e-12)

    def test_deterministic(self):
        scenario = Scenario.dense(0.5, "normal", n_train=80, n_test=100, d=2)
        a = run_replications(scenario, ["stdqr"], M=3, seed=7)
        b = run_replications(scenario, ["stdqr"], M=3, seed=7)
        assert [r.mse for r in a.rows["stdqr"]] == [r.mse for r in b.rows["stdqr"]]

    def test_monte_carlo_error_scaling(self):
        # doubling M twice should roughly halve the standard error of the mean
        scenario = Scenario.dense(0.5, "normal", n_train=100, n_test=150, d=3)
        small = run_replications(scenario, ["stdqr"], M=40, seed=3)
        large = run_replications(scenario, ["stdqr"], M=160, seed=3)
        se = lambda rows: np.std([r.mse for r in rows], ddof=1) / np.sqrt(len(rows))
        ratio = se(small.rows["stdqr"]) / se(large.rows["stdqr"])
        assert 1.6 <= ratio <= 2.6

    def test_csv_and_manifest_emission(self, tmp_path):
        scenario = Scenario.dense(0.5, "normal", n_train=60, n_test=80, d=2)
        summary = run_replications(scenario, ["stdqr"], M=2, seed=1)
        csv_path = tmp_path / "metrics.csv"
        json_path = tmp_path / "manifest.json"
        write_metrics_csv(summary, csv_path)
        write_manifest(summary, json_path)

        import csv as csv_mod
        import json

        with open(csv_path) as fh:
            rows = list(csv_mod.DictReader(fh))
        assert len(rows) == 1 and rows[0]["method"] == "stdqr"
        assert float(rows[0]["mse"]) == pytest.approx(summary.mean_metric("stdqr", "mse"))
        manifest = json.loads(json_path.read_text())
        assert manifest["seed"] == 1
        assert manifest["scenario"]["error_kind"] == "normal"
        assert "numpy" in manifest["versions"]

    def test_bayesian_method_smoke(self):
        scenario = Scenario.dense(0.5, "normal", n_train=80, n_test=100, d=2)
        summary = run_replications(scenario, ["bsqr-uniform", "ald"], M=1, seed=5,
                                   chains=2, iters=400, warmup=200)
        for method in ("bsqr-uniform", "ald"):
            row = summary.rows[method][0]
            assert np.isfinite(row.mse) and np.isfinite(row.coverage)
            assert row.ess_min > 0
        assert np.isfinite(summary.rows["bsqr-uniform"][0].selected_h)


class TestScenarioValidation:
    def test_factories(self):
        dense = Scenario.dense(0.25)
        assert dense.d == 8 and dense.beta0 == (0.85,) * 8
        sparse = Scenario.sparse(0.25, d=8)
        assert sparse.beta0 == (3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0)
        sparse20 = Scenario.sparse(0.25)
        assert sparse20.d == 20 and len(sparse20.beta0) == 20

    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            Scenario(0, 10, 2, 0.5, (1.0, 1.0), "normal", 0.5)
        with pytest.raises(ValueError):
            Scenario(10, 10, 2, 1.5, (1.0, 1.0), "normal", 0.5)
        with pytest.raises(ValueError):
            Scenario(10, 10, 2, 0.5, (1.0,), "normal", 0.5)
        with pytest.raises(ValueError):
            Scenario(10, 10, 2, 0.5, (1.0, 1.0), "weird", 0.5)

    def test_design_cov(self):
        cov = design_cov(3, 0.5)
        np.testing.assert_allclose(cov, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
