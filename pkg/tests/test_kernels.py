"""Closed-form checks for the smoothed check loss and its derivatives."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr, ndtri

from bsqr.kernels import (
    Kernel,
    QuantileSpec,
    check_loss,
    kernel_cdf,
    kernel_pdf,
    loss_curvature,
    loss_minimum,
    smoothed_loss,
    smoothed_score,
)

ALL_KERNELS = list(Kernel)
COMPACT = [k for k in Kernel if k.compact]
TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)
HS = (0.1, 1.0, 5.0)

PHI0 = 1.0 / np.sqrt(2.0 * np.pi)


class TestCheckLoss:
    def test_values(self):
        assert check_loss(0.5, 2.0) == pytest.approx(1.0)
        assert check_loss(0.25, -2.0) == pytest.approx(1.5)
        assert check_loss(0.9, 0.0) == 0.0

    def test_vectorized(self):
        u = np.array([-1.0, 0.0, 3.0])
        np.testing.assert_allclose(check_loss(0.25, u), [0.75, 0.0, 0.75])

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, 1.7])
    def test_domain_error(self, tau):
        with pytest.raises(ValueError):
            check_loss(tau, 1.0)

    def test_non_negative(self):
        u = np.linspace(-10, 10, 401)
        for tau in TAUS:
            assert np.all(np.asarray(check_loss(tau, u)) >= 0)


class TestKernelPdf:
    def test_values(self):
        assert kernel_pdf(Kernel.GAUSSIAN, 0.0) == pytest.approx(0.3989423, abs=1e-7)
        assert kernel_pdf(Kernel.UNIFORM, 0.5) == 0.5
        assert kernel_pdf(Kernel.EPANECHNIKOV, 0.0) == 0.75
        assert kernel_pdf(Kernel.TRIANGULAR, 2.0) == 0.0

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_integrates_to_one(self, kernel):
        lo, hi = (-1, 1) if kernel.compact else (-np.inf, np.inf)
        total, _ = quad(lambda v: kernel_pdf(kernel, v), lo, hi)
        assert total == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_symmetric_nonnegative(self, kernel):
        v = np.linspace(-3, 3, 601)
        pdf = np.asarray(kernel_pdf(kernel, v))
        np.testing.assert_allclose(pdf, pdf[::-1], atol=1e-15)
        assert np.all(pdf >= 0)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_first_abs_moment(self, kernel):
        lo, hi = (-1, 1) if kernel.compact else (-np.inf, np.inf)
        moment, _ = quad(lambda v: abs(v) * kernel_pdf(kernel, v), lo, hi)
        assert kernel.abs_moment == pytest.approx(moment, abs=1e-10)


class TestKernelCdf:
    def test_values(self):
        assert kernel_cdf(Kernel.UNIFORM, 0.0) == 0.5
        assert kernel_cdf(Kernel.TRIANGULAR, -0.5) == pytest.approx(0.125)
        assert kernel_cdf(Kernel.EPANECHNIKOV, 1.0) == 1.0

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_monotone_with_limits(self, kernel):
        u = np.linspace(-6, 6, 1201)
        cdf = np.asarray(kernel_cdf(kernel, u))
        assert np.all(np.diff(cdf) >= -1e-15)
        assert cdf[0] == pytest.approx(0.0, abs=1e-9)
        assert cdf[-1] == pytest.approx(1.0, abs=1e-9)
        if kernel.compact:
            assert kernel_cdf(kernel, -1.0) == 0.0
            assert kernel_cdf(kernel, 1.0) == 1.0

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_matches_integrated_pdf(self, kernel):
        lo = -1.0 if kernel.compact else -10.0
        for u in (-0.9, -0.3, 0.2, 0.8):
            total, _ = quad(lambda v: kernel_pdf(kernel, v), lo, u)
            assert kernel_cdf(kernel, u) == pytest.approx(total, abs=1e-10)


class TestSmoothedScore:
    def test_values(self):
        for kernel in ALL_KERNELS:
            spec = QuantileSpec(0.5, 1.0, kernel)
            assert smoothed_score(spec, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert smoothed_score(QuantileSpec(0.25, 1.0, Kernel.UNIFORM), 2.0) == pytest.approx(0.25)
        assert smoothed_score(QuantileSpec(0.9, 2.0, Kernel.GAUSSIAN), 0.0) == pytest.approx(0.4)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    @pytest.mark.parametrize("tau", TAUS)
    def test_bounds_and_monotone(self, kernel, tau):
        spec = QuantileSpec(tau, 1.3, kernel)
        e = np.linspace(-8, 8, 801)
        score = np.asarray(smoothed_score(spec, e))
        assert np.all(score >= -(1 - tau) - 1e-12)
        assert np.all(score <= tau + 1e-12)
        assert np.all(np.diff(score) >= -1e-14)
        if kernel.compact:
            assert smoothed_score(spec, 2.0 * spec.h) == pytest.approx(tau, abs=1e-15)
            assert smoothed_score(spec, -2.0 * spec.h) == pytest.approx(-(1 - tau), abs=1e-15)


class TestSmoothedLoss:
    @pytest.mark.parametrize("h", HS)
    def test_value_at_zero(self, h):
        for kernel, expected in [
            (Kernel.UNIFORM, h / 4.0),
            (Kernel.EPANECHNIKOV, 3.0 * h / 16.0),
            (Kernel.TRIANGULAR, h / 6.0),
            (Kernel.GAUSSIAN, h * PHI0),
        ]:
            for tau in TAUS:
                assert smoothed_loss(QuantileSpec(tau, h, kernel), 0.0) == pytest.approx(
                    expected, rel=1e-14
                )

    def test_tail_branch_value(self):
        spec = QuantileSpec(0.3, 0.5, Kernel.UNIFORM)
        assert smoothed_loss(spec, 10.0) == pytest.approx(3.0)

    @pytest.mark.parametrize("kernel", COMPACT)
    @pytest.mark.parametrize("tau", TAUS)
    @pytest.mark.parametrize("h", HS)
    def test_tail_equality(self, kernel, tau, h):
        spec = QuantileSpec(tau, h, kernel)
        e = np.concatenate([np.linspace(-30 * h, -h, 57), np.linspace(h, 30 * h, 57)])
        np.testing.assert_allclose(
            np.asarray(smoothed_loss(spec, e)), np.asarray(check_loss(tau, e)),
            atol=1e-12, rtol=0,
        )

    @pytest.mark.parametrize("kernel", COMPACT)
    def test_branch_boundaries_agree(self, kernel):
        # central and tail expressions coincide at e = +-h, so the closed
        # boundary assignment is unobservable
        for tau in TAUS:
            for h in HS:
                spec = QuantileSpec(tau, h, kernel)
                for e in (-h, h):
                    inner = smoothed_loss(spec, e * (1 - 1e-12))
                    outer = float(np.asarray(check_loss(tau, e)))
                    assert smoothed_loss(spec, e) == pytest.approx(outer, rel=1e-12)
                    assert inner == pytest.approx(outer, rel=1e-9)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    @pytest.mark.parametrize("tau", TAUS)
    @pytest.mark.parametrize("h", HS)
    def test_derivative_matches_score(self, kernel, tau, h):
        spec = QuantileSpec(tau, h, kernel)
        e = np.linspace(-3 * h, 3 * h, 301)
        step = 1e-6 * h
        fd = (np.asarray(smoothed_loss(spec, e + step))
              - np.asarray(smoothed_loss(spec, e - step))) / (2 * step)
        score = np.asarray(smoothed_score(spec, e))
        scale = np.maximum(1.0, np.abs(score))
        assert np.max(np.abs(fd - score) / scale) < 1e-6

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    def test_second_derivative_matches_curvature(self, kernel):
        tau, h = 0.25, 1.0
        spec = QuantileSpec(tau, h, kernel)
        # stay away from the support edges where curvature jumps
        e = np.linspace(-0.9 * h, 0.9 * h, 181)
        step = 1e-5
        fd = (np.asarray(smoothed_score(spec, e + step))
              - np.asarray(smoothed_score(spec, e - step))) / (2 * step)
        np.testing.assert_allclose(fd, np.asarray(loss_curvature(spec, e)), atol=1e-5)

    def test_gaussian_small_h_gap(self):
        for h in HS:
            for tau in TAUS:
                spec = QuantileSpec(tau, h, Kernel.GAUSSIAN)
                e = np.linspace(-12 * h, 12 * h, 4001)
                gap = np.asarray(smoothed_loss(spec, e)) - np.asarray(check_loss(tau, e))
                assert np.max(np.abs(gap)) <= 0.4 * h
                assert smoothed_loss(spec, 0.0) - check_loss(tau, 0.0) == pytest.approx(h * PHI0)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    @pytest.mark.parametrize("tau", TAUS)
    def test_convexity(self, kernel, tau):
        spec = QuantileSpec(tau, 0.7, kernel)
        e = np.linspace(-5, 5, 2001)
        second = np.diff(np.asarray(smoothed_loss(spec, e)), 2)
        assert np.min(second) >= -1e-10

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    @pytest.mark.parametrize("tau", TAUS)
    @pytest.mark.parametrize("h", HS)
    def test_linear_growth_lower_bound(self, kernel, tau, h):
        spec = QuantileSpec(tau, h, kernel)
        c_tau = min(tau, 1 - tau)
        e = np.linspace(-60 * h, 60 * h, 2001)
        bound = c_tau * (np.abs(e) - h * kernel.abs_moment)
        assert np.all(np.asarray(smoothed_loss(spec, e)) >= bound - 1e-12)

    def test_non_negative_everywhere(self):
        for kernel in ALL_KERNELS:
            spec = QuantileSpec(0.1, 2.0, kernel)
            e = np.linspace(-40, 40, 5001)
            assert np.min(np.asarray(smoothed_loss(spec, e))) >= 0.0


class TestLossCurvature:
    def test_values(self):
        assert loss_curvature(QuantileSpec(0.5, 2.0, Kernel.UNIFORM), 0.0) == 0.25
        assert loss_curvature(QuantileSpec(0.5, 1.0, Kernel.GAUSSIAN), 0.0) == pytest.approx(
            0.3989423, abs=1e-7
        )
        assert loss_curvature(QuantileSpec(0.5, 1.0, Kernel.TRIANGULAR), 5.0) == 0.0


def _grid_argmin(spec, step_frac=1e-4):
    # compact kernels minimize inside [-h, h]; the Gaussian minimizer can sit
    # outside that band at extreme quantile levels
    half = spec.h if spec.kernel.compact else 4.0 * spec.h
    e = np.arange(-half, half + step_frac * spec.h, step_frac * spec.h)
    vals = np.asarray(smoothed_loss(spec, e))
    i = int(np.argmin(vals))
    return float(e[i]), float(vals[i])


class TestLossMinimum:
    @pytest.mark.parametrize("tau", TAUS)
    @pytest.mark.parametrize("h", HS)
    def test_uniform_closed_form(self, tau, h):
        spec = QuantileSpec(tau, h, Kernel.UNIFORM)
        u_min, l_min = loss_minimum(spec)
        assert u_min == pytest.approx(h * (1 - 2 * tau), rel=1e-12)
        assert l_min == pytest.approx(h * tau * (1 - tau), rel=1e-12)
        g_u, g_l = _grid_argmin(spec)
        assert abs(g_u - u_min) <= 2e-4 * h
        assert l_min <= g_l + 1e-15

    def test_uniform_median_case(self):
        for h in HS:
            u_min, l_min = loss_minimum(QuantileSpec(0.5, h, Kernel.UNIFORM))
            assert u_min == 0.0
            assert l_min == pytest.approx(h / 4.0)

    @pytest.mark.parametrize("tau", TAUS)
    def test_gaussian_closed_form(self, tau):
        h = 2.0
        spec = QuantileSpec(tau, h, Kernel.GAUSSIAN)
        u_min, l_min = loss_minimum(spec)
        z = ndtri(1 - tau)
        assert u_min == pytest.approx(h * z, abs=1e-12)
        assert l_min == pytest.approx(h * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi), rel=1e-12)
        g_u, _ = _grid_argmin(spec)
        assert abs(g_u - u_min) <= 3e-4 * h

    @pytest.mark.parametrize("kernel", [Kernel.EPANECHNIKOV, Kernel.TRIANGULAR])
    @pytest.mark.parametrize("tau", TAUS)
    def test_bisected_root(self, kernel, tau):
        spec = QuantileSpec(tau, 1.5, kernel)
        u_min, l_min = loss_minimum(spec)
        assert abs(smoothed_score(spec, u_min)) < 1e-10
        g_u, g_l = _grid_argmin(spec)
        assert abs(g_u - u_min) <= 2e-4 * spec.h
        assert l_min <= g_l + 1e-12


class TestSpecValidation:
    def test_tau_range(self):
        with pytest.raises(ValueError):
            QuantileSpec(0.0, 1.0, Kernel.UNIFORM)
        with pytest.raises(ValueError):
            QuantileSpec(1.0, 1.0, Kernel.UNIFORM)

    def test_h_positive(self):
        with pytest.raises(ValueError):
            QuantileSpec(0.5, 0.0, Kernel.UNIFORM)
        with pytest.raises(ValueError):
            QuantileSpec(0.5, -1.0, Kernel.UNIFORM)

    def test_kernel_parse(self):
        assert Kernel.parse("Uniform") is Kernel.UNIFORM
        assert Kernel.parse(" gaussian ") is Kernel.GAUSSIAN
        with pytest.raises(ValueError):
            Kernel.parse("box")
