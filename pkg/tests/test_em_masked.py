"""EM on masked data and its initializer."""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats as sps

from conftest import intercept_params, random_params
from zapfdr.em import EMConfig, e_step_full, fit_full_em
from zapfdr.em_masked import (
    PROB_CEIL, PROB_FLOOR, _side_share, e_step_masked, fit_masked_em, initialize_masked,
    masked_loglik,
)
from zapfdr.masking import ThresholdFunctions, masked_view, reflect
from zapfdr.model import TestingInput, link_probabilities
from zapfdr.numeric import make_rng
from zapfdr.simulation import gen_example


def unmasked_state(data):
    th = ThresholdFunctions.constant(data.m, 0.2, 0.8)
    return masked_view(data, th, revealed=np.ones(data.m, dtype=bool))


def mixed_data(seed, m=500):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, 1))
    h = rng.random(m) < 0.3
    z = np.where(h, np.where(rng.random(m) < 0.5, 2.5, -2.5), 0.0) + rng.standard_normal(m)
    return TestingInput.from_z(z, x)


class TestEStep:
    def test_reduces_to_full(self, rng):
        d = mixed_data(0)
        st = unmasked_state(d)
        for _ in range(5):
            p = random_params(rng, dim=2)
            full = e_step_full(p, d)
            ms = e_step_masked(p, st, d)
            assert_allclose(ms.h_l, full.w_l, rtol=1e-12, atol=1e-300)
            assert_allclose(ms.h_r, full.w_r, rtol=1e-12, atol=1e-300)
            assert_allclose(ms.e_logu_l, full.w_l * np.log(d.u), rtol=1e-12, atol=1e-300)
            assert_allclose(ms.e_log1mu_r, full.w_r * np.log1p(-d.u), rtol=1e-12, atol=1e-300)

    def test_self_paired_point(self):
        # u = 0.25 is its own reflection, so both pair elements coincide
        u = np.full(10, 0.25)
        d = TestingInput(u, None)
        st = masked_view(d, ThresholdFunctions.constant(10, 0.25, 0.75))
        assert st.masked.all()
        ms = e_step_masked(intercept_params(-1.0, -1.0), st, d)
        assert_allclose(ms.y_l_a, np.log(0.25), rtol=1e-14)

    def test_two_point_enumeration(self):
        th = np.log(0.25 / 0.5)
        p = intercept_params(th, th)
        u = np.array([0.1] + [0.23] * 9)
        d = TestingInput(u, None)
        st = masked_view(d, ThresholdFunctions.constant(10, 0.2, 0.8))
        assert st.masked[0] and not st.masked[1:].any()
        ms = e_step_masked(p, st, d)

        # direct enumeration over the two candidate values of U_0
        pts = np.array([0.1, 0.4])
        hl = sps.beta.pdf(pts, 0.5, 4.0)
        hr = sps.beta.pdf(pts, 4.0, 0.5)
        h = 0.5 + 0.25 * hl + 0.25 * hr
        post = h / h.sum()                     # P(U_0 = pt | pair)
        w_l = 0.25 * hl / h                    # P(H_l | U_0 = pt)
        w_r = 0.25 * hr / h
        H_l, H_r = np.sum(post * w_l), np.sum(post * w_r)
        assert_allclose(ms.h_l[0], H_l, rtol=1e-12)
        assert_allclose(ms.h_r[0], H_r, rtol=1e-12)
        assert_allclose(ms.y_l_a[0], np.sum(post * w_l * np.log(pts)) / H_l, rtol=1e-12)
        assert_allclose(ms.y_r_a[0], np.sum(post * w_r * np.log(pts)) / H_r, rtol=1e-12)
        assert_allclose(ms.y_l_b[0], np.sum(post * w_l * np.log1p(-pts)) / H_l, rtol=1e-12)
        assert_allclose(ms.y_r_b[0], np.sum(post * w_r * np.log1p(-pts)) / H_r, rtol=1e-12)
        assert_allclose(masked_loglik(p, st, d),
                        np.log(h.sum()) + 9 * np.log(0.5 + 0.25 * (sps.beta.pdf(0.23, 0.5, 4)
                                                                    + sps.beta.pdf(0.23, 4, 0.5))),
                        rtol=1e-12)

    def test_posteriors_valid(self, rng):
        d = mixed_data(1)
        st = masked_view(d, ThresholdFunctions.constant(d.m))
        ms = e_step_masked(random_params(rng, dim=2), st, d)
        assert np.all(ms.h_l >= 0) and np.all(ms.h_r >= 0)
        assert np.all(ms.h_l + ms.h_r <= 1 + 1e-12)
        assert np.all(np.isfinite(ms.e_logu_l)) and np.all(np.isfinite(ms.e_log1mu_r))


class TestFit:
    def test_unmasked_equals_full(self):
        d = mixed_data(2)
        init = intercept_params(-2.0, -2.0)
        init = type(init)(np.array([-2.0, 0.0]), np.array([-2.0, 0.0]), np.zeros(2), np.zeros(2))
        a = fit_full_em(d, init=init).params
        b = fit_masked_em(unmasked_state(d), d, init=init).params
        for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
            assert_allclose(getattr(a, f), getattr(b, f), atol=1e-6, rtol=0)

    def test_monotone_masked_likelihood(self):
        for seed in range(50):
            d = mixed_data(300 + seed, m=300)
            st = masked_view(d, ThresholdFunctions.constant(d.m, 0.15, 0.85))
            rep = fit_masked_em(st, d)
            tr = np.asarray(rep.loglik_trace)
            assert np.all(tr[1:] >= tr[:-1] - 1e-8 * (1 + np.abs(tr[:-1])))
            assert not rep.extra["decreased"]

    @pytest.mark.xfail(strict=True, reason="the masked null likelihood is nearly flat in pi; "
                                           "this draw's fit lands at 0.088")
    def test_global_null(self):
        d = TestingInput(make_rng(5).random(2000), None)
        st = masked_view(d, ThresholdFunctions.constant(d.m))
        pl, pr = link_probabilities(fit_masked_em(st, d).params, [])
        assert pl + pr <= 0.08

    def test_global_null_typical(self):
        totals = []
        for seed in range(12):
            d = TestingInput(make_rng(seed).random(2000), None)
            st = masked_view(d, ThresholdFunctions.constant(d.m))
            totals.append(sum(link_probabilities(fit_masked_em(st, d).params, [])))
        assert np.median(totals) <= 0.08

    def test_stored_order_flip_is_bit_identical(self):
        d = mixed_data(3)
        st = masked_view(d, ThresholdFunctions.constant(d.m))
        swapped = replace(st, lo=np.where(st.masked, st.hi, st.lo),
                          hi=np.where(st.masked, st.lo, st.hi))
        a = fit_masked_em(st, d)
        b = fit_masked_em(swapped, d)
        for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
            assert np.array_equal(getattr(a.params, f), getattr(b.params, f))
        assert a.loglik_trace == b.loglik_trace

    def test_true_value_never_read(self):
        # swap each masked u for its reflection in the data handed to the fit
        d = mixed_data(3)
        st = masked_view(d, ThresholdFunctions.constant(d.m))
        d2 = TestingInput(np.where(st.masked, reflect(d.u), d.u), d.covariates)
        a = fit_masked_em(st, d)
        b = fit_masked_em(st, d2)
        for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
            assert np.array_equal(getattr(a.params, f), getattr(b.params, f))

    @pytest.mark.slow
    def test_example22_right_slope_positive(self):
        positive = 0
        for seed in range(100):
            d, _, _ = gen_example("2.2", 2000, seed=seed)
            st = masked_view(d, ThresholdFunctions.constant(d.m, 0.2, 0.8))
            positive += fit_masked_em(st, d).params.theta_r[1] > 0
        assert positive >= 90


class TestInitialization:
    def test_sliver_arithmetic(self):
        # s_r = 0.8 leaves an unmasked sliver of width 0.1 on the right
        raw = _side_share(np.array([0.2]), np.array(0.5 - 2 * (1 - 0.8)))
        assert_allclose(raw, 0.0, atol=1e-15)
        assert np.clip(raw, PROB_FLOOR, PROB_CEIL)[0] == PROB_FLOOR

    def test_all_masked(self):
        assert _side_share(np.array([0.0]), np.array(0.1))[0] == 1.0
        u = np.random.default_rng(0).random(100)
        d = TestingInput(u, None)
        st = masked_view(d, ThresholdFunctions.constant(100, 0.25, 0.75))
        diag = initialize_masked(st, d).diagnostics
        assert_allclose(diag["pi_r_plus_raw"], 1.0)
        assert_allclose(diag["pi_l_minus_raw"], 1.0)

    def test_sliver_guard(self):
        assert_allclose(_side_share(np.array([0.3]), np.array(0.01)), 0.7)

    def test_balanced_share(self):
        d = TestingInput(make_rng(8).random(2000), None)
        st = masked_view(d, ThresholdFunctions.constant(d.m))
        diag = initialize_masked(st, d).diagnostics
        assert abs(diag["pi_plus"][0] - 0.5) <= 0.03
        assert_allclose(diag["pi_plus"], np.mean(d.u > 0.5))

    def test_sanity_bounds(self):
        for seed in range(10):
            d, _, _ = gen_example("2.2", 1000, seed=seed)
            st = masked_view(d, ThresholdFunctions.constant(d.m))
            init = initialize_masked(st, d)
            diag = init.diagnostics
            for key in ("pi_l0", "pi_r0"):
                assert np.all(diag[key] >= PROB_FLOOR ** 2) and np.all(diag[key] <= PROB_CEIL)
            for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
                assert np.all(np.abs(getattr(init.params0, f)) <= 20.0)
