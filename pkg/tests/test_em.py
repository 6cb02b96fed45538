"""Full-data EM for the working model."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special

from conftest import intercept_params, random_params
from zapfdr.em import (
    EMConfig, EMError, PosteriorWeights, e_step_full, fit_full_em, full_loglik, m_step_full,
    q_gradient, q_objective, weights_to_stats,
)
from zapfdr.model import BetaMixtureParams, TestingInput, link_probabilities
from zapfdr.oracle import OracleModel
from zapfdr.simulation import _draw, gen_appG
from zapfdr.numeric import make_rng


def mixed_data(seed, m=600, p=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, p))
    h = rng.random(m) < 0.25 + 0.1 * np.tanh(x[:, 0])
    mu = np.where(rng.random(m) < 0.6, 2.5, -2.0)
    z = np.where(h, mu, 0.0) + rng.standard_normal(m)
    return TestingInput.from_z(z, x)


class TestEStep:
    def test_null_model(self):
        d = TestingInput(np.array([0.1, 0.5, 0.9]), None)
        w = e_step_full(intercept_params(-50.0, -50.0), d)
        # predictors clip at -35, so "zero" is exp(-35)-small
        assert np.all(w.w_l < 1e-14) and np.all(w.w_r < 1e-14)

    def test_single_point(self):
        th = np.log(0.25 / 0.5)
        d = TestingInput(np.array([0.5]), None)
        w = e_step_full(intercept_params(th, th), d)
        # 0.25 * 0.19335 / 0.596675, evaluated with mpmath
        assert_allclose(w.w_l, 0.0810112665160489779, rtol=1e-12)
        assert_allclose(w.w_r, 0.0810112665160489779, rtol=1e-12)

    def test_left_dominates_near_zero(self):
        d = TestingInput(np.array([1e-12]), None)
        w = e_step_full(intercept_params(-1.0, -1.0), d)
        assert w.w_l[0] > 0.999 and w.w_r[0] < 1e-6

    def test_weights_valid(self, rng):
        d = mixed_data(0)
        w = e_step_full(random_params(rng, dim=2), d)
        assert np.all(w.w_l >= 0) and np.all(w.w_r >= 0)
        assert np.all(w.w_l + w.w_r <= 1 + 1e-12)


class TestMStep:
    def test_increases_q(self, rng):
        d = mixed_data(1)
        xt = d.design()
        for _ in range(10):
            p = random_params(rng, dim=2)
            w = e_step_full(p, d)
            stats = weights_to_stats(w, d)
            warm = random_params(rng, dim=2)
            warm = BetaMixtureParams(warm.theta_l, warm.theta_r, warm.beta_l, warm.beta_r,
                                     p.gamma_l, p.gamma_r)
            new, _ = m_step_full(w, d, (p.gamma_l, p.gamma_r), warm)
            assert q_objective(new, stats, xt) >= q_objective(warm, stats, xt) - 1e-10

    def test_zero_weights(self):
        d = TestingInput(np.linspace(0.01, 0.99, 50), None)
        w = PosteriorWeights(np.zeros(50), np.zeros(50))
        warm = BetaMixtureParams.initial(1)
        new, _ = m_step_full(w, d, (4.0, 4.0), warm)
        assert new.theta_l[0] < -10 and new.theta_r[0] < -10
        assert_allclose(new.beta_l, warm.beta_l)
        assert_allclose(new.beta_r, warm.beta_r)

    def test_shape_matches_grid_mle(self):
        rng = np.random.default_rng(4)
        u = np.clip(rng.beta(0.3, 4.0, 400), 1e-15, 1 - 1e-15)
        d = TestingInput(u, None)
        w = PosteriorWeights(np.ones(u.size), np.zeros(u.size))
        new, _ = m_step_full(w, d, (4.0, 4.0), BetaMixtureParams.initial(1),
                             EMConfig(newton_iter=200))
        k = np.linspace(0.01, 0.99, 98_001)
        sl = np.log(u).sum()
        ll = (k - 1) * sl - u.size * special.betaln(k, 4.0)
        k_hat = k[np.argmax(ll)]
        assert abs(new.beta_l[0] - special.logit(k_hat)) <= 1e-3

    def test_symmetric_data(self):
        u = np.linspace(0.001, 0.499, 200)
        u = np.concatenate([u, 1 - u])
        d = TestingInput(u, None)
        w = e_step_full(intercept_params(-2.0, -2.0), d)
        w = PosteriorWeights(0.5 * (w.w_l + w.w_r[::-1]), 0.5 * (w.w_r + w.w_l[::-1]))
        new, _ = m_step_full(w, d, (4.0, 4.0), BetaMixtureParams.initial(1))
        pl, pr = link_probabilities(new, [])
        assert abs(pl - pr) <= 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        d = mixed_data(2, m=300, p=2)
        xt = d.design()
        for _ in range(20):
            p = random_params(rng, dim=3)
            stats = weights_to_stats(e_step_full(random_params(rng, dim=3), d), d)
            vec = np.concatenate([p.theta_l, p.theta_r, p.beta_l, p.beta_r])

            def f(v):
                q = BetaMixtureParams(v[0:3], v[3:6], v[6:9], v[9:12], p.gamma_l, p.gamma_r)
                return q_objective(q, stats, xt)

            g = q_gradient(p, stats, xt)
            fd = np.empty_like(vec)
            for i in range(vec.size):
                e = np.zeros_like(vec)
                e[i] = 1e-5
                fd[i] = (f(vec + e) - f(vec - e)) / 2e-5
            assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


class TestFit:
    def test_monotone_trace(self):
        for seed in range(50):
            d = mixed_data(100 + seed, m=300)
            rep = fit_full_em(d)
            tr = np.asarray(rep.loglik_trace)
            assert np.all(tr[1:] >= tr[:-1] - 1e-8 * (1 + np.abs(tr[:-1])))
            assert not rep.extra["decreased"]

    def test_fixed_point(self):
        d = mixed_data(7)
        rep = fit_full_em(d)
        again = fit_full_em(d, init=rep.params, config=EMConfig(max_iter=1))
        for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
            assert np.max(np.abs(getattr(again.params, f) - getattr(rep.params, f))) < 1e-4

    def test_permutation_equivariance(self):
        d = mixed_data(8)
        perm = np.random.default_rng(0).permutation(d.m)
        a = fit_full_em(d).params
        b = fit_full_em(d.take(perm)).params
        for f in ("theta_l", "theta_r", "beta_l", "beta_r"):
            assert_allclose(getattr(a, f), getattr(b, f), atol=1e-10, rtol=0)

    def test_two_sided_mixture_recovery(self):
        d = gen_appG(0.2, 0.5, -2.5, 2.5, 8000, seed=2024)
        pl, pr = link_probabilities(fit_full_em(d).params, [])
        assert abs(pl - 0.122) <= 0.05 and abs(pr - 0.136) <= 0.05

    def test_toy_mixture_total(self):
        model = OracleModel("mixture", {"components": [[0.15, -1.5, 1.0], [0.07, 2.0, 1.0]]})
        z, _ = _draw(model, None, 8000, make_rng(31))
        pl, pr = link_probabilities(fit_full_em(TestingInput.from_z(z)).params, [])
        assert abs(pl + pr - 0.22) <= 0.06

    def test_null_fit_and_grid(self):
        u = make_rng(77).random(2000)
        d = TestingInput(u, None)
        rep = fit_full_em(d)
        pl, pr = link_probabilities(rep.params, [])
        assert pl + pr <= 0.05
        # the likelihood maximizer over a 50 x 50 probability grid (shapes held
        # at the fit) also puts almost no mass on the non-null components
        best, arg = -np.inf, None
        for a in np.linspace(0.0, 0.2, 50):
            for b in np.linspace(0.0, 0.2, 50):
                tl = np.log(max(a, 1e-300) / (1 - a - b))
                tr = np.log(max(b, 1e-300) / (1 - a - b))
                q = BetaMixtureParams([tl], [tr], rep.params.beta_l, rep.params.beta_r)
                ll = full_loglik(q, d)
                if ll > best:
                    best, arg = ll, (a, b)
        assert sum(arg) <= 0.05
        assert full_loglik(rep.params, d) >= full_loglik(BetaMixtureParams.initial(1), d)

    def test_too_few(self):
        with pytest.raises(ValueError):
            fit_full_em(TestingInput(np.linspace(0.1, 0.9, 9), None))

    def test_nonfinite_names_index(self):
        from zapfdr.em import _check_finite
        with pytest.raises(EMError, match="index 2"):
            _check_finite(np.array([0.0, 1.0, np.nan]))
