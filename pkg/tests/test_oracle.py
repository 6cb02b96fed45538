"""Oracle CLfdr, the rank rule and the Example 2.2 boundaries."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from zapfdr.model import TestingInput
from zapfdr.numeric import norm_pdf
from zapfdr.oracle import (
    EXAMPLE_MU, OracleModel, clfdr_true, oracle_threshold, rejection_boundary_ex22, run_oracle,
)


def brute_oracle(v, alpha):
    order = np.argsort(v, kind="stable")
    best = 0
    for j in range(1, v.size + 1):
        if np.mean(v[order[:j]]) <= alpha:
            best = j
    return best


def ex22_ratio(z, x, mu=EXAMPLE_MU):
    """w f_1(z) / ((1 - w) f_0(z)) in Example 2.2."""
    return ((1 - x) / 10 * norm_pdf(z + mu) + (1 + x) / 10 * norm_pdf(z - mu)) / (0.8 * norm_pdf(z))


class TestClfdr:
    def test_no_alternatives(self):
        m = OracleModel("mixture", {"components": []})
        assert_allclose(clfdr_true(m, np.linspace(-5, 5, 11), np.zeros((11, 0))), 1.0)
        assert_allclose(clfdr_true(m, np.linspace(0.01, 1, 11), np.zeros((11, 0)), "p"), 1.0)

    def test_example22_origin(self):
        v = clfdr_true(OracleModel("example2.2"), 0.0, 0.0)
        # 0.8 phi(0) / (0.8 phi(0) + 0.2 phi(1.5)), evaluated with mpmath
        assert_allclose(v, 0.924929813480097070, rtol=1e-13)
        assert abs(v - 0.9249) < 1e-4

    @pytest.mark.parametrize("family", ["example2.2", "example2.3"])
    def test_p_scale_free_of_x(self, family):
        model = OracleModel(family)
        p = np.array([1e-6, 0.001, 0.03, 0.2, 0.5, 0.9, 1.0])
        ref = clfdr_true(model, p, np.zeros(p.size), "p")
        for x in (-0.9, -0.3, 0.4, 0.99):
            assert_allclose(clfdr_true(model, p, np.full(p.size, x), "p"), ref, rtol=1e-12)

    def test_z_scale_no_covariate_effect(self):
        model = OracleModel("appG")
        z = np.linspace(-4, 4, 9)
        a = clfdr_true(model, z, np.zeros((9, 0)))
        b = clfdr_true(model, z, np.zeros((9, 0)))
        assert_allclose(a, b, rtol=1e-12)
        # the mixture family is covariate-free too
        mix = OracleModel("mixture", {"components": [[0.1, 2.0, 1.0]]})
        assert_allclose(clfdr_true(mix, z, np.ones((9, 3))), clfdr_true(mix, z, -np.ones((9, 3))),
                        rtol=1e-12)

    def test_z_definition(self):
        model = OracleModel("example2.1")
        z, x = 1.2, 0.4
        w = (x + 2) / 10
        ref = (1 - w) * norm_pdf(z) / ((1 - w) * norm_pdf(z) + w * norm_pdf(z - 1.5))
        assert_allclose(clfdr_true(model, z, x), ref, rtol=1e-13)

    def test_p_definition(self):
        model = OracleModel("example2.2")
        p = 0.04
        q = -np.abs(__import__("scipy").stats.norm.ppf(p / 2))
        g1 = (norm_pdf(q - 1.5) + norm_pdf(-q - 1.5)) / (2 * norm_pdf(q))
        ref = 0.8 / (0.8 + 0.2 * g1)
        assert_allclose(clfdr_true(model, p, 0.3, "p"), ref, rtol=1e-12)

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_p_domain(self, p):
        with pytest.raises(ValueError):
            clfdr_true(OracleModel("example2.2"), p, 0.0, "p")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            clfdr_true(OracleModel("example2.2"), 0.1, 0.0, "q")

    def test_unit_sigma_density_normalized(self):
        # alternative scale enters as a proper N(mu, sigma^2) density
        m = OracleModel("setup1", {"sigma": 2.0})
        wts, mus, sc = m.components(np.zeros((1, 2)))
        assert sc[0, 1] == 2.0


class TestRankRule:
    def test_example(self):
        th, rej = oracle_threshold([0.01, 0.02, 0.9], 0.05)
        assert th.j == 2 and rej.tolist() == [0, 1]
        assert th.conditional_fdr == pytest.approx(0.015)

    def test_none(self):
        th, rej = oracle_threshold([0.3, 0.5], 0.05)
        assert th.j == 0 and rej.size == 0

    @pytest.mark.parametrize("seed", range(40))
    def test_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n = 50 if seed < 20 else 100
        # multiples of 1/64: prefix sums are exact, so ties at alpha are exact
        v = np.floor(rng.random(n) ** 2 * 64) / 64
        for alpha in (1 / 64, 3 / 64, 0.1, 0.25):
            th, rej = oracle_threshold(v, alpha)
            assert th.j == brute_oracle(v, alpha)
            if th.j:
                assert np.mean(v[rej]) <= alpha

    def test_validation(self):
        with pytest.raises(ValueError):
            oracle_threshold([0.1, 1.2], 0.1)

    def test_global_null(self):
        model = OracleModel("null")
        d = TestingInput.from_z(np.random.default_rng(0).standard_normal(500))
        assert run_oracle(model, d, 0.1).n_rejected == 0


class TestBoundary:
    def test_residual_at_zero(self):
        for lam in (0.05, 0.1, 0.3, 0.5):
            lo, hi = rejection_boundary_ex22(0.0, lam)
            c = (1 - lam) / lam
            assert_allclose(ex22_ratio(lo, 0.0), c, rtol=1e-8)
            assert_allclose(ex22_ratio(hi, 0.0), c, rtol=1e-8)

    def test_against_root_finder(self):
        grid = [(x, lam) for x in (-0.8, -0.4, 0.0, 0.4, 0.8) for lam in (0.05, 0.1, 0.2, 0.4)]
        assert len(grid) == 20
        for x, lam in grid:
            lo, hi = rejection_boundary_ex22(x, lam)
            c = (1 - lam) / lam
            f = lambda z: np.log(ex22_ratio(z, x)) - np.log(c)
            zmin = optimize.minimize_scalar(f, bounds=(-3, 3), method="bounded").x
            r_lo = optimize.bisect(f, -20.0, zmin, xtol=1e-12)
            r_hi = optimize.bisect(f, zmin, 20.0, xtol=1e-12)
            assert abs(lo - r_lo) <= 1e-6 and abs(hi - r_hi) <= 1e-6

    def test_lower_boundary_monotone(self):
        xs = np.linspace(-0.95, 0.95, 39)
        lows = [rejection_boundary_ex22(x, 0.1)[0] for x in xs]
        assert np.all(np.diff(lows) < 0)

    @pytest.mark.parametrize("x,lam", [(1.0, 0.1), (-1.0, 0.1), (0.0, 0.0), (0.0, 1.0)])
    def test_domain(self, x, lam):
        with pytest.raises(ValueError):
            rejection_boundary_ex22(x, lam)

    def test_no_two_sided_region(self):
        with pytest.raises(ValueError):
            rejection_boundary_ex22(0.0, 0.999999)
