import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from asgdiff.errors import PredictorError, ShapeError
from asgdiff.predictors import (
    AnalyticGaussianPredictor,
    CfgPredictor,
    ConstantPredictor,
    DelayedPredictor,
    GaussianPrior,
    GmmPredictor,
    GmmPrior,
    analytic_gaussian_eps,
    build_predictor,
    cfg_combine,
    corner_bump_means,
    predict,
)
from asgdiff.schedule import make_schedule
from asgdiff.tensor import RngState, randn


def scalar(v):
    x = np.full((1, 1, 1), v, dtype=np.float32)
    x.flags.writeable = False
    return x


def quad_posterior_mean(x_t, ab, mus, sigmas, weights):
    """Numerical Bayes oracle: E[x0 | x_t] for a scalar mixture via quadrature."""

    def joint(x0):
        prior = sum(
            w * np.exp(-0.5 * ((x0 - m) / s) ** 2) / s
            for w, m, s in zip(weights, mus, sigmas)
        )
        lik = np.exp(-0.5 * (x_t - np.sqrt(ab) * x0) ** 2 / (1 - ab))
        return prior * lik

    num, _ = integrate.quad(lambda x0: x0 * joint(x0), -60, 60, limit=400)
    den, _ = integrate.quad(joint, -60, 60, limit=400)
    return num / den


class TestCfgCombine:
    def test_w0_returns_uncond(self, latent_pair):
        a, b = latent_pair
        assert np.array_equal(cfg_combine(a, b, 0.0), a)

    def test_w1_returns_cond(self, latent_pair):
        a, b = latent_pair
        assert np.array_equal(cfg_combine(a, b, 1.0), b)

    def test_scalar_hand_value(self):
        out = cfg_combine(scalar(0.2), scalar(0.6), 2.0)
        assert out[0, 0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cfg_combine(randn((1, 2, 2), rng), randn((1, 3, 3), rng), 1.5)

    @given(w=st.floats(-4, 4, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_affine_property(self, w):
        a = randn((2, 4, 4), RngState(31))
        b = randn((2, 4, 4), RngState(32))
        lhs = cfg_combine(a, b, w).astype(np.float64) - a
        rhs = np.float32(w) * (b - a)
        assert np.allclose(lhs, rhs, atol=1e-6)


class TestAnalyticGaussian:
    def test_delta_prior_returns_mu(self, sched):
        mu = randn((1, 3, 3), RngState(41))
        prior = GaussianPrior(mu=mu, sigma0=0.0)
        x_t = randn((1, 3, 3), RngState(42))
        eps = analytic_gaussian_eps(x_t, 600, prior, sched)
        ab = sched.alpha_bar_at(600)
        # eps must exactly invert toward mu
        x0p = (x_t - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
        assert np.allclose(x0p, mu, atol=1e-5)

    def test_zero_noise_estimate_at_prior_mean(self, sched):
        mu = randn((1, 4, 4), RngState(43))
        prior = GaussianPrior(mu=mu, sigma0=1.0)
        ab = sched.alpha_bar_at(800)
        x_t = (np.sqrt(ab) * mu).astype(np.float32)
        eps = analytic_gaussian_eps(x_t, 800, prior, sched)
        assert np.abs(eps).max() < 1e-6

    def test_generic_value_vs_quadrature_oracle(self):
        # alpha_bar = 0.5, sigma0 = 1, mu = 0, x_t = 1
        sched = make_schedule(1, 0.5, 0.5)
        prior = GaussianPrior(mu=scalar(0.0), sigma0=1.0)
        eps = analytic_gaussian_eps(scalar(1.0), 1, prior, sched)
        e_x0 = quad_posterior_mean(1.0, 0.5, [0.0], [1.0], [1.0])
        expected = (1.0 - np.sqrt(0.5) * e_x0) / np.sqrt(0.5)
        assert eps[0, 0, 0] == pytest.approx(expected, abs=1e-6)
        assert eps[0, 0, 0] == pytest.approx(np.sqrt(0.5), abs=1e-6)

    def test_signal_dominant_guard(self):
        sched = make_schedule(1, 1e-15, 1e-15)
        prior = GaussianPrior(mu=scalar(0.0), sigma0=1.0)
        eps = analytic_gaussian_eps(scalar(3.0), 1, prior, sched)
        assert np.array_equal(eps, np.zeros((1, 1, 1), dtype=np.float32))


class TestGmm:
    def test_weights_must_sum_to_one(self):
        mu = scalar(0.0)
        with pytest.raises(ValueError):
            GmmPrior(((0.5, mu, 1.0), (0.4, mu, 1.0)))

    def test_far_separated_modes_saturate(self, sched):
        # x_t near mode 1: prediction matches the single-Gaussian answer
        mu1, mu2 = scalar(-8.0), scalar(8.0)
        prior = GmmPrior(((0.5, mu1, 0.5), (0.5, mu2, 0.5)))
        gmm = GmmPredictor({None: prior}, sched)
        single = AnalyticGaussianPredictor(
            {None: GaussianPrior(mu=mu1, sigma0=0.5)}, sched
        )
        t = 300
        ab = sched.alpha_bar_at(t)
        x_t = scalar(np.sqrt(ab) * -8.0 + 0.3)
        got = gmm.predict(x_t, t).eps_hat[0, 0, 0]
        ref = single.predict(x_t, t).eps_hat[0, 0, 0]
        assert got == pytest.approx(ref, abs=1e-4)

    def test_eps_matches_quadrature_oracle(self, sched):
        mus, sigmas, weights = [-2.0, 1.5], [0.7, 0.4], [0.3, 0.7]
        prior = GmmPrior(tuple((w, scalar(m), s) for w, m, s in zip(weights, mus, sigmas)))
        gmm = GmmPredictor({None: prior}, sched)
        t = 500
        ab = sched.alpha_bar_at(t)
        for xv in (-1.0, 0.2, 2.0):
            e_x0 = quad_posterior_mean(xv, ab, mus, sigmas, weights)
            expected = (xv - np.sqrt(ab) * e_x0) / np.sqrt(1 - ab)
            got = gmm.predict(scalar(xv), t).eps_hat[0, 0, 0]
            assert got == pytest.approx(expected, abs=1e-5), f"x_t={xv}"

    def test_degrades_to_gaussian_as_weights_concentrate(self, sched):
        mu1, mu2 = scalar(-1.0), scalar(2.0)
        single = AnalyticGaussianPredictor({None: GaussianPrior(mu=mu1, sigma0=0.6)}, sched)
        x_t = scalar(0.4)
        prev_gap = None
        for w1 in (0.9, 0.99, 0.999999):
            prior = GmmPrior(((w1, mu1, 0.6), (1 - w1, mu2, 0.6)))
            gmm = GmmPredictor({None: prior}, sched)
            gap = abs(
                float(gmm.predict(x_t, 400).eps_hat[0, 0, 0])
                - float(single.predict(x_t, 400).eps_hat[0, 0, 0])
            )
            if prev_gap is not None:
                assert gap <= prev_gap + 1e-9
            prev_gap = gap
        assert prev_gap < 1e-5

    def test_attention_is_normalized_responsibility(self, sched):
        means = corner_bump_means((1, 8, 8), 2, 3.0)
        prior = GmmPrior(((0.5, means[0], 0.3), (0.5, means[1], 0.3)))
        gmm = GmmPredictor({None: prior}, sched)
        out = gmm.predict(randn((1, 8, 8), RngState(55)), 100)
        att = out.attention
        assert att.shape == (1, 8, 8)
        assert np.isfinite(att).all() and (att >= 0).all() and (att <= 1).all()


class TestPredictContract:
    def test_constant_predictor(self, rng):
        p = ConstantPredictor(0.7)
        x = randn((2, 3, 3), rng)
        out = predict(x, 10, None, p)
        assert np.all(out.eps_hat == np.float32(0.7)) and out.eps_hat.shape == x.shape

    def test_condition_selects_prior(self, sched):
        mu_u, mu_c = scalar(0.0), scalar(2.0)
        p = AnalyticGaussianPredictor(
            {None: GaussianPrior(mu_u, 0.0), "cat": GaussianPrior(mu_c, 0.0)}, sched
        )
        x = scalar(1.0)
        eps_u = p.predict(x, 500, None).eps_hat
        eps_c = p.predict(x, 500, "cat").eps_hat
        assert not np.array_equal(eps_u, eps_c)

    def test_unknown_condition_is_typed_error(self, sched):
        p = AnalyticGaussianPredictor({None: GaussianPrior(scalar(0.0), 1.0)}, sched)
        with pytest.raises(PredictorError):
            p.predict(scalar(0.0), 500, "unregistered")

    def test_bad_backend_shape_caught(self, rng):
        class Bad:
            def predict(self, x, t, cond=None):
                from asgdiff.predictors import PredictOutput

                return PredictOutput(eps_hat=np.zeros((1, 1, 1), dtype=np.float32))

        with pytest.raises(PredictorError):
            predict(randn((1, 2, 2), rng), 5, None, Bad())

    def test_cfg_wrapper_combines(self, sched):
        p = AnalyticGaussianPredictor(
            {None: GaussianPrior(scalar(0.0), 0.0), "c": GaussianPrior(scalar(1.0), 0.0)},
            sched,
        )
        wrapped = CfgPredictor(p, "c", 2.0)
        x = scalar(0.5)
        got = wrapped.predict(x, 500).eps_hat
        eu = p.predict(x, 500, None).eps_hat
        ec = p.predict(x, 500, "c").eps_hat
        assert np.array_equal(got, cfg_combine(eu, ec, 2.0))

    def test_delay_wrapper_passthrough(self, sched):
        inner = ConstantPredictor(0.1)
        wrapped = DelayedPredictor(inner, 1.0)
        x = scalar(0.0)
        assert np.array_equal(wrapped.predict(x, 5).eps_hat, inner.predict(x, 5).eps_hat)


class TestFactory:
    def test_kinds(self, sched):
        shape = (1, 8, 8)
        assert isinstance(build_predictor({"kind": "constant"}, shape, sched), ConstantPredictor)
        assert isinstance(build_predictor({"kind": "gaussian"}, shape, sched), AnalyticGaussianPredictor)
        assert isinstance(build_predictor({"kind": "gmm"}, shape, sched), GmmPredictor)
        with pytest.raises(ValueError):
            build_predictor({"kind": "mystery"}, shape, sched)

    def test_cfg_spec_builds_wrapper(self, sched):
        p = build_predictor({"kind": "gaussian", "cfg_w": 3.0}, (1, 4, 4), sched)
        assert isinstance(p, CfgPredictor)
        out = p.predict(randn((1, 4, 4), RngState(77)), 500)
        assert out.eps_hat.shape == (1, 4, 4)
