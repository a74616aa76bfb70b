"""Loss-function tests: frozen values, the closed-form Gamma expectation
against an independent quadrature oracle, MC consistency, and gradient
checks for every variant."""

import math

import numpy as np
import pytest
from scipy import integrate

from mixlogit import autodiff as ad
from mixlogit import model as mm
from mixlogit import objective, specfn
from mixlogit.datagen import PreferencePair
from mixlogit.model import VocabConfig
from mixlogit.objective import Gamma, LogNormal, LossConfig, PointMass
from mixlogit.rng import PCG32
from mixlogit.specfn import SeriesConfig

NEG_LOG_SIGMOID_1 = 0.31326168751822283405  # -log sigma(1), mpmath


def quad_gamma(dr: float, k: float, lam: float) -> float:
    """Independent oracle: adaptive quadrature over the Gamma density."""
    log_norm = k * math.log(lam) - math.lgamma(k)

    def f(b):
        return specfn.sigmoid(b * dr) * math.exp(
            log_norm + (k - 1) * math.log(b) - lam * b) if b > 0 else 0.0

    mid = k / lam
    v1, _ = integrate.quad(f, 0, 4 * mid, points=[0.25 * mid, mid], limit=200)
    v2, _ = integrate.quad(f, 4 * mid, np.inf, limit=200)
    return v1 + v2


def quad_lognormal(dr: float, mu: float, sigma: float) -> float:
    def f(x):
        z = (x - mu) / sigma
        return (specfn.sigmoid(math.exp(x) * dr)
                * math.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi)))

    v, _ = integrate.quad(f, mu - 12 * sigma, mu + 12 * sigma, limit=200)
    return v


class TestDpoLoss:
    def test_delta_zero(self):
        loss = objective.dpo_loss(ad.constant(0.0), 0.1)
        assert abs(float(loss.value) - math.log(2.0)) < 1e-12

    def test_reference_value(self):
        loss = objective.dpo_loss(ad.constant(10.0), 0.1)
        assert abs(float(loss.value) - NEG_LOG_SIGMOID_1) < 1e-12

    def test_saturation(self):
        loss = objective.dpo_loss(ad.constant(1e6), 0.1)
        assert float(loss.value) == 0.0

    def test_nonpositive_beta(self):
        with pytest.raises(ValueError):
            objective.dpo_loss(ad.constant(1.0), 0.0)

    def test_gradient_flows_to_delta(self):
        d = ad.Node(2.0, requires_grad=True)
        ad.backward(objective.dpo_loss(d, 0.5))
        # d/d(dr) of -log sigmoid(b*dr) = -b * sigmoid(-b*dr)
        want = -0.5 * specfn.sigmoid(-1.0)
        assert abs(float(d.adjoint) - want) < 1e-12


class TestLogNormalLoss:
    def test_delta_zero_is_log2_for_any_noise(self):
        dist = LogNormal(mu=-2.3, sigma_raw=0.5)
        cfg = LossConfig(mc_samples=8)
        noise = np.linspace(-2, 2, 8)
        loss = objective.lognormal_mixdpo_loss(ad.constant(0.0), dist, cfg, noise)
        assert abs(float(loss.value) - math.log(2.0)) < 1e-12

    def test_collapsed_noise_reduces_to_dpo(self):
        mu = -1.2
        dist = LogNormal(mu=mu, sigma_raw=0.3)
        cfg = LossConfig(mc_samples=4)
        loss = objective.lognormal_mixdpo_loss(
            ad.constant(3.0), dist, cfg, np.zeros(4))
        ref = objective.dpo_loss(ad.constant(3.0), math.exp(mu))
        assert abs(float(loss.value) - float(ref.value)) < 1e-12

    def test_empty_noise_rejected(self):
        dist = LogNormal(mu=0.0, sigma_raw=0.0)
        with pytest.raises(ValueError):
            objective.lognormal_mixdpo_loss(
                ad.constant(1.0), dist, LossConfig(), np.array([]))

    def test_finite_for_extreme_delta(self):
        dist = LogNormal(mu=2.0, sigma_raw=2.0)
        cfg = LossConfig(mc_samples=4)
        noise = np.array([-1.0, 0.0, 1.0, 3.0])
        loss = objective.lognormal_mixdpo_loss(
            ad.constant(-500.0), dist, cfg, noise)
        assert math.isfinite(float(loss.value))

    def test_mc_matches_quadrature(self):
        # (mu=-2.3, sigma=0.6, dr=5): mean of MC inner probabilities over
        # noise sets within 3 standard errors of the quadrature oracle
        mu, sigma, dr = -2.3, 0.6, 5.0
        dist = LogNormal.from_effective(mu, sigma)
        cfg = LossConfig(mc_samples=4096)
        rng = np.random.default_rng(77)
        estimates = []
        for _ in range(50):
            noise = rng.standard_normal(4096)
            loss = objective.lognormal_mixdpo_loss(
                ad.constant(dr), dist, cfg, noise)
            estimates.append(math.exp(-float(loss.value)))
        mean = float(np.mean(estimates))
        se = float(np.std(estimates, ddof=1)) / math.sqrt(len(estimates))
        assert abs(mean - quad_lognormal(dr, mu, sigma)) < 3 * se


class TestGammaInnerExpectation:
    def test_delta_zero_is_half(self):
        value, _, dk, dl = objective.gamma_inner_expectation(0.0, 2.0, 16.7)
        assert value == 0.5
        assert dk == 0.0 and dl == 0.0

    def test_switch_slope_matches_limit(self):
        _, d_dr, _, _ = objective.gamma_inner_expectation(0.0, 2.0, 16.7)
        assert abs(d_dr - 2.0 / (4 * 16.7)) < 1e-9

    def test_case2_symmetry(self):
        k, lam, dr = 2.0, 16.7, 7.3
        up, *_ = objective.gamma_inner_expectation(dr, k, lam)
        down, *_ = objective.gamma_inner_expectation(-dr, k, lam)
        assert abs(up + down - 1.0) < 1e-12

    def test_against_quadrature_oracle(self):
        got, *_ = objective.gamma_inner_expectation(10.0, 2.0, 16.7)
        assert abs(got - quad_gamma(10.0, 2.0, 16.7)) < 1e-4

    def test_monotone_increasing_in_delta(self):
        for k, lam in [(0.8, 3.0), (2.0, 16.7), (5.0, 1.0)]:
            values = [objective.gamma_inner_expectation(d, k, lam)[0]
                      for d in np.linspace(-12, 12, 41)]
            assert all(a < b for a, b in zip(values, values[1:])), (k, lam)

    def test_partials_match_fd(self):
        h = 1e-6
        for dr, k, lam in [(2.0, 2.0, 16.7), (0.3, 0.8, 4.0), (-5.0, 1.3, 30.0)]:
            v, d_dr, d_k, d_lam = objective.gamma_inner_expectation(dr, k, lam)
            fd_dr = (objective.gamma_inner_expectation(dr + h, k, lam)[0]
                     - objective.gamma_inner_expectation(dr - h, k, lam)[0]) / (2 * h)
            fd_k = (objective.gamma_inner_expectation(dr, k + h, lam)[0]
                    - objective.gamma_inner_expectation(dr, k - h, lam)[0]) / (2 * h)
            fd_lam = (objective.gamma_inner_expectation(dr, k, lam + h)[0]
                      - objective.gamma_inner_expectation(dr, k, lam - h)[0]) / (2 * h)
            for got, want in [(d_dr, fd_dr), (d_k, fd_k), (d_lam, fd_lam)]:
                assert abs(got - want) < 1e-4 * max(abs(want), 1e-2), (dr, k, lam)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            objective.gamma_inner_expectation(1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            objective.gamma_inner_expectation(1.0, 1.0, -2.0)

    def test_value_in_unit_interval(self):
        rng = PCG32(3)
        for _ in range(200):
            k = 0.3 + rng.uniform() * 6
            lam = 0.5 + rng.uniform() * 50
            dr = rng.uniform() * 30 - 15
            v, *_ = objective.gamma_inner_expectation(dr, k, lam)
            assert 0.0 < v < 1.0

    def test_mc_consistency_random_triples(self):
        # closed form within 4 standard errors of raw-draw Monte Carlo
        rng = np.random.default_rng(123)
        for _ in range(50):
            k = rng.uniform(0.7, 5.0)
            lam = rng.uniform(1.0, 50.0)
            dr = rng.uniform(-10.0, 10.0)
            draws = rng.gamma(shape=k, scale=1.0 / lam, size=100_000)
            vals = specfn.sigmoid(draws * dr)
            mc = float(np.mean(vals))
            se = float(np.std(vals, ddof=1)) / math.sqrt(vals.size)
            closed, *_ = objective.gamma_inner_expectation(dr, k, lam)
            assert abs(mc - closed) <= 4 * se, (k, lam, dr)


class TestGammaLoss:
    def test_delta_zero(self):
        dist = Gamma.from_effective(2.0, 16.7)
        loss = objective.gamma_mixdpo_loss(ad.constant(0.0), dist, LossConfig())
        assert abs(float(loss.value) - math.log(2.0)) < 1e-12

    def test_frozen_distribution_gets_zero_grads(self):
        dist = Gamma.from_effective(2.0, 16.7, trainable=False)
        delta = ad.Node(2.0, requires_grad=True)
        loss = objective.gamma_mixdpo_loss(delta, dist, LossConfig())
        ad.backward(loss)
        assert float(dist.k_raw.adjoint) == 0.0
        assert float(dist.lambda_raw.adjoint) == 0.0
        assert float(delta.adjoint) != 0.0

    def test_loss_gradient_matches_fd(self):
        # at (dr=2, k=2, lam=16.7), full loss gradient via raw parameters
        dist = Gamma.from_effective(2.0, 16.7, trainable=True)
        delta = ad.Node(2.0, requires_grad=True)
        loss = objective.gamma_mixdpo_loss(delta, dist, LossConfig())
        ad.backward(loss)
        h = 1e-6

        def loss_at(dr=2.0, dk_raw=0.0, dl_raw=0.0):
            d2 = Gamma(float(dist.k_raw.value) + dk_raw,
                       float(dist.lambda_raw.value) + dl_raw)
            return float(objective.gamma_mixdpo_loss(
                ad.constant(dr), d2, LossConfig()).value)

        checks = [
            (float(delta.adjoint), (loss_at(dr=2 + h) - loss_at(dr=2 - h)) / (2 * h)),
            (float(dist.k_raw.adjoint),
             (loss_at(dk_raw=h) - loss_at(dk_raw=-h)) / (2 * h)),
            (float(dist.lambda_raw.adjoint),
             (loss_at(dl_raw=h) - loss_at(dl_raw=-h)) / (2 * h)),
        ]
        for got, want in checks:
            assert abs(got - want) < 1e-4 * max(abs(want), 1e-2)


class TestBatchLoss:
    @pytest.fixture
    def setup(self):
        vocab = VocabConfig(vocab_size=8, max_prompt_len=4, max_response_len=6)
        ref = mm.init_reference(vocab, hidden_dim=8, seed=11)
        policy = mm.init_policy_from(ref)
        policy.output.value += 0.03
        pair = PreferencePair(prompt=[0, 1], chosen=[2, 3], rejected=[4])
        return policy, ref, pair

    def test_identical_pairs_mean(self, setup):
        policy, ref, pair = setup
        cfg = LossConfig()
        dist = PointMass(0.1)
        single = objective.batch_loss([pair], policy, ref, dist, cfg)
        triple = objective.batch_loss([pair] * 3, policy, ref, dist, cfg)
        assert abs(float(single.value) - float(triple.value)) < 1e-12

    def test_pointmass_equals_degenerate_lognormal(self, setup):
        policy, ref, pair = setup
        cfg = LossConfig(mc_samples=4)
        pm = objective.batch_loss([pair], policy, ref, PointMass(0.1), cfg)
        ln = objective.batch_loss(
            [pair], policy, ref,
            LogNormal(mu=math.log(0.1), sigma_raw=-40.0), cfg,
            noise=np.ones((1, 4)))
        assert abs(float(pm.value) - float(ln.value)) < 1e-6

    def test_three_pair_hand_mean(self, setup):
        policy, ref, _ = setup
        pairs = [
            PreferencePair(prompt=[0], chosen=[1, 2], rejected=[3]),
            PreferencePair(prompt=[1, 2], chosen=[4], rejected=[5, 6]),
            PreferencePair(prompt=[3], chosen=[7, 0], rejected=[0, 7]),
        ]
        cfg = LossConfig()
        got = float(objective.batch_loss(pairs, policy, ref, PointMass(0.3), cfg).value)
        want = np.mean([
            -specfn.log_sigmoid(
                0.3 * float(mm.implicit_reward_delta(policy, ref, p).value))
            for p in pairs
        ])
        assert abs(got - want) < 1e-12

    def test_empty_batch_rejected(self, setup):
        policy, ref, _ = setup
        with pytest.raises(ValueError, match="non-empty"):
            objective.batch_loss([], policy, ref, PointMass(0.1), LossConfig())

    def test_cached_reference_ratios_match_direct(self, setup):
        policy, ref, pair = setup
        cfg = LossConfig()
        direct = objective.batch_loss([pair], policy, ref, PointMass(0.2), cfg)
        cached = objective.batch_loss(
            [pair], policy, ref, PointMass(0.2), cfg,
            ref_log_ratios=[mm.reference_log_ratio_const(ref, pair)])
        assert abs(float(direct.value) - float(cached.value)) < 1e-12


class TestProbabilitySymmetry:
    def test_all_variants_winner_flip(self):
        # inner probability of the flipped pair complements the original
        dr = 3.7
        k, lam = 2.0, 16.7
        p_up, *_ = objective.gamma_inner_expectation(dr, k, lam)
        p_down, *_ = objective.gamma_inner_expectation(-dr, k, lam)
        assert abs(p_up + p_down - 1.0) < 1e-9

        dist = LogNormal.from_effective(-2.3, 0.6)
        cfg = LossConfig(mc_samples=16)
        noise = np.linspace(-2.5, 2.5, 16)
        p1 = math.exp(-float(objective.lognormal_mixdpo_loss(
            ad.constant(dr), dist, cfg, noise).value))
        p2 = math.exp(-float(objective.lognormal_mixdpo_loss(
            ad.constant(-dr), dist, cfg, noise).value))
        assert abs(p1 + p2 - 1.0) < 1e-12

        p3 = math.exp(-float(objective.dpo_loss(ad.constant(dr), 0.1).value))
        p4 = math.exp(-float(objective.dpo_loss(ad.constant(-dr), 0.1).value))
        assert abs(p3 + p4 - 1.0) < 1e-12


class TestStrengthDistributions:
    def test_moments(self):
        pm = PointMass(0.1)
        assert pm.mean() == 0.1 and pm.variance() == 0.0
        ln = LogNormal.from_effective(-2.3, 0.6)
        assert abs(ln.mean() - math.exp(-2.3 + 0.18)) < 1e-12
        want_var = (math.exp(0.36) - 1) * math.exp(-4.6 + 0.36)
        assert abs(ln.variance() - want_var) < 1e-12
        g = Gamma.from_effective(2.0, 16.7)
        assert abs(g.mean() - 2.0 / 16.7) < 1e-9
        assert abs(g.variance() - 2.0 / 16.7**2) < 1e-9

    def test_softplus_positivity(self):
        g = Gamma(k_raw=-30.0, lambda_raw=-30.0)
        assert g.k > 0 and g.lam > 0

    def test_round_trip_dict(self):
        for dist in [PointMass(0.1), LogNormal.from_effective(-2.3, 0.6, True),
                     Gamma.from_effective(2.0, 16.7, True)]:
            clone = objective.distribution_from_dict(dist.to_dict())
            assert clone.raw_values() == dist.raw_values()
            assert clone.trainable == dist.trainable

    def test_pointmass_requires_positive_beta(self):
        with pytest.raises(ValueError):
            PointMass(0.0)
