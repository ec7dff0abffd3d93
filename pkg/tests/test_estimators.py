import math

import numpy as np
import pytest

from riskmon.estimators import (
    EtaPolicy,
    LabeledLossPair,
    StepBatch,
    denormalize_bound,
    eta_adaptive,
    eta_star,
    normalize_loss,
    ppi_estimate,
    supervised_estimate,
)


def pairs(*vals):
    return tuple(LabeledLossPair(true_loss=a, synth_loss=b) for a, b in vals)


def batch(labeled, unlabeled=(), t=1):
    return StepBatch(t=t, labeled=pairs(*labeled), unlabeled_synth=tuple(unlabeled))


class TestTypes:
    def test_loss_pair_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            LabeledLossPair(true_loss=1.5, synth_loss=0.5)
        with pytest.raises(ValueError):
            LabeledLossPair(true_loss=0.5, synth_loss=-0.1)
        with pytest.raises(ValueError):
            LabeledLossPair(true_loss=float("nan"), synth_loss=0.5)

    def test_batch_requires_labeled(self):
        with pytest.raises(ValueError):
            StepBatch(t=1, labeled=(), unlabeled_synth=(0.5,))

    def test_batch_requires_positive_t(self):
        with pytest.raises(ValueError):
            batch([(0.5, 0.5)], t=0)

    def test_batch_validates_unlabeled(self):
        with pytest.raises(ValueError):
            batch([(0.5, 0.5)], unlabeled=(1.2,))

    def test_eta_policy_validation(self):
        with pytest.raises(ValueError):
            EtaPolicy(mode="other")
        with pytest.raises(ValueError):
            EtaPolicy(eta_fixed=1.5, eta_max=1.0)
        with pytest.raises(ValueError):
            EtaPolicy(window_l=0)


class TestSupervised:
    def test_mean(self):
        b = batch([(0.2, 0.9), (0.4, 0.9), (0.6, 0.9)])
        assert supervised_estimate(b).value == pytest.approx(0.4, abs=1e-15)

    def test_single_zero(self):
        assert supervised_estimate(batch([(0.0, 1.0)])).value == 0.0

    def test_unlabeled_ignored(self):
        b = batch([(0.1, 0.0), (0.9, 1.0)], unlabeled=(0.0, 0.0, 0.0))
        est = supervised_estimate(b)
        assert est.value == pytest.approx(0.5, abs=1e-15)
        assert est.eta_used == 0.0
        assert est.n_labeled == 2
        assert est.n_unlabeled == 3


class TestPpi:
    def test_hand_example(self):
        # eta=1: unlabeled mean 0.3 plus rectifier 0.3 - 0.4
        b = batch([(0.2, 0.3), (0.4, 0.5)], unlabeled=(0.1, 0.3, 0.5))
        assert ppi_estimate(b, 1.0).value == pytest.approx(0.2, abs=1e-12)

    def test_eta_zero_equals_supervised_bitwise(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(1, 6))
            b = batch(
                [(float(rng.random()), float(rng.random())) for _ in range(n)],
                unlabeled=tuple(float(v) for v in rng.random(4)),
            )
            assert ppi_estimate(b, 0.0).value == supervised_estimate(b).value

    def test_rectifier_cancels_exactly(self):
        # synth == true everywhere, unlabeled pinned at the labeled mean
        m = 0.35
        b = batch([(0.2, 0.2), (0.5, 0.5)], unlabeled=(m, m, m, m))
        for eta in (0.0, 0.25, 0.5, 1.0):
            assert ppi_estimate(b, eta).value == pytest.approx(m, abs=1e-12)

    def test_empty_unlabeled_term_is_zero(self):
        b = batch([(0.2, 0.3), (0.4, 0.5)])
        # value = mean(true) - eta * mean(synth)
        assert ppi_estimate(b, 1.0).value == pytest.approx(0.3 - 0.4, abs=1e-12)

    def test_eta_out_of_range(self):
        b = batch([(0.2, 0.3)], unlabeled=(0.1,))
        with pytest.raises(ValueError):
            ppi_estimate(b, -0.1)
        with pytest.raises(ValueError):
            ppi_estimate(b, 1.5, eta_max=1.0)

    def test_range_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            N = int(rng.integers(0, 8))
            eta = float(rng.random())
            b = batch(
                [(float(rng.random()), float(rng.random())) for _ in range(n)],
                unlabeled=tuple(float(v) for v in rng.random(N)),
            )
            v = ppi_estimate(b, eta).value
            assert -eta - 1e-12 <= v <= 1.0 + eta + 1e-12

    def test_unbiased_monte_carlo(self):
        # mean of the estimator over many independent batches must sit within
        # 4 standard errors of the known risk, for a fixed eta
        rng = np.random.default_rng(2024)
        p, agreement, eta, n_unlab, reps = 0.4, 0.7, 1.0, 15, 10_000
        u = (rng.random(reps) < p).astype(float)
        flip = rng.random(reps) < agreement
        u_synth = np.where(flip, u, 1.0 - u)
        unl_true = (rng.random((reps, n_unlab)) < p).astype(float)
        unl_flip = rng.random((reps, n_unlab)) < agreement
        unl = np.where(unl_flip, unl_true, 1.0 - unl_true)
        values = eta * unl.mean(axis=1) + u - eta * u_synth
        se = values.std(ddof=1) / math.sqrt(reps)
        assert abs(values.mean() - p) <= 4 * se


class TestEtaStar:
    def test_zero_covariance(self):
        assert eta_star(0.0, 0.2, 1, 15) == 0.0

    def test_closed_form(self):
        assert eta_star(0.04, 0.08, 1, 15) == pytest.approx(0.46875, abs=1e-15)

    def test_perfect_predictor_limit(self):
        v = 0.21
        assert eta_star(v, v, 1, 10**9) == pytest.approx(1.0, abs=1e-6)
        assert eta_star(v, v, 1, 10**9, eta_max=0.8) == 0.8

    def test_degenerate_inputs(self):
        assert eta_star(-0.05, 0.2, 1, 15) == 0.0
        assert eta_star(0.05, 0.0, 1, 15) == 0.0
        with pytest.raises(ValueError):
            eta_star(0.05, -0.1, 1, 15)


class TestEtaAdaptive:
    def test_warmup_fallback(self):
        policy = EtaPolicy(eta_init=0.7)
        assert eta_adaptive([], [], policy) == 0.7
        one = pairs((0.2, 0.3))
        assert eta_adaptive(list(one), [0.5], policy) == 0.7

    def test_constant_unlabeled_gives_zero(self):
        policy = EtaPolicy()
        hist = pairs((0.1, 0.2), (0.5, 0.4), (0.9, 0.8))
        assert eta_adaptive(list(hist), [0.3] * 10, policy) == 0.0

    def test_identity_predictor_matches_plugin_formula(self):
        rng = np.random.default_rng(5)
        true = rng.random(40)
        hist = pairs(*[(float(v), float(v)) for v in true])
        unlab = rng.random(200)
        policy = EtaPolicy(eta_max=10.0)
        got = eta_adaptive(list(hist), [float(v) for v in unlab], policy)
        var_u = float(np.var(true, ddof=1))
        var_t = float(np.var(unlab, ddof=1))
        want = var_u / ((1 + 40 / 200) * var_t)
        assert got == pytest.approx(want, rel=1e-12)

    def test_clipped_to_eta_max(self):
        hist = pairs((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0))
        policy = EtaPolicy(eta_max=0.4, eta_fixed=0.4, eta_init=0.4)
        assert eta_adaptive(list(hist), [0.0, 1.0, 0.0, 1.0], policy) == 0.4


class TestNormalize:
    def test_endpoints(self):
        assert normalize_loss(-1.0, 1.0) == 0.0
        assert normalize_loss(2.0, 1.0) == 1.0

    def test_midpoint_fixed_point(self):
        assert normalize_loss(0.5, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_identity_when_eta_max_zero(self):
        for x in (0.0, 0.25, 1.0):
            assert normalize_loss(x, 0.0) == x

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            eta_max = float(rng.random() * 2)
            x = float(rng.uniform(-eta_max, 1 + eta_max))
            assert abs(denormalize_bound(normalize_loss(x, eta_max), eta_max) - x) < 1e-12

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            normalize_loss(1.6, 0.5)
        with pytest.raises(ValueError):
            normalize_loss(-0.6, 0.5)


class TestVarianceOptimality:
    def test_eta_star_beats_probes(self):
        # oracle moments for the bernoulli agreement model
        p, a, n_unlab, reps = 0.4, 0.8, 15, 20_000
        p_synth = a * p + (1 - a) * (1 - p)
        cov = p * a - p * p_synth
        var = p_synth * (1 - p_synth)
        star = eta_star(cov, var, 1, n_unlab, eta_max=10.0)

        rng = np.random.default_rng(99)
        u = (rng.random(reps) < p).astype(float)
        agree = rng.random(reps) < a
        u_s = np.where(agree, u, 1.0 - u)
        unl_t = (rng.random((reps, n_unlab)) < p).astype(float)
        unl_a = rng.random((reps, n_unlab)) < a
        unl = np.where(unl_a, unl_t, 1.0 - unl_t).mean(axis=1)

        def variance_at(eta):
            vals = eta * unl + u - eta * u_s
            return vals.var(ddof=1)

        v_star = variance_at(star)
        for probe in (star - 0.2, star + 0.2):
            # batch-means standard error of the paired variance difference
            chunks = 40
            diffs = []
            for c in range(chunks):
                sl = slice(c * reps // chunks, (c + 1) * reps // chunks)
                vals_s = star * unl[sl] + u[sl] - star * u_s[sl]
                vals_p = probe * unl[sl] + u[sl] - probe * u_s[sl]
                diffs.append(vals_p.var(ddof=1) - vals_s.var(ddof=1))
            se = float(np.std(diffs, ddof=1) / math.sqrt(chunks))
            assert variance_at(probe) - v_star >= -3 * se
