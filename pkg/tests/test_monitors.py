import math

import numpy as np
import pytest

from riskmon.bounds import hoeffding_radius
from riskmon.estimators import EtaPolicy, LabeledLossPair, StepBatch, eta_adaptive
from riskmon.monitors import (
    BETTING_PPI,
    HOEFFDING_LABELED_ONLY,
    BoundTrace,
    CalibrationError,
    Monitor,
    MonitorConfig,
    SequencingError,
    SourceCalibration,
    UrmCalibration,
    UrmMonitor,
    calibrate_source,
    calibrate_urm,
    first_alarm_time,
    urm_calibrate,
)
from riskmon.simulator import ConstantSchedule, DriftScenario, StepSchedule, generate_stream


def pairs(*vals):
    return tuple(LabeledLossPair(true_loss=a, synth_loss=b) for a, b in vals)


def make_batch(t, labeled, unlabeled=()):
    return StepBatch(t=t, labeled=pairs(*labeled), unlabeled_synth=tuple(unlabeled))


def fixed_config(eta=1.0, eta_max=1.0, **kw):
    policy = EtaPolicy(mode="fixed", eta_fixed=eta, eta_init=eta, eta_max=eta_max)
    return MonitorConfig.create(eta_policy=policy, **kw)


class TestConfig:
    def test_budget_constraint(self):
        with pytest.raises(ValueError):
            MonitorConfig.create(delta_s=0.6, delta_t=0.5)

    def test_subspec_sync(self):
        cfg = MonitorConfig.create(delta_s=0.02, delta_t=0.1)
        assert cfg.cs_spec.delta_t == 0.1
        assert cfg.betting_spec.delta_s == 0.02

    def test_mismatched_subspec_rejected(self):
        from riskmon.bounds import ConfidenceSequenceSpec

        with pytest.raises(ValueError):
            MonitorConfig(delta_t=0.2, cs_spec=ConfidenceSequenceSpec(delta_t=0.1))


class TestCalibration:
    def test_hoeffding_constant_losses(self):
        labeled = pairs(*[(0.1, 0.1)] * 100)
        cfg = fixed_config(source_bound_method=HOEFFDING_LABELED_ONLY)
        calib = calibrate_source(labeled, (), cfg)
        assert calib.estimate == pytest.approx(0.1, abs=1e-12)
        want = 0.1 + math.sqrt(math.log(20.0) / 200.0)
        assert calib.upper_bound == pytest.approx(want, abs=1e-12)
        assert calib.method == HOEFFDING_LABELED_ONLY
        assert calib.eta0 == 0.0

    def test_betting_bound_dominates_constant_mean(self):
        labeled = pairs(*[(0.1, 0.1)] * 100)
        unl = (0.1,) * 1500
        cfg = fixed_config(source_bound_method=BETTING_PPI)
        calib = calibrate_source(labeled, unl, cfg)
        assert calib.upper_bound >= 0.1
        assert calib.method == BETTING_PPI
        assert calib.eta0 == 1.0
        assert calib.n0 == 100 and calib.N0 == 1500

    def test_consistency_with_large_sample(self):
        rng = np.random.default_rng(6)
        labeled = pairs(*[(float(v), float(v)) for v in (rng.random(20_000) < 0.3)])
        cfg = fixed_config(source_bound_method=HOEFFDING_LABELED_ONLY)
        calib = calibrate_source(labeled, (), cfg)
        assert abs(calib.upper_bound - 0.3) < 0.03

    def test_empty_labeled_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_source((), (), fixed_config())

    def test_betting_with_empty_unlabeled_degrades(self):
        labeled = pairs(*[(0.2, 0.7)] * 50)
        cfg = fixed_config(source_bound_method=BETTING_PPI)
        calib = calibrate_source(labeled, (), cfg)
        # eta0 forced to 0: bound built from the true losses alone
        assert calib.eta0 == 0.0
        assert calib.estimate == pytest.approx(0.2, abs=1e-12)


class TestMonitorStep:
    def test_hand_chained_example(self):
        cfg = fixed_config(eta=1.0)
        calib = SourceCalibration(0.3, 0.45, 100, 1500, 1.0)
        monitor = Monitor(calib, cfg)
        row = monitor.step(make_batch(1, [(0.2, 0.3), (0.4, 0.5)], [0.1, 0.3, 0.5]))
        assert row.step_estimate == pytest.approx(0.2, abs=1e-12)
        # normalized value (0.2 + 1) / 3 = 0.4 against the 0.5 start predictor
        assert row.v_t == pytest.approx(0.01, abs=1e-12)
        assert row.eta_t == 1.0
        assert row.running_estimate == pytest.approx(0.2, abs=1e-12)
        assert not row.alarm

    def test_alarm_threshold_rule(self):
        # upper bound so low that the very first lower bound crosses it
        cfg = fixed_config(eta=0.0, eta_max=0.0, eps_tol=0.1)
        calib = SourceCalibration(-15.0, -15.0, 10, 0, 0.0)
        monitor = Monitor(calib, cfg)
        row = monitor.step(make_batch(1, [(0.4, 0.4)]))
        assert row.lower_bound > calib.upper_bound + 0.1
        assert row.alarm

    def test_latching_is_monotone_and_rows_continue(self):
        cfg = fixed_config(eta=0.0, eta_max=0.0, eps_tol=0.1)
        calib = SourceCalibration(-15.0, -15.0, 10, 0, 0.0)
        monitor = Monitor(calib, cfg)
        rows = [monitor.step(make_batch(t, [(0.01, 0.01)])) for t in range(1, 30)]
        assert rows[0].alarm
        assert all(r.alarm for r in rows)
        assert [r.t for r in rows] == list(range(1, 30))

    def test_out_of_order_batch(self):
        cfg = fixed_config()
        calib = SourceCalibration(0.3, 0.45, 10, 0, 1.0)
        monitor = Monitor(calib, cfg)
        monitor.step(make_batch(1, [(0.2, 0.2)], [0.1]))
        with pytest.raises(SequencingError):
            monitor.step(make_batch(3, [(0.2, 0.2)], [0.1]))

    def test_empty_unlabeled_forces_eta_zero(self):
        cfg = fixed_config(eta=1.0)
        calib = SourceCalibration(0.3, 0.45, 10, 0, 1.0)
        monitor = Monitor(calib, cfg)
        row = monitor.step(make_batch(1, [(0.3, 0.9)]))
        assert row.eta_t == 0.0
        assert row.step_estimate == pytest.approx(0.3, abs=1e-12)

    def test_lower_bound_uses_configured_scale(self):
        # eta_max = 0 means identity normalization: lower = mean - u(V)/t
        cfg = fixed_config(eta=0.0, eta_max=0.0)
        calib = SourceCalibration(0.3, 0.45, 10, 0, 0.0)
        monitor = Monitor(calib, cfg)
        row = monitor.step(make_batch(1, [(0.4, 0.4)]))
        u1 = monitor.state.solver.radius(row.v_t)
        assert row.lower_bound == pytest.approx(0.4 - u1, abs=1e-9)


class TestSrmEquivalence:
    def test_srm_preset_equals_eta_zero_pprm(self):
        from riskmon.harness import method_config

        stream = generate_stream(
            DriftScenario(schedule=ConstantSchedule(0.4), agreement=0.8,
                          horizon=80, seed=5, n_per_step=2, N_per_step=6)
        )
        base = MonitorConfig.create()
        srm_cfg = method_config(base, "srm")
        manual_cfg = fixed_config(eta=0.0, eta_max=0.0,
                                  source_bound_method=HOEFFDING_LABELED_ONLY)
        labeled = pairs(*[(0.4, 0.4)] * 50)
        calib_a = calibrate_source(labeled, (), srm_cfg)
        calib_b = calibrate_source(labeled, (), manual_cfg)
        assert calib_a == calib_b
        trace_a = Monitor(calib_a, srm_cfg).run(stream)
        trace_b = Monitor(calib_b, manual_cfg).run(stream)
        for ra, rb in zip(trace_a, trace_b):
            assert abs(ra.lower_bound - rb.lower_bound) < 1e-12
            assert abs(ra.step_estimate - rb.step_estimate) < 1e-12
            assert ra.alarm == rb.alarm
        assert first_alarm_time(trace_a) == first_alarm_time(trace_b)

    def test_srm_step_estimate_is_supervised_mean(self):
        from riskmon.harness import method_config

        stream = generate_stream(
            DriftScenario(schedule=ConstantSchedule(0.4), agreement=0.5,
                          horizon=40, seed=9, n_per_step=3, N_per_step=6)
        )
        cfg = method_config(MonitorConfig.create(), "srm")
        calib = SourceCalibration(0.4, 0.55, 100, 0, 0.0)
        for row, batch in zip(Monitor(calib, cfg).run(stream), stream):
            want = sum(p.true_loss for p in batch.labeled) / batch.n_labeled
            assert row.step_estimate == want


class TestPredictabilityAudit:
    def test_offline_recomputation_is_bitwise(self):
        policy = EtaPolicy(mode="adaptive", window_l=7)
        cfg = MonitorConfig.create(eta_policy=policy)
        calib = SourceCalibration(0.3, 0.45, 100, 1500, 1.0)
        stream = generate_stream(
            DriftScenario(schedule=StepSchedule(20, 0.3, 0.6), agreement=0.8,
                          horizon=60, seed=21, n_per_step=2, N_per_step=5)
        )
        trace = Monitor(calib, cfg).run(stream)
        for i, row in enumerate(trace):
            window = stream[max(0, i - policy.window_l):i]
            labeled_hist = [p for b in window for p in b.labeled]
            unlabeled_hist = [v for b in window for v in b.unlabeled_synth]
            want = eta_adaptive(labeled_hist, unlabeled_hist, policy)
            assert row.eta_t == want, f"eta mismatch at t={row.t}"


class TestFirstAlarmTime:
    def _row(self, t, alarm):
        return BoundTrace(t, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, alarm)

    def test_no_alarm(self):
        assert first_alarm_time([self._row(t, False) for t in (1, 2, 3)]) is None
        assert first_alarm_time([]) is None

    def test_first_of_run(self):
        rows = [self._row(t, t >= 7) for t in range(1, 12)]
        assert first_alarm_time(rows) == 7

    def test_pattern(self):
        flags = [False, False, True, True]
        rows = [self._row(t, a) for t, a in enumerate(flags, start=1)]
        assert first_alarm_time(rows) == 3


class TestUrmCalibrate:
    def test_perfect_proxy(self):
        rng = np.random.default_rng(2)
        losses = rng.random(1000)
        tau, beta0, pfp = urm_calibrate(losses, losses, delta=0.025)
        assert tau == beta0
        # empirical PFP is zero; only the radius remains
        assert pfp == pytest.approx(hoeffding_radius(1000, 0.025), abs=1e-12)

    def test_noisy_proxy_matches_bruteforce_oracle(self):
        # bimodal losses with balanced exceedance classes: the F1-optimal
        # loss threshold sits in the gap, next to the median
        rng = np.random.default_rng(3)
        lo = 0.2 + 0.05 * rng.random(500)
        hi = 0.8 + 0.05 * rng.random(500)
        losses = np.concatenate([lo, hi])
        proxies = np.clip(losses + rng.normal(0.0, 0.005, 1000), 0.0, 1.0)
        tau, beta0, _ = urm_calibrate(proxies, losses, delta=0.025)

        from riskmon.monitors import _threshold_candidates

        taus = _threshold_candidates(losses)
        betas = _threshold_candidates(proxies)
        best = (-1.0, None, None)
        for tc in taus:
            pos = losses > tc
            if not pos.any() or pos.all():
                continue
            for bc in betas:
                pred = proxies > bc
                tp = float(np.sum(pos & pred))
                denom = float(pos.sum() + pred.sum())
                f1 = 2 * tp / denom if denom else 0.0
                key = (f1, tc, bc)
                if key > best:
                    best = key
        assert tau == best[1] and beta0 == best[2]
        median = float(np.median(losses))
        grid_step = float(np.max(np.diff(np.sort(taus))))
        assert abs(tau - median) <= grid_step

    def test_uninformative_proxy(self):
        rng = np.random.default_rng(4)
        losses = rng.random(2000)
        proxies = rng.random(2000)
        _, _, pfp = urm_calibrate(proxies, losses, delta=0.025)
        assert pfp > 0.0

    def test_constant_proxies_fail(self):
        with pytest.raises(CalibrationError):
            urm_calibrate([0.5] * 100, list(np.random.default_rng(5).random(100)))

    def test_length_mismatch(self):
        with pytest.raises(CalibrationError):
            urm_calibrate([0.1, 0.2], [0.1])


class TestUrmStep:
    def _calib(self, tau=0.5, beta0=0.5, pfp=0.05, u0=0.35):
        return UrmCalibration(tau=tau, beta0=beta0, pfp0_ucb=pfp,
                              source_estimate=0.3, source_upper_bound=u0, n0=1000)

    def test_quiet_proxies(self):
        cfg = fixed_config(eta=0.0, eta_max=0.0)
        urm = UrmMonitor(self._calib(), cfg)
        row = urm.step([0.1, 0.2, 0.3])
        assert row.step_estimate == 0.0
        assert row.lower_bound == 0.0  # clipped for reporting
        assert not row.alarm

    def test_full_exceedance_limit(self):
        cfg = fixed_config(eta=0.0, eta_max=0.0, eps_tol=0.01)
        calib = self._calib(u0=0.2)
        urm = UrmMonitor(calib, cfg)
        rows = [urm.step([0.9] * 20) for _ in range(600)]
        # lower bound approaches tau * (1 - pfp0) and crosses the threshold
        assert rows[-1].lower_bound > 0.4
        assert rows[-1].alarm
        ts = [r.t for r in rows]
        assert ts == list(range(1, 601))

    def test_calibrate_urm_splits_budget(self):
        rng = np.random.default_rng(8)
        losses = (rng.random(800) < 0.3).astype(float)
        proxies = np.where(rng.random(800) < 0.9, losses, 1.0 - losses)
        cfg = fixed_config(eta=0.0, eta_max=0.0, delta_s=0.05)
        calib = calibrate_urm(losses, proxies, cfg)
        want_u0 = losses.mean() + hoeffding_radius(800, 0.025)
        assert calib.source_upper_bound == pytest.approx(want_u0, abs=1e-12)
        assert calib.n0 == 800

    def test_empty_proxies_rejected(self):
        urm = UrmMonitor(self._calib(), fixed_config(eta=0.0, eta_max=0.0))
        with pytest.raises(ValueError):
            urm.step([])
