import math

import numpy as np
import pytest

from nljdetect.array_model import ScenarioConfig, SnapshotSet, draw_scenario
from nljdetect.detectors import (
    DetectionReport,
    DetectorKind,
    calibrate_threshold,
    detector_statistic,
    log_pdf,
    sc_lrt,
    sdc_lrt,
    spice_estimate,
    spice_lrt,
    threshold_from_statistics,
    trial_seed,
)
from nljdetect.estimator import estimate_known_sigma, matched_filter_init, GridStats


class TestLogPdf:
    def test_unit_noise_no_jammers(self, dict2, snap2):
        S = snap2.sample_cov
        expected = -64 * 32 * np.log(np.pi) - np.trace(S).real
        assert log_pdf(S, 1.0, np.zeros(23), dict2, 64) == pytest.approx(expected, rel=1e-12)

    def test_generic_path_matches_zero_shortcut(self, dict2, snap2):
        S = snap2.sample_cov
        tiny = np.full(23, 1e-300)
        assert log_pdf(S, 2.0, tiny, dict2, 64) == pytest.approx(log_pdf(S, 2.0, 0.0, dict2, 64), rel=1e-12)

    def test_true_parameters_beat_null(self, scenario2, dict2, grid2):
        d = np.zeros(23)
        d[[grid2.index_of(a) for a in scenario2.angles_deg]] = scenario2.powers
        wins = 0
        for seed in range(1000):
            S = draw_scenario(scenario2, seed).sample_cov
            wins += log_pdf(S, 2.0, d, dict2, 64) > log_pdf(S, 2.0, 0.0, dict2, 64)
        assert wins >= 990

    def test_rejects_nonpositive_noise(self, dict2, snap2):
        with pytest.raises(ValueError):
            log_pdf(snap2.sample_cov, 0.0, np.zeros(23), dict2, 64)


class TestLrts:
    def test_report_decision(self, dict2, snap2):
        rep = sc_lrt(snap2, 2.0, dict2, threshold=10.0)
        assert isinstance(rep, DetectionReport)
        assert rep.decision == (rep.statistic > 10.0)
        assert sc_lrt(snap2, 2.0, dict2).decision is False

    def test_zero_estimate_gives_zero_statistic(self, scenario2, dict2):
        h0 = scenario2.without_jammers()
        seen = 0
        for seed in range(40):
            rep = sc_lrt(draw_scenario(h0, seed), 2.0, dict2)
            if not np.any(rep.estimate.d):
                assert rep.statistic == 0.0
                seen += 1
            assert rep.statistic >= -1e-9
        assert seen > 0

    def test_sdc_zero_estimate_is_zero(self, scenario2, dict2):
        h0 = scenario2.without_jammers()
        for seed in range(30):
            rep = sdc_lrt(draw_scenario(h0, seed), dict2)
            if not np.any(rep.estimate.d):
                assert abs(rep.statistic) < 1e-9

    def test_sc_beats_clamped_initialisation(self, scenario2, dict2):
        for seed in range(20):
            z = draw_scenario(scenario2.with_jnr(-2.0), seed)
            S = z.sample_cov
            rep = sc_lrt(z, 2.0, dict2)
            supp = rep.estimate.d > 0
            if not supp.any():
                continue
            d0 = np.where(supp, matched_filter_init(GridStats(S, dict2, 64), 2.0, 1e-6), 0.0)
            stat0 = log_pdf(S, 2.0, d0, dict2, 64) - log_pdf(S, 2.0, 0.0, dict2, 64)
            assert rep.statistic >= stat0 - 1e-9 * abs(stat0)

    @pytest.mark.parametrize("kind", list(DetectorKind))
    def test_depends_on_data_only_through_s(self, kind, scenario2, dict2, rng):
        z = draw_scenario(scenario2.with_jnr(0.0), 3)
        perm = SnapshotSet(np.ascontiguousarray(z.data[:, rng.permutation(64)]))
        a, _ = detector_statistic(kind, z, dict2, 2.0)
        b, _ = detector_statistic(kind, perm, dict2, 2.0)
        assert b == pytest.approx(a, rel=1e-6, abs=1e-6)

    def test_reject_small_noise_estimate(self, dict2, snap2):
        with pytest.raises(ValueError):
            sc_lrt(snap2, 0.5, dict2)

    def test_parse(self):
        assert DetectorKind.parse("SDC-LRT") is DetectorKind.SDC_LRT
        with pytest.raises(ValueError):
            DetectorKind.parse("glrt")


class TestSpice:
    def test_strong_single_jammer(self, grid2, dict2, rng):
        for t in range(100):
            angle = float(rng.choice(grid2.angles_deg))
            sc = ScenarioConfig(grid2, ((angle, 30.0),))
            est = spice_estimate(draw_scenario(sc, t).sample_cov, dict2, 64)
            assert int(np.argmax(est.d)) == grid2.index_of(angle)

    def test_h0_small_interference(self, scenario2, dict2):
        h0 = scenario2.without_jammers()
        ratios = []
        for seed in range(100):
            est = spice_estimate(draw_scenario(h0, seed).sample_cov, dict2, 64)
            ratios.append(est.d.sum() / (est.noise_power * 32))
        # SPICE is not sparse under H0: individual trials reach ~10%, the average stays below 5%
        assert np.mean(ratios) < 0.05
        assert np.max(ratios) < 0.15

    def test_fit_criterion_monotone(self, scenario2, dict2):
        for seed in range(10):
            trace = []
            est = spice_estimate(draw_scenario(scenario2, seed).sample_cov, dict2, 64, criterion_trace=trace)
            assert np.all(np.diff(trace) <= 1e-9 * abs(trace[0]))
            assert np.all(est.d >= 0) and est.noise_power > 0

    def test_singular_sample_covariance(self, dict2):
        z = draw_scenario(ScenarioConfig(dict2.grid, (), n_snapshots=8), 0)
        with pytest.raises(np.linalg.LinAlgError):
            spice_estimate(z.sample_cov, dict2, 8)

    def test_spice_lrt_report(self, dict2, snap2):
        rep = spice_lrt(snap2, dict2, threshold=0.0)
        assert rep.decision == (rep.statistic > 0.0)


class TestThreshold:
    def test_order_statistic(self):
        x = np.arange(1, 10_001, dtype=float)[::-1]
        assert threshold_from_statistics(x, 0.01) == 9900.0

    def test_median_of_symmetric_toy(self, rng):
        x = rng.standard_normal(10_001)
        assert threshold_from_statistics(x, 0.5 - 1e-12) == pytest.approx(np.median(x), abs=0.01)

    def test_rejects(self):
        with pytest.raises(ValueError):
            threshold_from_statistics(np.zeros(50), 0.01)
        with pytest.raises(ValueError):
            threshold_from_statistics(np.zeros(50), 0.6)

    def test_calibration_reproducible(self, scenario2):
        a = calibrate_threshold(DetectorKind.SPICE_LRT, scenario2, 0.01, 100, 17)
        b = calibrate_threshold(DetectorKind.SPICE_LRT, scenario2, 0.01, 100, 17)
        assert a == b
        with pytest.raises(ValueError):
            calibrate_threshold(DetectorKind.SC_LRT, scenario2, 0.01, 50, 17)

    def test_trial_seed_is_counter_based(self):
        a = np.random.default_rng(trial_seed(3, 1, 2)).integers(1 << 30)
        b = np.random.default_rng(trial_seed(3, 1, 2)).integers(1 << 30)
        c = np.random.default_rng(trial_seed(3, 2, 1)).integers(1 << 30)
        assert a == b != c
