import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import greedy_match_oracle, hausdorff_oracle
from nljdetect.array_model import AngleGrid, ScenarioConfig
from nljdetect.detectors import spice_estimate
from nljdetect.postprocess import (
    FusedReport,
    aoa_rms_accumulate,
    calibrate_ghost_threshold,
    count_missed_ghosts,
    fuse_peaks,
    ghost_threshold_from_maxima,
    hausdorff,
    off_support_max,
    trial_metrics,
)

GRID = AngleGrid.from_range(-22, 22, 2)


class TestFusion:
    def test_singleton(self):
        d = np.zeros(23)
        d[7] = 3.5
        rep = fuse_peaks(d, GRID)
        assert rep.detections == ((GRID.angles_deg[7], 3.5),)
        assert rep.raw_support == (7,)

    @pytest.mark.parametrize("mode,i", [("partition", 3), ("sliding", 4), ("sliding", 10)])
    def test_adjacent_spillover(self, mode, i):
        d = np.zeros(23)
        d[i], d[i + 1] = 1.0, 3.0
        th = GRID.angles_deg[i]
        rep = fuse_peaks(d, GRID, mode=mode)
        assert len(rep) == 1
        angle, power = rep.detections[0]
        assert angle == pytest.approx((1.0 * th + 3.0 * (th + 2.0)) / 4.0)
        assert power == 4.0

    def test_partition_splits_across_block_boundary(self):
        d = np.zeros(23)
        d[5], d[6] = 1.0, 1.0
        assert len(fuse_peaks(d, GRID)) == 2
        assert len(fuse_peaks(d, GRID, mode="sliding")) == 1

    @pytest.mark.parametrize("mode", ["partition", "sliding"])
    @pytest.mark.parametrize("gap", [3, 4, 9])
    def test_separated_entries(self, mode, gap):
        d = np.zeros(23)
        d[2], d[2 + gap] = 1.0, 2.0
        rep = fuse_peaks(d, GRID, mode=mode)
        assert len(rep) == 2

    def test_tau_zeroes_small_entries(self):
        d = np.zeros(23)
        d[[1, 10, 20]] = [0.1, 5.0, 0.5]
        rep = fuse_peaks(d, GRID, tau=0.5)
        assert rep.raw_support == (10, 20)
        assert fuse_peaks(d, GRID, tau=6.0).detections == ()

    def test_rejects(self):
        d = np.zeros(23)
        with pytest.raises(ValueError):
            fuse_peaks(d, GRID, subset_cardinality=2)
        with pytest.raises(ValueError):
            fuse_peaks(d, GRID, tau=-1.0)
        with pytest.raises(ValueError):
            fuse_peaks(d, GRID, mode="cluster")
        with pytest.raises(ValueError):
            fuse_peaks(np.zeros(5), GRID)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=23, max_size=23), st.floats(0, 5),
           st.sampled_from(["partition", "sliding"]), st.sampled_from([1, 3, 5]))
    def test_power_conservation_and_order(self, values, tau, mode, card):
        d = np.array(values)
        rep = fuse_peaks(d, GRID, subset_cardinality=card, tau=tau, mode=mode)
        kept = d[(d >= tau) & (d > 0)]
        assert rep.powers.sum() == pytest.approx(kept.sum(), rel=1e-12, abs=1e-300)
        assert np.all(np.diff(rep.angles) > 0)
        for angle in rep.angles:
            assert GRID.angles_deg[0] <= angle <= GRID.angles_deg[-1]


class TestHausdorff:
    def test_examples(self):
        assert hausdorff([-10, -4, 8], [-10, -4, 8]) == 0.0
        assert hausdorff([-10, 8], [-10, 9]) == 1.0

    def test_against_oracle(self, rng):
        for _ in range(200):
            x, y = rng.uniform(-22, 22, 3), rng.uniform(-22, 22, 3)
            assert hausdorff(x, y) == pytest.approx(hausdorff_oracle(x, y))
            assert hausdorff(x, y) == hausdorff(y, x)

    def test_zero_iff_equal_as_sets(self):
        assert hausdorff([1, 1, 2], [2, 1]) == 0.0
        assert hausdorff([1, 2], [1, 2.5]) > 0

    def test_empty(self):
        with pytest.raises(ValueError):
            hausdorff([], [1.0])


class TestMissedGhosts:
    def test_examples(self):
        truth = [-10, -4, 8]
        assert count_missed_ghosts(truth, [-10, -4, 8], 3.0) == (0, 0)
        assert count_missed_ghosts(truth, [], 3.0) == (3, 0)
        assert count_missed_ghosts(truth, [-10.5, -4, 8, 18], 3.0) == (0, 1)
        assert count_missed_ghosts(truth, FusedReport(((8.0, 1.0),)), 3.0) == (2, 0)

    def test_one_detection_cannot_match_two_truths(self):
        assert count_missed_ghosts([0.0, 2.0], [1.0], 3.0) == (1, 0)

    def test_against_oracle(self, rng):
        for _ in range(300):
            truth = list(rng.integers(-11, 12, rng.integers(0, 5)) * 2.0)
            det = list(rng.integers(-11, 12, rng.integers(0, 6)) * 2.0 + rng.uniform(-1, 1))
            missed, ghosts = count_missed_ghosts(truth, det, 3.0)
            assert (missed, ghosts) == greedy_match_oracle(truth, det, 3.0)
            matched = len(truth) - missed
            assert ghosts + matched == len(det)

    def test_rejects_tol(self):
        with pytest.raises(ValueError):
            count_missed_ghosts([1.0], [1.0], 0.0)


class TestAoa:
    def test_examples(self):
        assert aoa_rms_accumulate([8.0], [8.0]).tolist() == [0.0]
        assert np.sqrt(aoa_rms_accumulate([8.5], [8.0, 14.0])) == pytest.approx([0.5])

    def test_empty(self):
        with pytest.raises(ValueError):
            aoa_rms_accumulate([1.0], [])


class TestTrialMetrics:
    def test_perfect(self):
        rep = FusedReport(((-10.0, 10.0), (-4.0, 10.0), (8.0, 10.0)))
        m = trial_metrics([-10, -4, 8], rep, GRID)
        assert (m.hausdorff_deg, m.n_missed, m.n_ghosts, m.declared_order) == (0.0, 0, 0, 3)
        assert m.aoa_errors_deg == [0.0, 0.0, 0.0]

    def test_empty_declaration_penalty(self):
        m = trial_metrics([-10, -4, 8], FusedReport(()), GRID)
        assert m.hausdorff_deg == 44.0
        assert (m.n_missed, m.n_ghosts, m.declared_order) == (3, 0, 0)
        assert m.aoa_errors_deg == []

    def test_default_tolerance(self):
        rep = FusedReport(((11.0, 1.0),))
        assert trial_metrics([8.0], rep, GRID).n_missed == 0
        assert trial_metrics([8.0], rep, AngleGrid.from_range(-22, 22, 1)).n_missed == 1


class TestGhostThreshold:
    def test_off_support_max(self):
        d = np.zeros(23)
        d[[5, 6, 12, 20]] = [9.0, 2.0, 0.7, 0.3]
        assert off_support_max(d, GRID, [-12.0]) == 0.7
        assert off_support_max(d, GRID, [-12.0, 2.0, 18.0]) == 0.0

    def test_smallest_tau(self):
        maxima = np.arange(1, 1001, dtype=float)
        tau = ghost_threshold_from_maxima(maxima, 1e-3)
        assert np.sum(maxima >= tau) == 1
        assert np.sum(maxima >= np.nextafter(tau, 0)) == 2

    def test_degenerate_zero(self):
        assert ghost_threshold_from_maxima(np.zeros(1000), 1e-3) == 0.0

    def test_rejects(self):
        with pytest.raises(ValueError):
            ghost_threshold_from_maxima(np.ones(500), 1e-3)
        with pytest.raises(ValueError):
            ghost_threshold_from_maxima(np.ones(500), 0.2)

    def test_validation_band_on_fresh_trials(self, rng):
        # off-support maxima from a cheap proxy estimator: exponential tails
        calib = rng.exponential(size=10_000)
        tau = ghost_threshold_from_maxima(calib, 1e-3)
        fresh = rng.exponential(size=10_000)
        assert np.mean(fresh >= tau) <= 2e-3

    def test_calibration_with_estimator(self):
        grid = AngleGrid.from_range(-22, 22, 3)
        sc = ScenarioConfig(grid, ((-10.0, 10.0), (-4.0, 10.0), (8.0, 10.0)))
        D = sc.dictionary()
        est = lambda z: spice_estimate(z.sample_cov, D, z.n_snapshots).d
        a = calibrate_ghost_threshold(sc, 0.01, 200, 4, est)
        b = calibrate_ghost_threshold(sc, 0.01, 200, 4, est)
        assert a == b > 0
        with pytest.raises(ValueError):
            calibrate_ghost_threshold(sc, 1e-3, 200, 4, est)

    def test_true_support_only_estimator(self):
        sc = ScenarioConfig(GRID, ((-10.0, 10.0),))

        def est(z):
            d = np.zeros(23)
            d[GRID.index_of(-10.0)] = 1.0
            return d

        assert calibrate_ghost_threshold(sc, 0.01, 100, 0, est) == 0.0
