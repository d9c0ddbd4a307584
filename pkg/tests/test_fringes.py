import numpy as np
import pytest

from ionherald import polarization as pol
from ionherald.errors import DataError
from ionherald.fringes import (FringeScan, ScanPoint, fit_fringe, read_scan,
                               subtract_background, write_scan)


def model_scan(angles, amplitude, offset, theta0=0.0, basis=pol.RL,
               duration=3600.0, jitter=None, rng=None):
    pts = []
    for th in angles:
        y = offset + amplitude * np.sin(np.radians(2 * (th - theta0))) ** 2
        if jitter is not None:
            y = max(0.0, y + rng.normal(0.0, jitter))
        pts.append(ScanPoint(th, y, 0.0, duration))
    return FringeScan(basis, tuple(pts))


ANGLES = (0.0, 10.0, 25.0, 40.0, 55.0, 70.0, 85.0)


class TestFringeScanInvariants:
    def test_needs_four_points(self):
        with pytest.raises(DataError):
            FringeScan(pol.RL, tuple(
                ScanPoint(a, 1.0, 0.0, 1.0) for a in (0.0, 10.0, 20.0)))

    def test_angles_distinct_modulo_period(self):
        with pytest.raises(DataError):
            FringeScan(pol.RL, tuple(
                ScanPoint(a, 1.0, 0.0, 1.0)
                for a in (0.0, 10.0, 20.0, 90.0)))   # 90 == 0 mod 90

    def test_negative_counts_rejected(self):
        with pytest.raises(DataError):
            ScanPoint(0.0, -1.0, 0.0, 1.0)


class TestFitExactRecovery:
    def test_noiseless_recovery(self):
        scan = model_scan(ANGLES, amplitude=20.0, offset=10.0)
        fit = fit_fringe(scan, 0.0)
        assert fit.amplitude == pytest.approx(20.0, rel=1e-9)
        assert fit.offset == pytest.approx(10.0, rel=1e-9)
        assert fit.visibility == pytest.approx(0.5, rel=1e-9)
        assert fit.chi2_per_dof < 1e-12

    def test_residuals_below_1e9_relative(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            amp = rng.uniform(5, 500)
            off = rng.uniform(0, 100)
            th0 = rng.uniform(-45, 45)
            scan = model_scan(ANGLES, amp, off, th0)
            fit = fit_fringe(scan, th0)
            model = fit.model(scan.angles)
            resid = np.abs(model - scan.counts) / np.maximum(scan.counts, 1.0)
            assert np.max(resid) < 1e-9

    def test_scale_equivariance(self):
        scan = model_scan(ANGLES, amplitude=35.0, offset=12.0)
        fit1 = fit_fringe(scan, 0.0)
        for k in (2.0, 17.5, 1000.0):
            scaled = FringeScan(scan.basis, tuple(
                ScanPoint(p.hwp_angle_deg, p.coincidences * k, p.background,
                          p.duration_s) for p in scan.points))
            fit2 = fit_fringe(scaled, 0.0)
            assert fit2.amplitude == pytest.approx(k * fit1.amplitude,
                                                   rel=1e-6)
            assert fit2.offset == pytest.approx(k * fit1.offset, rel=1e-6)
            assert fit2.visibility == pytest.approx(fit1.visibility,
                                                    abs=1e-6)

    def test_fitted_minimum_never_negative(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            scan = model_scan(ANGLES, amplitude=8.0, offset=0.3,
                              jitter=3.0, rng=rng)
            fit = fit_fringe(scan, 0.0)
            assert fit.offset >= 0.0
            assert fit.amplitude >= 0.0
            assert 0.0 <= fit.visibility <= 1.0


class TestFitErrors:
    def test_all_zero_counts(self):
        scan = FringeScan(pol.RL, tuple(
            ScanPoint(a, 0.0, 0.0, 1.0) for a in ANGLES))
        with pytest.raises(DataError, match="degenerate"):
            fit_fringe(scan, 0.0)

    def test_rank_error_on_constant_regressor(self):
        # angles clustered at the fringe extremum: sin^2 is stationary there,
        # so the regressor collapses to a single value
        angles = (44.999990, 44.999995, 45.000005, 45.000010)
        scan = FringeScan(pol.RL, tuple(
            ScanPoint(a, 5.0, 0.0, 1.0) for a in angles))
        with pytest.raises(DataError, match="rank"):
            fit_fringe(scan, 0.0)


class TestSubtractBackground:
    def test_paper_point(self):
        scan = FringeScan(pol.RL, (
            ScanPoint(0.0, 73.0, 15.0, 3600.0),
            ScanPoint(15.0, 40.0, 15.0, 3600.0),
            ScanPoint(30.0, 20.0, 15.0, 3600.0),
            ScanPoint(45.0, 16.0, 15.0, 3600.0)))
        out = subtract_background(scan)
        assert out.points[0].coincidences == pytest.approx(58.0)
        assert out.points[0].sigma == pytest.approx(np.sqrt(73.0 + 15.0))

    def test_zero_point(self):
        scan = FringeScan(pol.RL, tuple(
            ScanPoint(a, 0.0, 0.0, 1.0) for a in ANGLES))
        out = subtract_background(scan)
        assert out.points[0].coincidences == 0.0

    def test_clamped_at_zero_keeps_error(self):
        scan = FringeScan(pol.RL, (
            ScanPoint(0.0, 5.0, 8.0, 1.0),
            ScanPoint(10.0, 5.0, 8.0, 1.0),
            ScanPoint(20.0, 5.0, 8.0, 1.0),
            ScanPoint(30.0, 5.0, 8.0, 1.0)))
        out = subtract_background(scan)
        assert out.points[0].coincidences == 0.0
        assert out.points[0].sigma == pytest.approx(np.sqrt(13.0))

    def test_ideal_singlet_visibility_goes_to_one(self):
        # after subtracting a flat background the fringe becomes ideal
        bg = 12.0
        pts = []
        for th in ANGLES:
            y = bg + 50.0 * np.sin(np.radians(2 * th)) ** 2
            pts.append(ScanPoint(th, y, bg, 3600.0))
        out = subtract_background(FringeScan(pol.RL, tuple(pts)))
        fit = fit_fringe(out, 0.0)
        assert fit.visibility == pytest.approx(1.0, abs=1e-9)


class TestScanIO:
    def test_round_trip(self, tmp_path):
        scan = model_scan(ANGLES, 20.0, 5.0)
        scan = subtract_background(scan)
        path = tmp_path / "scan.txt"
        write_scan(scan, path)
        back = read_scan(path)
        assert back.basis.label == scan.basis.label
        for p, q in zip(back.points, scan.points):
            assert p.hwp_angle_deg == q.hwp_angle_deg
            assert p.coincidences == pytest.approx(q.coincidences)
            assert p.sigma == pytest.approx(q.sigma)
