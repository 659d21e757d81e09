import numpy as np
import pytest

import dctomo as dt
from dctomo.geometry import HuCalibration, hu_to_mu, mu_to_hu


def test_hu_scale_anchors():
    cal = HuCalibration(mu_water_per_mm=0.02)
    assert mu_to_hu(0.02, cal) == 0.0
    assert mu_to_hu(0.0, cal) == -1000.0
    assert mu_to_hu(0.04, cal) == 1000.0


def test_hu_round_trip():
    cal = HuCalibration(mu_water_per_mm=0.019)
    hu = np.linspace(-1000.0, 2000.0, 13)
    np.testing.assert_allclose(mu_to_hu(hu_to_mu(hu, cal), cal), hu, atol=1e-9)


def test_calibration_rejects_nonpositive_water():
    with pytest.raises(ValueError):
        HuCalibration(mu_water_per_mm=0.0)


def test_geometry_invariants():
    with pytest.raises(ValueError):
        dt.ScanGeometry(500.0, 600.0, detector_cols=10)  # SDD <= SID
    with pytest.raises(ValueError):
        dt.ScanGeometry(1200.0, 600.0, detector_cols=10, angles_deg=np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        dt.ScanGeometry(1200.0, 600.0, detector_cols=10, detector_rows=2)  # fan mode, rows != 1
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=620, angles_deg=np.arange(0.0, 211.0))
    assert geom.n_views == 211
    assert geom.angular_step_deg == pytest.approx(1.0)
    assert geom.coverage_deg == pytest.approx(211.0)


def test_fov_radius_from_detector_band():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=620, angles_deg=np.arange(0.0, 211.0))
    half = 150.0  # 300 columns of 1 mm
    expected = 600.0 * np.sin(np.arctan2(half, 1200.0))
    assert geom.fov_radius_mm(300) == pytest.approx(expected)
    assert geom.fov_radius_mm() > geom.fov_radius_mm(300)


def test_grid_and_volume_invariants():
    with pytest.raises(ValueError):
        dt.ImageGrid(dims=(0, 4, 1))
    with pytest.raises(ValueError):
        dt.ImageGrid(dims=(4, 4, 1), spacing_mm=(1.0, 0.0, 1.0))
    grid = dt.ImageGrid.centered(4, 6, 2, (1.0, 2.0, 3.0))
    assert grid.shape == (2, 6, 4)
    assert grid.axis_coords(0)[0] == pytest.approx(-1.5)
    assert grid.axis_coords(1).mean() == pytest.approx(0.0)
    with pytest.raises(ValueError):
        dt.Volume(grid, np.zeros((2, 6, 5)))
    bad = np.zeros(grid.shape)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        dt.Volume(grid, bad)


def test_sinogram_shape_checks():
    geom = dt.ScanGeometry(400.0, 200.0, detector_cols=8, angles_deg=np.arange(0.0, 90.0, 30.0))
    sino = dt.Sinogram.zeros(geom)
    assert sino.values.shape == (3, 1, 8)
    with pytest.raises(ValueError):
        dt.Sinogram(geom, np.zeros((3, 1, 9)), sino.mask)


def test_impact_parameter_sign_and_magnitude():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=5, pixel_size_mm=(100.0, 1.0),
                           angles_deg=np.array([0.0]))
    s = geom.impact_parameter_mm()
    assert s[2] == pytest.approx(0.0)
    assert s[4] > 0 > s[0]
    assert abs(s[4]) == pytest.approx(600.0 * 200.0 / np.hypot(1200.0, 200.0))
